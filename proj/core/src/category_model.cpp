#include "actseg/category_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <spdlog/spdlog.h>

#include "actseg/archive.hpp"
#include "actseg/error.hpp"

namespace actseg {

using nlohmann::json;

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

GaussianCluster GaussianCluster::make(Eigen::VectorXd mean, Eigen::MatrixXd covariance, double weight) {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
        throw Error(ErrorCode::ShapeMismatch, "covariance shape does not match mean");
    GaussianCluster c;
    c.mean_ = std::move(mean);
    c.covariance_ = 0.5 * (covariance + covariance.transpose());
    c.weight_ = weight;
    Eigen::LLT<Eigen::MatrixXd> llt(c.covariance_);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "covariance is not positive definite");
    c.chol_lower_ = llt.matrixL();
    const auto diag = c.chol_lower_.diagonal();
    if ((diag.array() <= 0.0).any() || !diag.allFinite())
        throw Error(ErrorCode::SingularCovariance, "covariance is not positive definite");
    c.log_det_ = 2.0 * diag.array().log().sum();
    return c;
}

double GaussianCluster::log_density(const Eigen::VectorXd& z) const {
    if (z.size() != mean_.size()) throw Error(ErrorCode::ShapeMismatch, "embedding dimension mismatch");
    const Eigen::VectorXd diff = z - mean_;
    const Eigen::VectorXd y = chol_lower_.triangularView<Eigen::Lower>().solve(diff);
    return -0.5 * (static_cast<double>(dim()) * kLog2Pi + log_det_ + y.squaredNorm());
}

Eigen::VectorXd GaussianCluster::log_density_rows(const Eigen::MatrixXd& points) const {
    Eigen::MatrixXd diff = (points.rowwise() - mean_.transpose()).transpose();  // D x N
    chol_lower_.triangularView<Eigen::Lower>().solveInPlace(diff);
    const Eigen::VectorXd maha = diff.colwise().squaredNorm().transpose();
    return (-0.5 * (maha.array() + static_cast<double>(dim()) * kLog2Pi + log_det_)).matrix();
}

double cluster_log_likelihood(const EmbeddingVector& z, const GaussianCluster& c) { return c.log_density(z); }
double cluster_likelihood(const EmbeddingVector& z, const GaussianCluster& c) { return std::exp(c.log_density(z)); }

void EmConfig::validate() const {
    if (!(reg_covar >= 0.0)) throw Error(ErrorCode::InvalidArgument, "reg_covar must be >= 0");
    if (restarts < 1 || max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "restarts/iterations must be >= 1");
    if (max_clusters < 2) throw Error(ErrorCode::InvalidArgument, "max_clusters must be >= 2");
}

void to_json(json& j, const EmConfig& c) {
    j = {{"reg_covar", c.reg_covar},   {"restarts", c.restarts},       {"max_iterations", c.max_iterations},
         {"tolerance", c.tolerance},   {"seed", c.seed},               {"max_clusters", c.max_clusters},
         {"full_curve", c.full_curve}, {"weighted_classification", c.weighted_classification}};
}

void from_json(const json& j, EmConfig& c) {
    c.reg_covar = j.value("reg_covar", c.reg_covar);
    c.restarts = j.value("restarts", c.restarts);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.seed = j.value("seed", c.seed);
    c.max_clusters = j.value("max_clusters", c.max_clusters);
    c.full_curve = j.value("full_curve", c.full_curve);
    c.weighted_classification = j.value("weighted_classification", c.weighted_classification);
}

Eigen::MatrixXd stack_rows(std::span<const EmbeddingVector> points) {
    if (points.empty()) return {};
    const auto dim = points.front().size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(points.size()), dim);
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != dim) throw Error(ErrorCode::ShapeMismatch, "embedding dimensions differ");
        x.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    }
    return x;
}

namespace {

// Weighted log densities, N x m.
Eigen::MatrixXd weighted_log_densities(const std::vector<GaussianCluster>& clusters, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(clusters.size()));
    for (std::size_t k = 0; k < clusters.size(); ++k)
        out.col(static_cast<Eigen::Index>(k)) =
            clusters[k].log_density_rows(x).array() + std::log(clusters[k].weight());
    return out;
}

// Row-wise log-sum-exp; also turns `logp` into responsibilities when asked.
double log_likelihood(Eigen::MatrixXd& logp, bool to_responsibilities) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
        const double mx = logp.row(i).maxCoeff();
        const double lse = mx + std::log((logp.row(i).array() - mx).exp().sum());
        total += lse;
        if (to_responsibilities) logp.row(i) = (logp.row(i).array() - lse).exp();
    }
    return total;
}

std::vector<GaussianCluster> m_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp, double reg) {
    const Eigen::Index n = x.rows();
    std::vector<GaussianCluster> clusters;
    for (Eigen::Index k = 0; k < resp.cols(); ++k) {
        const double nk = resp.col(k).sum();
        if (!(nk > 1e-10 * static_cast<double>(n)))
            throw Error(ErrorCode::DegenerateCluster, "a cluster lost all of its points");
        const Eigen::VectorXd mean = (x.transpose() * resp.col(k)) / nk;
        const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
        Eigen::MatrixXd cov = (centered.transpose() * resp.col(k).asDiagonal() * centered) / nk;
        cov.diagonal().array() += reg;
        clusters.push_back(GaussianCluster::make(mean, cov, nk / static_cast<double>(n)));
    }
    return clusters;
}

Eigen::MatrixXd kmeanspp_responsibilities(const Eigen::MatrixXd& x, int m, Rng& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> centers;
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.push_back(first(rng));
    Eigen::VectorXd d2 = (x.rowwise() - x.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < m) {
        const double total = d2.sum();
        Eigen::Index next = 0;
        if (total <= 0.0) {
            next = first(rng);
        } else {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            for (next = 0; next < n - 1; ++next) {
                target -= d2[next];
                if (target <= 0.0) break;
            }
        }
        centers.push_back(next);
        d2 = d2.cwiseMin((x.rowwise() - x.row(next)).rowwise().squaredNorm());
    }
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < m; ++k) {
            const double d = (x.row(i) - x.row(centers[static_cast<std::size_t>(k)])).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        resp(i, best) = 1.0;
    }
    return resp;
}

struct RunResult {
    std::vector<GaussianCluster> clusters;
    std::vector<double> trace;
    double rejected_drop = 0.0;
};

RunResult run_em(const Eigen::MatrixXd& x, int m, const EmConfig& cfg, Rng& rng) {
    RunResult run;
    run.clusters = m_step(x, kmeanspp_responsibilities(x, m, rng), cfg.reg_covar);
    Eigen::MatrixXd resp = weighted_log_densities(run.clusters, x);
    double ll = log_likelihood(resp, true);
    run.trace.push_back(ll);
    for (int it = 1; it < cfg.max_iterations; ++it) {
        std::vector<GaussianCluster> next;
        try {
            next = m_step(x, resp, cfg.reg_covar);
        } catch (const Error&) {
            break;
        }
        Eigen::MatrixXd next_resp = weighted_log_densities(next, x);
        const double next_ll = log_likelihood(next_resp, true);
        // The covariance floor can cost a few ulps near the optimum; a decrease ends the run.
        if (!(next_ll >= ll)) {
            run.rejected_drop = std::isnan(next_ll) ? std::numeric_limits<double>::infinity() : ll - next_ll;
            break;
        }
        run.clusters = std::move(next);
        resp = std::move(next_resp);
        run.trace.push_back(next_ll);
        const bool converged = next_ll - ll < cfg.tolerance * std::abs(ll);
        ll = next_ll;
        if (converged) break;
    }
    return run;
}

}  // namespace

double mixture_log_likelihood(const CategoryModel& model, std::span<const EmbeddingVector> points) {
    if (points.empty()) throw Error(ErrorCode::InvalidArgument, "no points");
    Eigen::MatrixXd logp = weighted_log_densities(model.clusters, stack_rows(points));
    return log_likelihood(logp, false);
}

CategoryModel fit_em(std::span<const EmbeddingVector> points, int m, const EmConfig& cfg) {
    cfg.validate();
    if (m < 1) throw Error(ErrorCode::InvalidArgument, "m must be >= 1");
    if (points.empty()) throw Error(ErrorCode::InsufficientData, "no points");
    const auto dim = static_cast<std::size_t>(points.front().size());
    if (points.size() < static_cast<std::size_t>(m) * (dim + 1))
        throw Error(ErrorCode::InsufficientData, "need at least m*(D+1) = " + std::to_string(m * (dim + 1)) +
                                                     " points, have " + std::to_string(points.size()));
    const Eigen::MatrixXd x = stack_rows(points);

    Rng rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(m));
    CategoryModel best;
    double best_ll = -std::numeric_limits<double>::infinity();
    bool best_collapsed = true;
    int used = 0;
    for (int r = 0; r < cfg.restarts; ++r) {
        RunResult run;
        try {
            run = run_em(x, m, cfg, rng);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateCluster && e.code() != ErrorCode::SingularCovariance) throw;
            continue;
        }
        ++used;
        best.fit_stats.rejected_drop = std::max(best.fit_stats.rejected_drop, run.rejected_drop);
        const double ll = run.trace.back();
        // A cluster holding fewer than D+1 points has a rank-deficient sample
        // covariance and only the regularizer keeps its density finite. Such
        // runs lose to any run without one.
        const bool collapsed = std::any_of(run.clusters.begin(), run.clusters.end(), [&](const GaussianCluster& c) {
            return c.weight() * static_cast<double>(points.size()) < static_cast<double>(dim + 1);
        });
        if ((best_collapsed && !collapsed) || (collapsed == best_collapsed && ll > best_ll)) {
            best_ll = ll;
            best_collapsed = collapsed;
            best.clusters = std::move(run.clusters);
            best.fit_stats.log_likelihood_trace = std::move(run.trace);
        }
    }
    if (used == 0) throw Error(ErrorCode::DegenerateCluster, "every EM restart collapsed a cluster");
    best.fit_stats.log_likelihood = best_ll;
    best.fit_stats.iterations = static_cast<int>(best.fit_stats.log_likelihood_trace.size());
    best.fit_stats.restarts_used = used;
    best.fit_stats.bic = bic_value(best_ll, m, static_cast<int>(dim), points.size());
    return best;
}

long long free_parameter_count(int m, int dim) {
    const long long d = dim;
    return static_cast<long long>(m) * (d + d * (d + 1) / 2) + (m - 1);
}

double bic_value(double log_likelihood, int m, int dim, std::size_t n) {
    return -2.0 * log_likelihood + static_cast<double>(free_parameter_count(m, dim)) * std::log(static_cast<double>(n));
}

double bic(const CategoryModel& model, std::span<const EmbeddingVector> points) {
    return bic_value(mixture_log_likelihood(model, points), model.m(), model.dim(), points.size());
}

std::pair<int, bool> first_local_minimum(std::span<const double> bic_values, int first_m) {
    if (bic_values.empty()) throw Error(ErrorCode::InvalidArgument, "empty BIC sequence");
    const std::size_t n = bic_values.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const bool below_previous = i == 0 || bic_values[i] < bic_values[i - 1];
        if (below_previous && bic_values[i] <= bic_values[i + 1]) return {first_m + static_cast<int>(i), false};
    }
    const bool monotone = n == 1 || bic_values[n - 1] < bic_values[n - 2];
    return {first_m + static_cast<int>(n - 1), monotone};
}

CategoryModel select_model(std::span<const EmbeddingVector> points, const EmConfig& cfg, const FitFunction& fit) {
    cfg.validate();
    if (points.empty()) throw Error(ErrorCode::InsufficientData, "no points");
    const int dim = static_cast<int>(points.front().size());
    const int feasible = static_cast<int>(points.size() / static_cast<std::size_t>(dim + 1));
    const int m_max = std::min(cfg.max_clusters, feasible);
    if (m_max < 2)
        throw Error(ErrorCode::InsufficientData, "need at least 2*(D+1) = " + std::to_string(2 * (dim + 1)) +
                                                     " points for model selection");
    if (m_max < cfg.max_clusters)
        spdlog::info("category model: sweep capped at m={} by {} points in D={}", m_max, points.size(), dim);

    std::vector<CategoryModel> models;
    std::vector<double> curve;
    for (int m = 2; m <= m_max; ++m) {
        models.push_back(fit(points, m, cfg));
        curve.push_back(models.back().fit_stats.bic);
        if (!cfg.full_curve && curve.size() >= 2) {
            const auto [chosen, monotone] = first_local_minimum(curve, 2);
            if (!monotone && chosen < m) break;
        }
    }
    const auto [chosen, monotone] = first_local_minimum(curve, 2);
    if (monotone && curve.size() > 1)
        spdlog::warn("category model: BIC decreases monotonically up to m={}, using it", chosen);

    CategoryModel result = std::move(models[static_cast<std::size_t>(chosen - 2)]);
    result.fit_stats.bic_curve.clear();
    for (std::size_t i = 0; i < curve.size(); ++i) result.fit_stats.bic_curve.emplace_back(static_cast<int>(i) + 2, curve[i]);
    return result;
}

std::string category_model_name(int version) { return "categories_v" + std::to_string(version) + ".gmm"; }

void save_category_model(const CategoryModel& model, const std::filesystem::path& path) {
    Archive archive;
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> covs;
    for (const auto& c : model.clusters) {
        weights.push_back(c.weight());
        means.insert(means.end(), c.mean().data(), c.mean().data() + c.mean().size());
        covs.insert(covs.end(), c.covariance().data(), c.covariance().data() + c.covariance().size());
    }
    json curve = json::array();
    for (const auto& [m, b] : model.fit_stats.bic_curve) curve.push_back({{"m", m}, {"bic", b}});
    archive.meta = {{"kind", "categories"},
                    {"m", model.m()},
                    {"dim", model.dim()},
                    {"version", model.version},
                    {"weights", weights},
                    {"risk_bound", model.has_risk_bound() ? json(model.risk_bound) : json(nullptr)},
                    {"fit_stats",
                     {{"log_likelihood", model.fit_stats.log_likelihood},
                      {"bic", model.fit_stats.bic},
                      {"iterations", model.fit_stats.iterations},
                      {"restarts_used", model.fit_stats.restarts_used},
                      {"bic_curve", curve}}}};
    archive.blobs.emplace_back(std::move(means));
    archive.blobs.emplace_back(std::move(covs));
    write_archive(archive, path);
}

CategoryModel load_category_model(const std::filesystem::path& path) {
    Archive archive = read_archive(path);
    const json& meta = archive.meta;
    if (meta.value("kind", std::string{}) != "categories")
        throw Error(ErrorCode::IoError, path.string() + " is not a category model");
    const int m = meta.at("m").get<int>();
    const int dim = meta.at("dim").get<int>();
    const auto weights = meta.at("weights").get<std::vector<double>>();
    if (archive.blobs.size() != 2) throw Error(ErrorCode::IoError, "category model needs 2 blobs");
    const auto& means = std::get<std::vector<double>>(archive.blobs[0]);
    const auto& covs = std::get<std::vector<double>>(archive.blobs[1]);
    if (means.size() != static_cast<std::size_t>(m * dim) || covs.size() != static_cast<std::size_t>(m * dim * dim) ||
        weights.size() != static_cast<std::size_t>(m))
        throw Error(ErrorCode::IoError, "category model blob sizes do not match m and dim");

    CategoryModel model;
    model.version = meta.value("version", 0);
    for (int k = 0; k < m; ++k) {
        Eigen::VectorXd mean = Eigen::Map<const Eigen::VectorXd>(means.data() + k * dim, dim);
        Eigen::MatrixXd cov = Eigen::Map<const Eigen::MatrixXd>(covs.data() + static_cast<std::size_t>(k) * dim * dim, dim, dim);
        model.clusters.push_back(GaussianCluster::make(std::move(mean), std::move(cov), weights[k]));
    }
    if (!meta.at("risk_bound").is_null()) model.risk_bound = meta.at("risk_bound").get<double>();
    const json& fs = meta.at("fit_stats");
    model.fit_stats.log_likelihood = fs.value("log_likelihood", 0.0);
    model.fit_stats.bic = fs.value("bic", 0.0);
    model.fit_stats.iterations = fs.value("iterations", 0);
    model.fit_stats.restarts_used = fs.value("restarts_used", 0);
    for (const auto& p : fs.value("bic_curve", json::array()))
        model.fit_stats.bic_curve.emplace_back(p.at("m").get<int>(), p.at("bic").get<double>());
    return model;
}

}  // namespace actseg
