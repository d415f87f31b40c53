#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "actseg/encoder.hpp"

namespace actseg {

/// Full-covariance Gaussian component. Construct through `make` so the
/// Cholesky factor and log-determinant stay consistent with the covariance.
class GaussianCluster {
public:
    GaussianCluster() = default;

    /// Throws SingularCovariance if `covariance` is not positive definite.
    static GaussianCluster make(Eigen::VectorXd mean, Eigen::MatrixXd covariance, double weight = 1.0);

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& covariance() const { return covariance_; }
    double weight() const { return weight_; }
    double log_det() const { return log_det_; }
    int dim() const { return static_cast<int>(mean_.size()); }

    /// log of the multivariate normal density at z.
    double log_density(const Eigen::VectorXd& z) const;

    /// Log densities of every row of `points` (N x D).
    Eigen::VectorXd log_density_rows(const Eigen::MatrixXd& points) const;

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd covariance_;
    Eigen::MatrixXd chol_lower_;
    double weight_ = 1.0;
    double log_det_ = 0.0;
};

/// Gaussian density gamma(z; c). A density, so values above 1 are legal.
double cluster_likelihood(const EmbeddingVector& z, const GaussianCluster& c);
double cluster_log_likelihood(const EmbeddingVector& z, const GaussianCluster& c);

struct FitStats {
    double log_likelihood = 0.0;
    double bic = 0.0;
    int iterations = 0;
    int restarts_used = 0;
    std::vector<double> log_likelihood_trace;      // accepted EM iterates, best restart
    double rejected_drop = 0.0;  // largest likelihood decrease that ended a run, any restart
    std::vector<std::pair<int, double>> bic_curve;  // (m, BIC) from model selection
};

struct CategoryModel {
    std::vector<GaussianCluster> clusters;
    FitStats fit_stats;
    double risk_bound = std::numeric_limits<double>::quiet_NaN();
    int version = 0;

    int m() const { return static_cast<int>(clusters.size()); }
    int dim() const { return clusters.empty() ? 0 : clusters.front().dim(); }
    bool has_risk_bound() const { return risk_bound == risk_bound; }
};

struct EmConfig {
    double reg_covar = 1e-6;
    int restarts = 5;
    int max_iterations = 200;
    double tolerance = 1e-6;  // relative log-likelihood improvement
    std::uint64_t seed = 0;
    int max_clusters = 12;
    bool full_curve = true;   // false: stop the sweep once the first local minimum is confirmed
    bool weighted_classification = false;

    void validate() const;
};

void to_json(nlohmann::json& j, const EmConfig& c);
void from_json(const nlohmann::json& j, EmConfig& c);

/// sum_i log sum_k w_k gamma(z_i; c_k), evaluated with log-sum-exp.
double mixture_log_likelihood(const CategoryModel& model, std::span<const EmbeddingVector> points);

/// EM with k-means++ seeding and `cfg.restarts` restarts; the restart with
/// the highest final log-likelihood wins, except that restarts leaving a
/// cluster with fewer than D+1 points only win when every restart does. The recorded trace is
/// non-decreasing: an iteration that would lower the likelihood ends the run
/// and is discarded.
CategoryModel fit_em(std::span<const EmbeddingVector> points, int m, const EmConfig& cfg);

/// m * (D + D(D+1)/2) + (m - 1)
long long free_parameter_count(int m, int dim);

double bic_value(double log_likelihood, int m, int dim, std::size_t n);
double bic(const CategoryModel& model, std::span<const EmbeddingVector> points);

/// Index-based first local minimum rule over a BIC sequence that starts at
/// `first_m`. Returns {m, monotone} where `monotone` is true when the curve
/// never turns upward (the last m is returned).
std::pair<int, bool> first_local_minimum(std::span<const double> bic_values, int first_m);

using FitFunction = std::function<CategoryModel(std::span<const EmbeddingVector>, int, const EmConfig&)>;

/// Fits m = 2..M (M capped by cfg.max_clusters and by |Z| / (D + 1)) and
/// returns the model at the first local minimum of BIC.
CategoryModel select_model(std::span<const EmbeddingVector> points, const EmConfig& cfg,
                           const FitFunction& fit = fit_em);

void save_category_model(const CategoryModel& model, const std::filesystem::path& path);
CategoryModel load_category_model(const std::filesystem::path& path);
std::string category_model_name(int version);  // categories_v{version}.gmm

Eigen::MatrixXd stack_rows(std::span<const EmbeddingVector> points);

}  // namespace actseg
