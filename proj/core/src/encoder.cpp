#include "actseg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "actseg/archive.hpp"
#include "actseg/error.hpp"
#include "network.hpp"

namespace actseg {

using nlohmann::json;

void to_json(json& j, const EncoderArch& a) {
    j = {{"input_channels", a.input_channels},
         {"input_size", a.input_size},
         {"conv_channels", a.conv_channels},
         {"embedding_dim", a.embedding_dim}};
}

void from_json(const json& j, EncoderArch& a) {
    a.input_channels = j.value("input_channels", a.input_channels);
    a.input_size = j.value("input_size", a.input_size);
    a.conv_channels = j.value("conv_channels", a.conv_channels);
    a.embedding_dim = j.value("embedding_dim", a.embedding_dim);
}

void TrainConfig::validate() const {
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
    if (learning_rate < 0.0 || fine_tune_learning_rate < 0.0)
        throw Error(ErrorCode::InvalidArgument, "learning rate must be >= 0");
    if (steps < 0 || fine_tune_steps < 0) throw Error(ErrorCode::InvalidArgument, "steps must be >= 0");
    if (queries_per_step < 1) throw Error(ErrorCode::InvalidArgument, "queries_per_step must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"temperature", c.temperature},
         {"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"weight_decay", c.weight_decay},
         {"grad_clip", c.grad_clip},
         {"steps", c.steps},
         {"queries_per_step", c.queries_per_step},
         {"queries_per_frame", c.queries_per_frame},
         {"fine_tune_steps", c.fine_tune_steps},
         {"fine_tune_learning_rate", c.fine_tune_learning_rate},
         {"rng_seed", c.rng_seed},
         {"fine_tune", c.fine_tune},
         {"arch", c.arch}};
}

void from_json(const json& j, TrainConfig& c) {
    c.temperature = j.value("temperature", c.temperature);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.steps = j.value("steps", c.steps);
    c.queries_per_step = j.value("queries_per_step", c.queries_per_step);
    c.queries_per_frame = j.value("queries_per_frame", c.queries_per_frame);
    c.fine_tune_steps = j.value("fine_tune_steps", c.fine_tune_steps);
    c.fine_tune_learning_rate = j.value("fine_tune_learning_rate", c.fine_tune_learning_rate);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.fine_tune = j.value("fine_tune", c.fine_tune);
    if (j.contains("arch")) c.arch = j.at("arch").get<EncoderArch>();
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

EncoderParams init_encoder(const EncoderArch& arch, std::uint64_t seed) {
    detail::Network net(arch);
    EncoderParams params;
    params.arch = arch;
    params.rng_seed = seed;
    Rng rng(seed);
    for (std::size_t i = 0; i < net.tensor_count(); ++i) {
        std::vector<float> t(net.tensor_sizes()[i], 0.0f);
        if (!net.is_bias(i)) {
            // He initialisation for ReLU blocks.
            std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(net.fan_in(i))));
            for (auto& v : t) v = dist(rng);
        } else if (i + 1 < net.tensor_count()) {
            std::fill(t.begin(), t.end(), 0.01f);
        }
        params.tensors.push_back(std::move(t));
    }
    return params;
}

EmbeddingVector encode(const EncoderParams& params, const Tensor& input) {
    detail::Network net(params.arch);
    return net.forward(params.tensors, input, nullptr);
}

double similarity(const EmbeddingVector& zi, const EmbeddingVector& zj) { return std::exp(zi.dot(zj)); }

namespace {

struct Logits {
    std::vector<double> values;  // [positive, negatives...]
    double log_sum = 0.0;
};

Logits compute_logits(const EmbeddingVector& z, const EmbeddingVector& z_pos, std::span<const EmbeddingVector> z_negs,
                      double temperature) {
    if (z_negs.empty()) throw Error(ErrorCode::EmptyNegatives, "InfoNCE needs at least one negative");
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
    Logits l;
    l.values.reserve(z_negs.size() + 1);
    l.values.push_back(z.dot(z_pos) / temperature);
    for (const auto& n : z_negs) l.values.push_back(z.dot(n) / temperature);
    const double mx = *std::max_element(l.values.begin(), l.values.end());
    double sum = 0.0;
    for (double v : l.values) sum += std::exp(v - mx);
    l.log_sum = mx + std::log(sum);
    return l;
}

}  // namespace

double info_nce_loss(const EmbeddingVector& z, const EmbeddingVector& z_pos, std::span<const EmbeddingVector> z_negs,
                     double temperature) {
    const Logits l = compute_logits(z, z_pos, z_negs, temperature);
    return l.log_sum - l.values[0];
}

InfoNceGradient info_nce_gradient(const EmbeddingVector& z, const EmbeddingVector& z_pos,
                                  std::span<const EmbeddingVector> z_negs, double temperature) {
    const Logits l = compute_logits(z, z_pos, z_negs, temperature);
    InfoNceGradient g;
    g.loss = l.log_sum - l.values[0];
    const double p_pos = std::exp(l.values[0] - l.log_sum);
    g.d_query = (p_pos - 1.0) / temperature * z_pos;
    g.d_positive = (p_pos - 1.0) / temperature * z;
    g.d_negatives.reserve(z_negs.size());
    for (std::size_t i = 0; i < z_negs.size(); ++i) {
        const double p = std::exp(l.values[i + 1] - l.log_sum);
        g.d_query += p / temperature * z_negs[i];
        g.d_negatives.push_back(p / temperature * z);
    }
    return g;
}

double loss_gradient_check(const EmbeddingVector& z, const EmbeddingVector& z_pos,
                           std::span<const EmbeddingVector> z_negs, double temperature, double step) {
    const EmbeddingVector analytic = info_nce_gradient(z, z_pos, z_negs, temperature).d_query;
    EmbeddingVector numeric(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        EmbeddingVector plus = z;
        EmbeddingVector minus = z;
        plus[i] += step;
        minus[i] -= step;
        numeric[i] = (info_nce_loss(plus, z_pos, z_negs, temperature) -
                      info_nce_loss(minus, z_pos, z_negs, temperature)) /
                     (2.0 * step);
    }
    const double scale = std::max({analytic.lpNorm<Eigen::Infinity>(), numeric.lpNorm<Eigen::Infinity>(), 1e-12});
    return (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
}

namespace {

struct QueryRef {
    std::size_t frame = 0;   // index into the frame list
    std::size_t anchor = 0;
};

struct TrainingFrame {
    const ImageFrame* frame;
    const FrameAnnotationSet* annotations;
};

std::vector<TrainingFrame> collect_frames(std::span<const FrameAnnotationSet> sets, const DatasetManifest& manifest) {
    std::vector<TrainingFrame> out;
    for (const auto& set : sets) {
        if (!validate_frame_annotations(set).trainable) continue;
        const ImageFrame* frame = manifest.find_frame(set.frame_id);
        if (frame == nullptr) throw Error(ErrorCode::MissingFrame, "no image for annotated frame " + set.frame_id);
        if (frame->image.empty()) throw Error(ErrorCode::IoError, "image not loaded for frame " + set.frame_id);
        out.push_back({frame, &set});
    }
    if (out.empty()) throw Error(ErrorCode::NoTrainableFrames, "no frame has two distinct anchor labels");
    return out;
}

std::vector<QueryRef> epoch_schedule(const std::vector<TrainingFrame>& frames, int queries_per_frame, Rng& rng) {
    std::vector<QueryRef> schedule;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        std::vector<std::size_t> anchors(frames[f].annotations->anchors.size());
        std::iota(anchors.begin(), anchors.end(), std::size_t{0});
        std::shuffle(anchors.begin(), anchors.end(), rng);
        std::size_t take = anchors.size();
        if (queries_per_frame > 0) take = std::min(take, static_cast<std::size_t>(queries_per_frame));
        for (std::size_t i = 0; i < take; ++i) schedule.push_back({f, anchors[i]});
    }
    std::shuffle(schedule.begin(), schedule.end(), rng);
    return schedule;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2));
    x ^= x >> 31;
    return x * 0xBF58476D1CE4E5B9ULL;
}

TrainResult optimise(EncoderParams params, const std::vector<TrainingFrame>& frames, const SamplerConfig& sampler_cfg,
                     const TrainConfig& cfg, int steps, double base_lr) {
    sampler_cfg.validate();
    cfg.validate();
    if (params.arch.input_size != sampler_cfg.sample_size)
        throw Error(ErrorCode::ShapeMismatch, "encoder input size differs from sampler sample_size");

    detail::Network net(params.arch);
    TrainResult result;
    Rng rng(mix_seed(cfg.rng_seed, sampler_cfg.rng_seed));

    detail::ParamList grads(net.tensor_count());
    detail::ParamList velocity(net.tensor_count());
    for (std::size_t i = 0; i < net.tensor_count(); ++i) velocity[i].assign(net.tensor_sizes()[i], 0.0f);

    std::vector<QueryRef> schedule;
    std::size_t cursor = 0;

    for (int step = 0; step < steps; ++step) {
        const double lr = 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * step / std::max(1, steps)));
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i].assign(net.tensor_sizes()[i], 0.0f);

        double step_loss = 0.0;
        std::string step_frame;
        for (int q = 0; q < cfg.queries_per_step; ++q) {
            if (cursor >= schedule.size()) {
                schedule = epoch_schedule(frames, cfg.queries_per_frame, rng);
                cursor = 0;
            }
            const QueryRef ref = schedule[cursor++];
            const TrainingFrame& tf = frames[ref.frame];
            if (q == 0) step_frame = tf.frame->frame_id;

            const ContrastiveBatch batch = make_batch(*tf.frame, *tf.annotations, ref.anchor, sampler_cfg, rng);

            // Fresh embeddings for every member of the batch; released at scope exit.
            std::vector<detail::ForwardCache> caches(batch.negatives.size() + 2);
            const EmbeddingVector z = net.forward(params.tensors, batch.query.tensor, &caches[0]);
            const EmbeddingVector z_pos = net.forward(params.tensors, batch.positive.tensor, &caches[1]);
            std::vector<EmbeddingVector> z_negs;
            z_negs.reserve(batch.negatives.size());
            for (std::size_t i = 0; i < batch.negatives.size(); ++i)
                z_negs.push_back(net.forward(params.tensors, batch.negatives[i].tensor, &caches[i + 2]));
            result.peak_step_embeddings = std::max(result.peak_step_embeddings, z_negs.size() + 2);

            const InfoNceGradient g = info_nce_gradient(z, z_pos, z_negs, cfg.temperature);
            step_loss += g.loss;
            net.backward(params.tensors, caches[0], g.d_query, grads);
            net.backward(params.tensors, caches[1], g.d_positive, grads);
            for (std::size_t i = 0; i < z_negs.size(); ++i)
                net.backward(params.tensors, caches[i + 2], g.d_negatives[i], grads);
        }

        const float inv_q = 1.0f / static_cast<float>(cfg.queries_per_step);
        double norm_sq = 0.0;
        for (std::size_t t = 0; t < grads.size(); ++t) {
            const bool decay = !net.is_bias(t) && cfg.weight_decay > 0.0;
            for (std::size_t i = 0; i < grads[t].size(); ++i) {
                float g = grads[t][i] * inv_q;
                if (decay) g += static_cast<float>(cfg.weight_decay) * params.tensors[t][i];
                grads[t][i] = g;
                norm_sq += static_cast<double>(g) * g;
            }
        }
        float clip = 1.0f;
        if (cfg.grad_clip > 0.0 && std::sqrt(norm_sq) > cfg.grad_clip)
            clip = static_cast<float>(cfg.grad_clip / std::sqrt(norm_sq));

        if (lr > 0.0) {
            const float mu = static_cast<float>(cfg.momentum);
            const float flr = static_cast<float>(lr);
            for (std::size_t t = 0; t < grads.size(); ++t)
                for (std::size_t i = 0; i < grads[t].size(); ++i) {
                    float& v = velocity[t][i];
                    v = mu * v + clip * grads[t][i];
                    params.tensors[t][i] -= flr * v;
                }
        }
        result.log.push_back({step, step_loss / cfg.queries_per_step, step_frame});
    }
    result.params = std::move(params);
    return result;
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const SamplerConfig& sampler_cfg, const TrainConfig& train_cfg) {
    const auto frames = collect_frames(manifest.annotations, manifest);
    EncoderArch arch = train_cfg.arch;
    arch.input_size = sampler_cfg.sample_size;
    EncoderParams params = init_encoder(arch, train_cfg.rng_seed);
    params.version = 1;
    params.train_config = train_cfg;
    params.train_config["sampler"] = sampler_cfg;
    return optimise(std::move(params), frames, sampler_cfg, train_cfg, train_cfg.steps, train_cfg.learning_rate);
}

TrainResult fine_tune(const EncoderParams& params, std::span<const FrameAnnotationSet> supplemental,
                      const DatasetManifest& manifest, const SamplerConfig& sampler_cfg,
                      const TrainConfig& train_cfg) {
    const auto frames = collect_frames(supplemental, manifest);
    TrainConfig cfg = train_cfg;
    cfg.fine_tune = true;
    cfg.rng_seed = mix_seed(train_cfg.rng_seed, static_cast<std::uint64_t>(params.version));
    EncoderParams start = params;
    start.version = params.version + 1;
    start.train_config = cfg;
    start.train_config["sampler"] = sampler_cfg;
    return optimise(std::move(start), frames, sampler_cfg, cfg, cfg.fine_tune_steps, cfg.fine_tune_learning_rate);
}

double evaluate_loss(const EncoderParams& params, std::span<const FrameAnnotationSet> annotations,
                     const DatasetManifest& manifest, const SamplerConfig& sampler_cfg, double temperature,
                     std::uint64_t seed, int batches_per_anchor) {
    const auto frames = collect_frames(annotations, manifest);
    detail::Network net(params.arch);
    Rng rng(seed);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& tf : frames) {
        for (std::size_t a = 0; a < tf.annotations->anchors.size(); ++a) {
            for (int rep = 0; rep < batches_per_anchor; ++rep) {
                const auto batch = make_batch(*tf.frame, *tf.annotations, a, sampler_cfg, rng);
                const auto z = net.forward(params.tensors, batch.query.tensor, nullptr);
                const auto zp = net.forward(params.tensors, batch.positive.tensor, nullptr);
                std::vector<EmbeddingVector> zn;
                for (const auto& n : batch.negatives) zn.push_back(net.forward(params.tensors, n.tensor, nullptr));
                total += info_nce_loss(z, zp, zn, temperature);
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

std::string checkpoint_name(int version) { return "encoder_v" + std::to_string(version) + ".ckpt"; }

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
    Archive archive;
    archive.meta = {{"kind", "encoder"},
                    {"arch", params.arch},
                    {"embedding_dim", params.embedding_dim()},
                    {"version", params.version},
                    {"train_config", params.train_config},
                    {"rng_seed", params.rng_seed}};
    for (const auto& t : params.tensors) archive.blobs.emplace_back(t);
    write_archive(archive, path);
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
    Archive archive = read_archive(path);
    if (archive.meta.value("kind", std::string{}) != "encoder")
        throw Error(ErrorCode::IoError, path.string() + " is not an encoder checkpoint");
    EncoderParams params;
    params.arch = archive.meta.at("arch").get<EncoderArch>();
    params.version = archive.meta.at("version").get<int>();
    params.train_config = archive.meta.value("train_config", json::object());
    params.rng_seed = archive.meta.value("rng_seed", std::uint64_t{0});
    detail::Network net(params.arch);
    if (archive.blobs.size() != net.tensor_count()) throw Error(ErrorCode::IoError, "checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < archive.blobs.size(); ++i) {
        auto* t = std::get_if<std::vector<float>>(&archive.blobs[i]);
        if (t == nullptr || t->size() != net.tensor_sizes()[i])
            throw Error(ErrorCode::IoError, "checkpoint tensor shape mismatch");
        params.tensors.push_back(std::move(*t));
    }
    return params;
}

void write_training_log(std::span<const StepRecord> log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& r : log) out << json{{"step", r.step}, {"loss", r.loss}, {"frame_id", r.frame_id}}.dump() << '\n';
}

}  // namespace actseg
