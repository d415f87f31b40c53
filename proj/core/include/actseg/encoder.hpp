#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "actseg/dataset.hpp"
#include "actseg/sampler.hpp"
#include "actseg/tensor.hpp"

namespace actseg {

/// Unit-norm embedding produced by the encoder.
using EmbeddingVector = Eigen::VectorXd;

/// Layout of the feature extractor: `conv_channels.size()` blocks of
/// 3x3 conv + ReLU (2x2 max-pool after every block but the last), global
/// average pooling, a linear head to `embedding_dim`, L2 normalisation.
struct EncoderArch {
    int input_channels = 6;
    int input_size = 64;
    std::vector<int> conv_channels{16, 32, 64, 64, 64};
    int embedding_dim = 64;

    bool operator==(const EncoderArch&) const = default;
};

void to_json(nlohmann::json& j, const EncoderArch& a);
void from_json(const nlohmann::json& j, EncoderArch& a);

/// Versioned, immutable parameter snapshot. Tensors are ordered
/// conv0.weight, conv0.bias, ..., head.weight, head.bias; weights are
/// row-major [out x in*9] (conv) or [out x in] (head).
struct EncoderParams {
    EncoderArch arch;
    std::vector<std::vector<float>> tensors;
    int version = 0;
    nlohmann::json train_config = nlohmann::json::object();
    std::uint64_t rng_seed = 0;

    int embedding_dim() const { return arch.embedding_dim; }
    std::size_t parameter_count() const;
};

EncoderParams init_encoder(const EncoderArch& arch, std::uint64_t seed);

/// Inference-mode forward pass. Throws ShapeMismatch for a tensor that does
/// not match the architecture's input shape.
EmbeddingVector encode(const EncoderParams& params, const Tensor& input);

/// Abstract patch-to-embedding map, so segmentation can run with stubs.
class PatchEncoder {
public:
    virtual ~PatchEncoder() = default;
    virtual EmbeddingVector encode(const Tensor& input) const = 0;
    virtual int embedding_dim() const = 0;
};

class NetworkEncoder final : public PatchEncoder {
public:
    explicit NetworkEncoder(const EncoderParams& params) : params_(params) {}
    EmbeddingVector encode(const Tensor& input) const override { return actseg::encode(params_, input); }
    int embedding_dim() const override { return params_.embedding_dim(); }

private:
    const EncoderParams& params_;
};

/// exp(z_i . z_j), in [1/e, e] for unit vectors.
double similarity(const EmbeddingVector& zi, const EmbeddingVector& zj);

double info_nce_loss(const EmbeddingVector& z, const EmbeddingVector& z_pos,
                     std::span<const EmbeddingVector> z_negs, double temperature);

struct InfoNceGradient {
    double loss = 0.0;
    EmbeddingVector d_query;
    EmbeddingVector d_positive;
    std::vector<EmbeddingVector> d_negatives;
};

InfoNceGradient info_nce_gradient(const EmbeddingVector& z, const EmbeddingVector& z_pos,
                                  std::span<const EmbeddingVector> z_negs, double temperature);

/// Max over components of |analytic - central difference| of dL/dz, divided
/// by the larger infinity norm of the two gradient vectors.
double loss_gradient_check(const EmbeddingVector& z, const EmbeddingVector& z_pos,
                           std::span<const EmbeddingVector> z_negs, double temperature, double step = 1e-5);

struct TrainConfig {
    double temperature = 0.5;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double grad_clip = 5.0;      // global L2 norm, <= 0 disables
    int steps = 2000;
    int queries_per_step = 1;
    int queries_per_frame = 0;   // per epoch; 0 = every anchor once
    int fine_tune_steps = 500;
    double fine_tune_learning_rate = 0.02;
    std::uint64_t rng_seed = 0;
    bool fine_tune = false;
    EncoderArch arch;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    std::string frame_id;
};

struct TrainResult {
    EncoderParams params;
    std::vector<StepRecord> log;
    std::size_t peak_step_embeddings = 0;  // embeddings alive during one step
};

/// Contrastive training from scratch over every trainable annotated frame.
/// Embeddings are recomputed every step; nothing is cached across steps.
TrainResult train(const DatasetManifest& manifest, const SamplerConfig& sampler_cfg, const TrainConfig& train_cfg);

/// Continues optimisation of `params` on the supplemental annotations, whose
/// frames are looked up in `manifest`. The result carries version + 1.
TrainResult fine_tune(const EncoderParams& params, std::span<const FrameAnnotationSet> supplemental,
                      const DatasetManifest& manifest, const SamplerConfig& sampler_cfg,
                      const TrainConfig& train_cfg);

/// Mean InfoNCE over freshly drawn batches of the given frames (no update).
double evaluate_loss(const EncoderParams& params, std::span<const FrameAnnotationSet> annotations,
                     const DatasetManifest& manifest, const SamplerConfig& sampler_cfg, double temperature,
                     std::uint64_t seed, int batches_per_anchor = 1);

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_name(int version);  // encoder_v{version}.ckpt

void write_training_log(std::span<const StepRecord> log, const std::filesystem::path& path);

}  // namespace actseg
