#pragma once

// Forward/backward passes of the patch encoder. Private to the core library.

#include <vector>

#include "actseg/encoder.hpp"

namespace actseg::detail {

using ParamList = std::vector<std::vector<float>>;

struct ConvCache {
    int in_channels = 0;
    int out_channels = 0;
    int size = 0;                  // spatial side at conv input/output
    bool pooled = false;
    std::vector<float> columns;    // im2col of the input, [in*9 x size*size]
    std::vector<float> activation; // ReLU output, [out x size*size]
    std::vector<int> pool_argmax;  // flat index into activation per pooled cell
};

struct ForwardCache {
    std::vector<ConvCache> convs;
    std::vector<float> pooled;     // global average, [C_last]
    std::vector<float> head;       // pre-normalisation embedding, [D]
    double head_norm = 0.0;
    EmbeddingVector z;
};

class Network {
public:
    explicit Network(const EncoderArch& arch);

    std::size_t tensor_count() const { return shapes_.size(); }
    const std::vector<std::size_t>& tensor_sizes() const { return shapes_; }
    /// Fan-in of tensor i for initialisation (0 for biases).
    int fan_in(std::size_t i) const { return fan_in_[i]; }
    bool is_bias(std::size_t i) const { return i % 2 == 1; }

    /// `cache` may be null for inference.
    EmbeddingVector forward(const ParamList& params, const Tensor& input, ForwardCache* cache) const;

    /// Accumulates dL/dparams into `grads` given dL/dz.
    void backward(const ParamList& params, const ForwardCache& cache, const EmbeddingVector& dz,
                  ParamList& grads) const;

private:
    EncoderArch arch_;
    std::vector<std::size_t> shapes_;
    std::vector<int> fan_in_;
};

}  // namespace actseg::detail
