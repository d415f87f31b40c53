#include "network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "actseg/error.hpp"

namespace actseg::detail {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// 3x3, stride 1, zero padding 1.
void im2col(const float* input, int channels, int size, float* columns) {
    const int plane = size * size;
    for (int c = 0; c < channels; ++c) {
        const float* src = input + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* dst = columns + ((c * 3 + ky) * 3 + kx) * plane;
                for (int y = 0; y < size; ++y) {
                    const int sy = y + ky - 1;
                    float* row = dst + y * size;
                    if (sy < 0 || sy >= size) {
                        std::fill(row, row + size, 0.0f);
                        continue;
                    }
                    const float* srow = src + sy * size;
                    for (int x = 0; x < size; ++x) {
                        const int sx = x + kx - 1;
                        row[x] = (sx < 0 || sx >= size) ? 0.0f : srow[sx];
                    }
                }
            }
        }
    }
}

void col2im(const float* columns, int channels, int size, float* output) {
    const int plane = size * size;
    std::fill(output, output + channels * plane, 0.0f);
    for (int c = 0; c < channels; ++c) {
        float* dst = output + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* src = columns + ((c * 3 + ky) * 3 + kx) * plane;
                for (int y = 0; y < size; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= size) continue;
                    const float* row = src + y * size;
                    float* drow = dst + sy * size;
                    for (int x = 0; x < size; ++x) {
                        const int sx = x + kx - 1;
                        if (sx >= 0 && sx < size) drow[sx] += row[x];
                    }
                }
            }
        }
    }
}

}  // namespace

Network::Network(const EncoderArch& arch) : arch_(arch) {
    if (arch.conv_channels.empty() || arch.embedding_dim < 1 || arch.input_size < 1)
        throw Error(ErrorCode::InvalidArgument, "invalid encoder architecture");
    int in = arch.input_channels;
    for (int out : arch.conv_channels) {
        shapes_.push_back(static_cast<std::size_t>(out) * in * 9);
        fan_in_.push_back(in * 9);
        shapes_.push_back(static_cast<std::size_t>(out));
        fan_in_.push_back(0);
        in = out;
    }
    shapes_.push_back(static_cast<std::size_t>(arch.embedding_dim) * in);
    fan_in_.push_back(in);
    shapes_.push_back(static_cast<std::size_t>(arch.embedding_dim));
    fan_in_.push_back(0);
}

EmbeddingVector Network::forward(const ParamList& params, const Tensor& input, ForwardCache* cache) const {
    if (input.channels != arch_.input_channels || input.height != arch_.input_size ||
        input.width != arch_.input_size)
        throw Error(ErrorCode::ShapeMismatch, "encoder input must be " + std::to_string(arch_.input_channels) + "x" +
                                                  std::to_string(arch_.input_size) + "x" +
                                                  std::to_string(arch_.input_size));

    // Centred input; the sampler delivers values in [0, 1].
    std::vector<float> current = input.data;
    for (float& v : current) v -= 0.5f;
    int channels = input.channels;
    int size = input.height;
    const std::size_t blocks = arch_.conv_channels.size();
    if (cache) cache->convs.assign(blocks, {});

    ConvCache scratch;
    for (std::size_t b = 0; b < blocks; ++b) {
        ConvCache& cc = cache ? cache->convs[b] : scratch;
        const int out = arch_.conv_channels[b];
        const int plane = size * size;
        cc.in_channels = channels;
        cc.out_channels = out;
        cc.size = size;
        cc.columns.resize(static_cast<std::size_t>(channels) * 9 * plane);
        im2col(current.data(), channels, size, cc.columns.data());

        cc.activation.resize(static_cast<std::size_t>(out) * plane);
        ConstMapMatrix weight(params[2 * b].data(), out, channels * 9);
        ConstMapMatrix cols(cc.columns.data(), channels * 9, plane);
        MapMatrix act(cc.activation.data(), out, plane);
        act.noalias() = weight * cols;
        const auto& bias = params[2 * b + 1];
        for (int o = 0; o < out; ++o) {
            float* row = cc.activation.data() + static_cast<std::size_t>(o) * plane;
            for (int i = 0; i < plane; ++i) row[i] = std::max(0.0f, row[i] + bias[o]);
        }

        cc.pooled = (b + 1 < blocks) && size >= 2;
        if (cc.pooled) {
            const int half = size / 2;
            std::vector<float> next(static_cast<std::size_t>(out) * half * half);
            cc.pool_argmax.resize(next.size());
            for (int o = 0; o < out; ++o) {
                const float* src = cc.activation.data() + static_cast<std::size_t>(o) * plane;
                for (int y = 0; y < half; ++y)
                    for (int x = 0; x < half; ++x) {
                        int best = (2 * y) * size + 2 * x;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int idx = (2 * y + dy) * size + 2 * x + dx;
                                if (src[idx] > src[best]) best = idx;
                            }
                        const std::size_t cell = (static_cast<std::size_t>(o) * half + y) * half + x;
                        next[cell] = src[best];
                        cc.pool_argmax[cell] = o * plane + best;
                    }
            }
            current = std::move(next);
            size = half;
        } else {
            current = cc.activation;
        }
        channels = out;
        if (!cache) scratch = ConvCache{};
    }

    const int plane = size * size;
    std::vector<float> pooled(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int i = 0; i < plane; ++i) sum += current[static_cast<std::size_t>(c) * plane + i];
        pooled[c] = static_cast<float>(sum / plane);
    }

    const std::size_t head_w = 2 * blocks;
    const int dim = arch_.embedding_dim;
    std::vector<float> head(static_cast<std::size_t>(dim));
    ConstMapMatrix hw(params[head_w].data(), dim, channels);
    Eigen::Map<const Eigen::VectorXf> pv(pooled.data(), channels);
    Eigen::Map<Eigen::VectorXf> hv(head.data(), dim);
    hv.noalias() = hw * pv;
    for (int d = 0; d < dim; ++d) head[d] += params[head_w + 1][d];

    double norm = 0.0;
    for (float v : head) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1e-12;

    EmbeddingVector z(dim);
    for (int d = 0; d < dim; ++d) z[d] = head[d] / norm;
    // Re-normalise in double so the unit-norm contract holds to ~1e-15.
    z /= z.norm();

    if (cache) {
        cache->pooled = std::move(pooled);
        cache->head = std::move(head);
        cache->head_norm = norm;
        cache->z = z;
    }
    return z;
}

void Network::backward(const ParamList& params, const ForwardCache& cache, const EmbeddingVector& dz,
                       ParamList& grads) const {
    const std::size_t blocks = arch_.conv_channels.size();
    const int dim = arch_.embedding_dim;
    const int channels_last = arch_.conv_channels.back();

    // z = h / |h|  =>  dh = (dz - z (z . dz)) / |h|
    const double proj = cache.z.dot(dz);
    std::vector<float> dhead(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) dhead[d] = static_cast<float>((dz[d] - cache.z[d] * proj) / cache.head_norm);

    const std::size_t head_w = 2 * blocks;
    Eigen::Map<const Eigen::VectorXf> dh(dhead.data(), dim);
    Eigen::Map<const Eigen::VectorXf> pooled(cache.pooled.data(), channels_last);
    MapMatrix gw(grads[head_w].data(), dim, channels_last);
    gw.noalias() += dh * pooled.transpose();
    for (int d = 0; d < dim; ++d) grads[head_w + 1][d] += dhead[d];

    ConstMapMatrix hw(params[head_w].data(), dim, channels_last);
    Eigen::VectorXf dpooled = hw.transpose() * dh;

    // Gradient w.r.t. the output of the last block (after its optional pool).
    const ConvCache& last = cache.convs.back();
    int out_size = last.pooled ? last.size / 2 : last.size;
    std::vector<float> dout(static_cast<std::size_t>(channels_last) * out_size * out_size);
    {
        const int plane = out_size * out_size;
        for (int c = 0; c < channels_last; ++c) {
            const float g = dpooled[c] / static_cast<float>(plane);
            std::fill(dout.begin() + c * plane, dout.begin() + (c + 1) * plane, g);
        }
    }

    for (std::size_t bi = blocks; bi-- > 0;) {
        const ConvCache& cc = cache.convs[bi];
        const int plane = cc.size * cc.size;
        std::vector<float> dact;
        if (cc.pooled) {
            dact.assign(static_cast<std::size_t>(cc.out_channels) * plane, 0.0f);
            for (std::size_t cell = 0; cell < dout.size(); ++cell) dact[cc.pool_argmax[cell]] += dout[cell];
        } else {
            dact = std::move(dout);
        }
        // ReLU
        for (std::size_t i = 0; i < dact.size(); ++i)
            if (cc.activation[i] <= 0.0f) dact[i] = 0.0f;

        ConstMapMatrix dy(dact.data(), cc.out_channels, plane);
        ConstMapMatrix cols(cc.columns.data(), cc.in_channels * 9, plane);
        MapMatrix gwc(grads[2 * bi].data(), cc.out_channels, cc.in_channels * 9);
        gwc.noalias() += dy * cols.transpose();
        auto& gb = grads[2 * bi + 1];
        for (int o = 0; o < cc.out_channels; ++o) gb[o] += dy.row(o).sum();

        if (bi == 0) break;
        ConstMapMatrix weight(params[2 * bi].data(), cc.out_channels, cc.in_channels * 9);
        std::vector<float> dcols(static_cast<std::size_t>(cc.in_channels) * 9 * plane);
        MapMatrix dc(dcols.data(), cc.in_channels * 9, plane);
        dc.noalias() = weight.transpose() * dy;
        dout.assign(static_cast<std::size_t>(cc.in_channels) * plane, 0.0f);
        col2im(dcols.data(), cc.in_channels, cc.size, dout.data());
    }
}

}  // namespace actseg::detail
