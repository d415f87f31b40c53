#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "actseg/active_loop.hpp"
#include "actseg/category_model.hpp"
#include "actseg/encoder.hpp"
#include "actseg/segmenter.hpp"

using namespace actseg;

namespace {

void BM_EncoderForward(benchmark::State& state) {
    EncoderArch arch;
    arch.input_size = static_cast<int>(state.range(0));
    arch.conv_channels = {8, 16, 32, 32, 32};
    arch.embedding_dim = 8;
    const auto params = init_encoder(arch, 1);
    std::mt19937 rng(2);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    Tensor x(arch.input_channels, arch.input_size, arch.input_size);
    for (auto& v : x.data) v = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(encode(params, x));
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(64);

std::vector<EmbeddingVector> mixture(int n, int dim, int m) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<EmbeddingVector> pts;
    for (int i = 0; i < n; ++i) {
        EmbeddingVector z(dim);
        for (int d = 0; d < dim; ++d) z[d] = g(rng) + 8.0 * ((i % m) == d % m);
        pts.push_back(z);
    }
    return pts;
}

void BM_FitEm(benchmark::State& state) {
    const auto pts = mixture(static_cast<int>(state.range(0)), 8, 4);
    EmConfig cfg;
    cfg.restarts = 1;
    for (auto _ : state) benchmark::DoNotOptimize(fit_em(pts, 4, cfg));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitEm)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_VotePixels(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    SlidingWindowConfig sw;
    sw.patch_size = 32;
    sw.stride = 16;
    std::vector<PatchPrediction> preds;
    int k = 0;
    for (const auto& r : generate_windows(side, side, sw)) {
        PatchPrediction p;
        p.region = r;
        p.label = 1 + k % 4;
        p.risk = 0.1 * (k % 7);
        preds.push_back(p);
        ++k;
    }
    for (auto _ : state) benchmark::DoNotOptimize(vote_pixels(preds, side, side));
}
BENCHMARK(BM_VotePixels)->Arg(160)->Arg(480)->Unit(benchmark::kMicrosecond);

void BM_SelectHardFrames(benchmark::State& state) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::pair<std::int64_t, double>> frames;
    for (int i = 0; i < state.range(0); ++i) frames.emplace_back(i, u(rng));
    for (auto _ : state) benchmark::DoNotOptimize(select_hard_frames(frames, 20, 2));
}
BENCHMARK(BM_SelectHardFrames)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
