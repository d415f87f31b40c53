#pragma once

// Independent brute-force reference implementations shared by the unit tests
// and the acceptance binary. Each recomputes a result from its definition
// without calling the library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "actseg/prediction.hpp"

namespace actseg::oracle {

struct PixelVote {
    int label = 0;
    double risk = 0.0;
};

/// Per-pixel recount of the centre-weighted vote. Row-major H*W result.
inline std::vector<PixelVote> vote(std::span<const PatchPrediction> preds, int height, int width) {
    std::vector<PixelVote> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            std::vector<double> tally(256, 0.0);
            double wsum = 0.0, rsum = 0.0;
            for (const auto& p : preds) {
                const int x0 = p.region.center_x - p.region.width / 2;
                const int y0 = p.region.center_y - p.region.height / 2;
                if (x < x0 || x >= x0 + p.region.width || y < y0 || y >= y0 + p.region.height) continue;
                const double d = std::max(std::abs(x - p.region.center_x), std::abs(y - p.region.center_y));
                const double r = std::max(p.region.width, p.region.height) / 2.0 + 1.0;
                const double w = std::max(0.0, 1.0 - d / r);
                tally[static_cast<std::size_t>(p.label)] += w;
                wsum += w;
                rsum += w * p.risk;
            }
            const double top = *std::max_element(tally.begin(), tally.end());
            std::vector<int> tied;
            for (int l = 0; l < 256; ++l)
                if (tally[static_cast<std::size_t>(l)] == top) tied.push_back(l);
            int winner = tied.front();
            if (tied.size() > 1) {
                double nearest = std::numeric_limits<double>::infinity();
                for (const auto& p : preds) {
                    if (std::find(tied.begin(), tied.end(), p.label) == tied.end()) continue;
                    const int x0 = p.region.center_x - p.region.width / 2;
                    const int y0 = p.region.center_y - p.region.height / 2;
                    if (x < x0 || x >= x0 + p.region.width || y < y0 || y >= y0 + p.region.height) continue;
                    const double dx = x - p.region.center_x, dy = y - p.region.center_y;
                    const double dist = std::sqrt(dx * dx + dy * dy);
                    if (dist < nearest || (dist == nearest && p.label < winner)) {
                        nearest = dist;
                        winner = p.label;
                    }
                }
            }
            out[static_cast<std::size_t>(y) * width + x] = {winner, wsum > 0 ? rsum / wsum : 0.0};
        }
    }
    return out;
}

/// Best total frame risk over every index subset of size min(budget, largest
/// feasible) with pairwise position gaps greater than `spacing`. Enumerates
/// all subsets of at most `budget` indices.
inline double hard_frames_best(std::span<const std::pair<std::int64_t, double>> frames, int budget, int spacing,
                               std::size_t* chosen_size = nullptr) {
    const std::size_t n = frames.size();
    std::vector<double> best_by_size(static_cast<std::size_t>(std::max(budget, 0)) + 1,
                                     -std::numeric_limits<double>::infinity());
    best_by_size[0] = 0.0;
    std::vector<std::size_t> chosen;
    auto extend = [&](auto&& self, std::size_t from, double sum) -> void {
        if (chosen.size() == static_cast<std::size_t>(budget)) return;
        for (std::size_t i = from; i < n; ++i) {
            bool ok = true;
            for (std::size_t j : chosen)
                if (std::llabs(frames[i].first - frames[j].first) <= spacing) ok = false;
            if (!ok) continue;
            chosen.push_back(i);
            const double s = sum + frames[i].second;
            best_by_size[chosen.size()] = std::max(best_by_size[chosen.size()], s);
            self(self, i + 1, s);
            chosen.pop_back();
        }
    };
    extend(extend, 0, 0.0);
    int size = std::max(budget, 0);
    while (size > 0 && best_by_size[static_cast<std::size_t>(size)] == -std::numeric_limits<double>::infinity()) --size;
    if (chosen_size) *chosen_size = static_cast<std::size_t>(size);
    return best_by_size[static_cast<std::size_t>(size)];
}

/// Whether `above` of `n` values exceeding a bound is within 1 - delta. The
/// budget gets 1e-9 relative slack so that e.g. delta = 0.9, N = 10 allows
/// one value despite 1 - 0.9 rounding below 0.1.
inline bool within_budget(std::size_t above, std::size_t n, double delta) {
    const double budget = (1.0 - delta) * static_cast<double>(n);
    return static_cast<double>(above) <= budget + 1e-9 * std::max(1.0, budget);
}

/// Smallest observed value t with |{r > t}| / N <= 1 - delta, by trying all.
inline double risk_bound(std::span<const double> risks, double delta) {
    double best = std::numeric_limits<double>::infinity();
    for (double t : risks) {
        const auto above = std::count_if(risks.begin(), risks.end(), [t](double r) { return r > t; });
        if (within_budget(static_cast<std::size_t>(above), risks.size(), delta)) best = std::min(best, t);
    }
    return best;
}

}  // namespace actseg::oracle
