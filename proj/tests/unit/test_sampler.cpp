#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "actseg/sampler.hpp"
#include "test_support.hpp"

using namespace actseg;
using namespace actseg::testing;

namespace {

SamplerConfig no_augmentation(int s = 16) {
    SamplerConfig c;
    c.sample_size = s;
    c.greyscale_prob = 0.0;
    c.flip_prob = 0.0;
    c.brightness = c.contrast = c.saturation = 0.0;
    return c;
}

bool inside(const PatchRegion& r, int x, int y) {
    return x >= r.left() && x < r.right() && y >= r.top() && y < r.bottom();
}

double plane_mean(const Tensor& t, int c) {
    double s = 0.0;
    for (float v : t.plane(c)) s += v;
    return s / static_cast<double>(t.plane_size());
}

}  // namespace

TEST(Sampler, PartitionSplitsByLabel) {
    const FrameAnnotationSet set{"f", {anchor(5, 5, 4, 0), anchor(10, 5, 4, 0), anchor(5, 10, 4, 1), anchor(10, 10, 4, 1)}};
    const auto p = partition_anchors(set, set.anchors[0]);
    EXPECT_EQ(p.positives, (std::vector<AnchorAnnotation>{set.anchors[1]}));
    EXPECT_EQ(p.negatives, (std::vector<AnchorAnnotation>{set.anchors[2], set.anchors[3]}));
}

TEST(Sampler, PartitionAllowsEmptyPositives) {
    const FrameAnnotationSet set{"f", {anchor(5, 5, 4, 0), anchor(10, 5, 4, 1)}};
    const auto p = partition_anchors(set, 0);
    EXPECT_TRUE(p.positives.empty());
    EXPECT_EQ(p.negatives.size(), 1u);
}

TEST(Sampler, PartitionWithoutNegativesFails) {
    const FrameAnnotationSet set{"f", {anchor(5, 5, 4, 0), anchor(10, 5, 4, 0), anchor(15, 5, 4, 0)}};
    EXPECT_ACTSEG_ERROR(partition_anchors(set, 0), ErrorCode::EmptyNegativeSet);
}

TEST(Sampler, NeighborCenterStaysInBox) {
    Rng rng(1);
    const PatchRegion r{50, 50, 10, 10};
    for (int i = 0; i < 10000; ++i) {
        const auto n = sample_neighbor(r, {100, 100}, rng);
        ASSERT_GE(n.center_x, 45);
        ASSERT_LE(n.center_x, 55);
        ASSERT_GE(n.center_y, 45);
        ASSERT_LE(n.center_y, 55);
        ASSERT_EQ(n.width, 10);
        ASSERT_EQ(n.height, 10);
    }
}

TEST(Sampler, DegenerateRegionKeepsCenter) {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const auto n = sample_neighbor({7, 9, 1, 1}, {20, 20}, rng);
        EXPECT_EQ(n.center_x, 7);
        EXPECT_EQ(n.center_y, 9);
    }
}

TEST(Sampler, CornerNeighborsAreClamped) {
    Rng rng(3);
    const PatchRegion r{2, 3, 12, 12};
    for (int i = 0; i < 10000; ++i) {
        const auto c = draw_neighbor_center(r, {64, 48}, rng);
        ASSERT_TRUE(inside(r, c.x, c.y));
        const auto n = sample_neighbor(r, {64, 48}, rng);
        ASSERT_GE(n.left(), 0);
        ASSERT_GE(n.top(), 0);
        ASSERT_LE(n.right(), 64);
        ASSERT_LE(n.bottom(), 48);
        ASSERT_GT(n.width, 0);
    }
}

TEST(Sampler, UniformGreyComposesToHalf) {
    const auto frame = solid_frame("g", 64, 64, {128, 128, 128});
    const auto s = compose_fg_bg(frame, {32, 32, 16, 16}, no_augmentation());
    ASSERT_EQ(s.tensor.channels, 6);
    // 128 / 255 is the nearest 8-bit level to one half.
    for (float v : s.tensor.data) EXPECT_NEAR(v, 0.5, 0.5 / 255.0 + 1e-6);
}

TEST(Sampler, RedDiskForegroundAndMixedBackground) {
    ImageFrame frame = solid_frame("disk", 128, 128, {0, 255, 0});
    cv::circle(frame.image, {64, 64}, 14, cv::Scalar(255, 0, 0), cv::FILLED);
    const PatchRegion region{64, 64, 16, 16};
    const auto cfg = no_augmentation(32);
    const auto s = compose_fg_bg(frame, region, cfg);

    // Oracle: plain pixel averages over the source crops. Bilinear resizing
    // keeps means close, not exact.
    auto crop_mean = [&](const PatchRegion& r, int c) {
        const cv::Mat crop = frame.image(r.clamped(128, 128));
        return cv::mean(crop)[c] / 255.0;
    };
    const auto bg = region.scaled(cfg.bg_scale);
    EXPECT_NEAR(plane_mean(s.tensor, 0), crop_mean(region, 0), 0.02);
    EXPECT_NEAR(plane_mean(s.tensor, 1), crop_mean(region, 1), 0.02);
    EXPECT_NEAR(plane_mean(s.tensor, 3), crop_mean(bg, 0), 0.03);
    EXPECT_NEAR(plane_mean(s.tensor, 4), crop_mean(bg, 1), 0.03);
    EXPECT_GT(plane_mean(s.tensor, 0), 0.95);
    EXPECT_GT(plane_mean(s.tensor, 3), 0.3);
    EXPECT_GT(plane_mean(s.tensor, 4), 0.05);
}

TEST(Sampler, ClampedBackgroundStillFullSize) {
    const auto frame = solid_frame("b", 40, 40, {1, 2, 3});
    const auto s = compose_fg_bg(frame, {2, 2, 16, 16}, no_augmentation(20));
    EXPECT_EQ(s.tensor.height, 20);
    EXPECT_EQ(s.tensor.width, 20);
    EXPECT_EQ(s.tensor.channels, 6);
}

TEST(Sampler, ComposeOutsideImageFails) {
    const auto frame = solid_frame("o", 10, 10, {0, 0, 0});
    EXPECT_ACTSEG_ERROR(compose_fg_bg(frame, {-30, -30, 4, 4}, no_augmentation()), ErrorCode::EmptyRegion);
}

TEST(Sampler, ZeroProbabilitiesAreIdentity) {
    ImageFrame frame = solid_frame("i", 64, 64, {30, 90, 200});
    cv::randu(frame.image, 0, 255);
    const auto cfg = no_augmentation();
    const auto s = compose_fg_bg(frame, {30, 30, 20, 20}, cfg);
    Rng rng(4);
    EXPECT_EQ(augment(s, cfg, rng).tensor, s.tensor);
}

TEST(Sampler, FlipMirrorsAndIsInvolution) {
    ImageFrame frame = solid_frame("f", 64, 64, {0, 0, 0});
    cv::randu(frame.image, 0, 255);
    auto cfg = no_augmentation();
    cfg.flip_prob = 1.0;
    const auto s = compose_fg_bg(frame, {30, 30, 20, 20}, cfg);
    Rng rng(5);
    const auto once = augment(s, cfg, rng);
    const int w = s.tensor.width;
    for (int c = 0; c < 6; ++c)
        for (int y = 0; y < s.tensor.height; ++y)
            for (int x = 0; x < w; ++x) ASSERT_EQ(once.tensor.at(c, y, x), s.tensor.at(c, y, w - 1 - x));
    EXPECT_EQ(augment(once, cfg, rng).tensor, s.tensor);
}

TEST(Sampler, FixedBrightnessScalesValues) {
    ContrastiveSample s;
    s.tensor = Tensor(6, 8, 8, 0.5f);
    AugmentationParams p;
    p.brightness = 1.2;
    const auto out = apply_augmentation(s, p);
    for (float v : out.tensor.data) EXPECT_NEAR(v, 0.6, 1e-6);

    s.tensor = Tensor(6, 8, 8, 0.9f);
    for (float v : apply_augmentation(s, p).tensor.data) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(Sampler, SameTransformOnBothHalves) {
    ContrastiveSample s;
    s.tensor = Tensor(6, 4, 4);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) s.tensor.plane(c)[i] = s.tensor.plane(c + 3)[i] = 0.05f * (c + 1) + 0.03f * i;
    SamplerConfig cfg;
    cfg.greyscale_prob = 0.5;
    cfg.flip_prob = 0.5;
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const auto out = augment(s, cfg, rng);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 16; ++i) ASSERT_FLOAT_EQ(out.tensor.plane(c)[i], out.tensor.plane(c + 3)[i]);
    }
}

TEST(Sampler, GreyscaleReplicatesChannels) {
    ImageFrame frame = solid_frame("c", 32, 32, {0, 0, 0});
    cv::randu(frame.image, 0, 255);
    auto cfg = no_augmentation();
    cfg.greyscale_prob = 1.0;
    Rng rng(7);
    const auto out = augment(compose_fg_bg(frame, {16, 16, 10, 10}, cfg), cfg, rng);
    for (int first : {0, 3})
        for (std::size_t i = 0; i < out.tensor.plane_size(); ++i) {
            ASSERT_EQ(out.tensor.plane(first)[i], out.tensor.plane(first + 1)[i]);
            ASSERT_EQ(out.tensor.plane(first)[i], out.tensor.plane(first + 2)[i]);
        }
}

TEST(Sampler, AugmentationStaysInUnitRange) {
    ImageFrame frame = solid_frame("r", 48, 48, {0, 0, 0});
    cv::randu(frame.image, 0, 255);
    SamplerConfig cfg;
    cfg.sample_size = 12;
    cfg.brightness = cfg.contrast = cfg.saturation = 0.9;
    cfg.greyscale_prob = 0.5;
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto out = augment(compose_fg_bg(frame, {24, 24, 12, 12}, cfg), cfg, rng);
        ASSERT_EQ(out.tensor.channels, 6);
        for (float v : out.tensor.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    }
}

TEST(Sampler, BatchUsesOnlyPossibleSources) {
    const auto frame = solid_frame("f", 64, 64, {100, 100, 100});
    const FrameAnnotationSet set{"f", {anchor(10, 10, 8, 0), anchor(50, 10, 8, 0), anchor(30, 50, 8, 1)}};
    auto cfg = no_augmentation();
    cfg.negatives_per_query = 2;
    Rng rng(9);
    const auto b = make_batch(frame, set, 0, cfg, rng);
    EXPECT_EQ(b.frame_id, "f");
    EXPECT_TRUE(inside(set.anchors[1].region, b.positive.source_region.center_x, b.positive.source_region.center_y));
    ASSERT_EQ(b.negatives.size(), 2u);
    for (const auto& n : b.negatives)
        EXPECT_TRUE(inside(set.anchors[2].region, n.source_region.center_x, n.source_region.center_y));
    EXPECT_EQ(b.query.source_region, set.anchors[0].region);
    EXPECT_EQ(b.query.role, SampleRole::Query);
    EXPECT_EQ(b.positive.role, SampleRole::Positive);
}

TEST(Sampler, UniqueLabelFallsBackToQueryNeighbor) {
    const auto frame = solid_frame("f", 64, 64, {100, 100, 100});
    const FrameAnnotationSet set{"f", {anchor(20, 20, 8, 0), anchor(44, 44, 8, 1)}};
    auto cfg = no_augmentation();
    Rng rng(10);
    const auto b = make_batch(frame, set, 0, cfg, rng);
    EXPECT_TRUE(inside(set.anchors[0].region, b.positive.source_region.center_x, b.positive.source_region.center_y));
}

TEST(Sampler, SeededBatchesAreBitIdentical) {
    ImageFrame frame = solid_frame("d", 64, 64, {0, 0, 0});
    cv::randu(frame.image, 0, 255);
    const FrameAnnotationSet set{"d", {anchor(16, 16, 10, 0), anchor(48, 16, 10, 1), anchor(32, 48, 10, 2)}};
    SamplerConfig cfg;
    cfg.sample_size = 16;
    cfg.negatives_per_query = 4;
    Rng a(42), b(42);
    const auto x = make_batch(frame, set, 1, cfg, a);
    const auto y = make_batch(frame, set, 1, cfg, b);
    EXPECT_EQ(x.query.tensor, y.query.tensor);
    EXPECT_EQ(x.positive.tensor, y.positive.tensor);
    ASSERT_EQ(x.negatives.size(), y.negatives.size());
    for (std::size_t i = 0; i < x.negatives.size(); ++i) EXPECT_EQ(x.negatives[i].tensor, y.negatives[i].tensor);
}

TEST(Sampler, EightNegativesFromThreeAnchors) {
    const auto frame = solid_frame("n", 96, 96, {50, 60, 70});
    const FrameAnnotationSet set{"n", {anchor(48, 48, 10, 0), anchor(20, 20, 10, 1), anchor(76, 20, 10, 2),
                                       anchor(48, 76, 10, 3)}};
    auto cfg = no_augmentation();
    cfg.negatives_per_query = 8;
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto b = make_batch(frame, set, 0, cfg, rng);
        ASSERT_EQ(b.negatives.size(), 8u);
        for (const auto& n : b.negatives) {
            const int x = n.source_region.center_x, y = n.source_region.center_y;
            const bool ok = inside(set.anchors[1].region, x, y) || inside(set.anchors[2].region, x, y) ||
                            inside(set.anchors[3].region, x, y);
            EXPECT_TRUE(ok);
        }
    }
}

TEST(Sampler, ConfigValidation) {
    SamplerConfig c;
    EXPECT_NO_THROW(c.validate());
    c.bg_scale = 1.0;
    EXPECT_ACTSEG_ERROR(c.validate(), ErrorCode::InvalidArgument);
    c = {};
    c.negatives_per_query = 0;
    EXPECT_ACTSEG_ERROR(c.validate(), ErrorCode::InvalidArgument);
    c = {};
    c.flip_prob = 1.5;
    EXPECT_ACTSEG_ERROR(c.validate(), ErrorCode::InvalidArgument);
}
