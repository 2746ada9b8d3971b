#include <gtest/gtest.h>

#include "dac/attribution.hpp"
#include "dac/error.hpp"

using namespace dac;

namespace {

// Identity 1x1 "conv" on a single-channel 2x2 input, no nonlinearity.
SplitModel identity_model(float head_value) {
    SplitModel model({1, 2, 2}, 2, {{1, 1, 1, 1, 0, false}});
    model.features().layers()[0].weight(0, 0) = 1.0f;
    model.head().weight.setConstant(head_value);
    return model;
}

Image two_by_two() {
    Image im(1, 2, 2);
    im.data = {1, 2, 3, 4};
    return im;
}

}  // namespace

TEST(Xgradcam, IdentityLayerByHand) {
    // alpha = sum(A/4 * A_k... ) reduces to a positive constant, so the map is
    // relu(x) min-max normalized.
    auto map = attribution::xgradcam(identity_model(1.0f), two_by_two(), 0);
    ASSERT_EQ(map.scores.size(), 4u);
    const float want[] = {0.0f, 1.0f / 3, 2.0f / 3, 1.0f};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(map.scores[i], want[i], 1e-6);
}

TEST(Xgradcam, ZeroActivationsGiveZeroMap) {
    auto model = identity_model(1.0f);
    model.features().layers()[0].weight(0, 0) = 0.0f;
    auto map = attribution::xgradcam(model, two_by_two(), 1);
    for (float s : map.scores) EXPECT_EQ(s, 0.0f);
}

TEST(Xgradcam, ZeroTargetRowGivesZeroMap) {
    auto model = identity_model(1.0f);
    model.head().weight.row(0).setZero();
    auto map = attribution::xgradcam(model, two_by_two(), 0);
    for (float s : map.scores) EXPECT_EQ(s, 0.0f);
}

TEST(Xgradcam, DeterministicAndBatchConsistent) {
    BackboneConfig cfg;
    cfg.input = {3, 16, 8};
    cfg.channels = {4, 8};
    auto model = SplitModel::make(cfg, 3);
    Image a(3, 16, 8), b(3, 16, 8);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] = static_cast<float>((i * 37) % 11) / 11.0f;
        b.data[i] = static_cast<float>((i * 13) % 7) / 7.0f;
    }
    auto m1 = attribution::xgradcam(model, a, 1);
    auto m2 = attribution::xgradcam(model, a, 1);
    EXPECT_EQ(m1.scores, m2.scores);
    const Image* ims[] = {&a, &b};
    const int targets[] = {1, 0};
    auto batch = attribution::xgradcam_batch(model, ims, targets);
    ASSERT_EQ(batch.size(), 2u);
    EXPECT_EQ(batch[0].scores, m1.scores);
    EXPECT_EQ(batch[1].scores, attribution::xgradcam(model, b, 0).scores);
    for (float s : m1.scores) {
        EXPECT_GE(s, 0.0f);
        EXPECT_LE(s, 1.0f);
    }
}

TEST(Upsample, IdentityAtSameSizeAndConstantPreserved) {
    std::vector<float> src{1, 2, 3, 4};
    EXPECT_EQ(attribution::upsample_bilinear(src, 2, 2, 2, 2), src);
    std::vector<float> c(6, 0.7f);
    for (float v : attribution::upsample_bilinear(c, 2, 3, 8, 5)) EXPECT_NEAR(v, 0.7f, 1e-6);
}

TEST(Upsample, HalfPixelCentersByHand) {
    // 1x2 -> 1x4: sample positions (j+0.5)/2-0.5 = -0.25, 0.25, 0.75, 1.25.
    auto up = attribution::upsample_bilinear(std::vector<float>{0, 4}, 1, 2, 1, 4);
    const float want[] = {0, 1, 3, 4};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(up[i], want[i], 1e-6);
}

TEST(NormalizeScores, Rules) {
    std::vector<float> zero(4, 0.0f);
    attribution::normalize_scores(zero);
    for (float v : zero) EXPECT_EQ(v, 0.0f);
    std::vector<float> constant(4, 2.5f);
    attribution::normalize_scores(constant);
    for (float v : constant) EXPECT_EQ(v, 1.0f);
    std::vector<float> v{2, 4, 6};
    attribution::normalize_scores(v);
    EXPECT_FLOAT_EQ(v[0], 0.0f);
    EXPECT_FLOAT_EQ(v[1], 0.5f);
    EXPECT_FLOAT_EQ(v[2], 1.0f);
}

TEST(RegionMeanScore, Examples) {
    AttributionMap uniform{2, 2, {0.5f, 0.5f, 0.5f, 0.5f}, "", 0};
    BinaryMask any(2, 2, 0);
    any.at(1, 0) = 1;
    EXPECT_DOUBLE_EQ(attribution::region_mean_score(uniform, any), 0.5);

    AttributionMap checker{2, 2, {0, 1, 1, 0}, "", 0};
    BinaryMask left(2, 2, 0);
    left.at(0, 0) = left.at(1, 0) = 1;
    EXPECT_DOUBLE_EQ(attribution::region_mean_score(checker, left), 0.5);
    BinaryMask top(2, 2, 0);
    top.at(0, 0) = top.at(0, 1) = 1;
    EXPECT_DOUBLE_EQ(attribution::region_mean_score(checker, top), 0.5);

    EXPECT_THROW(attribution::region_mean_score(checker, BinaryMask(2, 2, 0)), InvalidInput);
}
