#include <algorithm>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "dac/error.hpp"
#include "dac/evaluation.hpp"

using namespace dac;

namespace {

BinaryMask left_half(int h, int w) {
    BinaryMask m(h, w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x) m.at(y, x) = 1;
    return m;
}

}  // namespace

TEST(GroupMetrics, PerfectPredictions) {
    const int labels[] = {0, 0, 1, 1};
    const int groups[] = {0, 1, 2, 3};
    auto m = eval::group_metrics(labels, labels, groups, 2);
    EXPECT_EQ(m.worst, 1.0);
    EXPECT_EQ(m.average, 1.0);
}

TEST(GroupMetrics, TwoGroupArithmeticAndExclusion) {
    const int labels[] = {0, 0, 1, 1};
    const int preds[] = {0, 1, 1, 1};
    const int groups[] = {0, 0, 3, 3};
    auto m = eval::group_metrics(preds, labels, groups, 2);
    EXPECT_DOUBLE_EQ(m.worst, 0.5);
    EXPECT_DOUBLE_EQ(m.average, 0.75);
    EXPECT_EQ(m.excluded.size(), 2u);
    EXPECT_DOUBLE_EQ(m.sample_weighted, 0.75);
}

TEST(GroupMetrics, MajorityConstantPredictorFailsMinority) {
    std::vector<int> labels, groups, preds;
    for (int y = 0; y < 2; ++y)
        for (int s = 0; s < 2; ++s)
            for (int i = 0; i < 25; ++i) {
                labels.push_back(y);
                groups.push_back(y * 2 + s);
                preds.push_back(s);  // predicts the spurious value
            }
    auto m = eval::group_metrics(preds, labels, groups, 2);
    EXPECT_EQ(m.worst, 0.0);
    EXPECT_DOUBLE_EQ(m.average, 0.5);
}

TEST(GroupMetrics, OrderInvariant) {
    std::mt19937_64 gen(1);
    std::vector<int> labels(200), preds(200), groups(200);
    for (int i = 0; i < 200; ++i) {
        labels[i] = gen() % 2;
        groups[i] = labels[i] * 2 + gen() % 2;
        preds[i] = gen() % 2;
    }
    auto a = eval::group_metrics(preds, labels, groups, 2);
    std::reverse(labels.begin(), labels.end());
    std::reverse(preds.begin(), preds.end());
    std::reverse(groups.begin(), groups.end());
    auto b = eval::group_metrics(preds, labels, groups, 2);
    EXPECT_EQ(a.worst, b.worst);
    EXPECT_EQ(a.average, b.average);
    EXPECT_LE(a.worst, a.average);
}

TEST(LossQuartiles, PartitionAndTies) {
    for (std::size_t n : {4u, 5u, 7u, 10u, 101u}) {
        std::vector<double> losses(n);
        for (std::size_t i = 0; i < n; ++i) losses[i] = static_cast<double>((i * 7) % n);
        auto q = eval::loss_quartiles(losses);
        std::size_t counts[4] = {0, 0, 0, 0};
        for (int b : q) ++counts[b];
        const auto mn = *std::min_element(counts, counts + 4), mx = *std::max_element(counts, counts + 4);
        EXPECT_LE(mx - mn, 1u);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (losses[i] < losses[j]) EXPECT_LE(q[i], q[j]);
    }
    std::vector<double> tied(8, 1.0);
    EXPECT_EQ(eval::loss_quartiles(tied), (std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3}));
}

TEST(QuantileAttention, UniformMapGivesEqualScores) {
    std::vector<double> losses{0.1, 0.5, 0.3, 0.9, 0.2, 0.7, 0.4, 0.8};
    std::vector<AttributionMap> maps(8, AttributionMap{4, 4, std::vector<float>(16, 0.4f), "", 0});
    std::vector<BinaryMask> regions(8, left_half(4, 4));
    auto s = eval::quantile_attention_stats(losses, maps, regions);
    for (int q = 0; q < 4; ++q) {
        EXPECT_NEAR(s.causal[q], s.spurious[q], 1e-12);
        EXPECT_EQ(s.counts[q], 2u);
    }
    EXPECT_DOUBLE_EQ(s.edges[0], 0.1);
    EXPECT_DOUBLE_EQ(s.edges[4], 0.9);
}

TEST(QuantileAttention, OracleIndicatorGivesOneAndZero) {
    std::vector<double> losses{0.1, 0.5, 0.3, 0.9};
    const auto region = left_half(4, 6);
    AttributionMap indicator{4, 6, std::vector<float>(24, 0.0f), "", 0};
    for (std::size_t i = 0; i < 24; ++i) indicator.scores[i] = region.bits[i];
    std::vector<AttributionMap> maps(4, indicator);
    std::vector<BinaryMask> regions(4, region);
    auto s = eval::quantile_attention_stats(losses, maps, regions);
    for (int q = 0; q < 4; ++q) {
        EXPECT_DOUBLE_EQ(s.causal[q], 1.0);
        EXPECT_DOUBLE_EQ(s.spurious[q], 0.0);
    }
}

TEST(QuantileAttention, TooFewExamples) {
    std::vector<double> losses{0.1, 0.2, 0.3};
    std::vector<AttributionMap> maps(3, AttributionMap{2, 2, std::vector<float>(4, 0.0f), "", 0});
    std::vector<BinaryMask> regions(3, left_half(2, 2));
    EXPECT_THROW(eval::quantile_attention_stats(losses, maps, regions), InvalidInput);
}

TEST(GroupLossDistribution, ToyTopQuartile) {
    std::vector<double> losses{1, 2, 3, 4, 5, 6, 7, 8};
    const bool minority[] = {false, false, false, false, false, false, true, true};
    auto d = eval::group_loss_distribution(losses, minority);
    EXPECT_DOUBLE_EQ(d.minority[3], 1.0);
    EXPECT_DOUBLE_EQ(d.majority[0], 2.0 / 6.0);
    double sm = 0, sj = 0;
    for (int q = 0; q < 4; ++q) {
        sm += d.minority[q];
        sj += d.majority[q];
    }
    EXPECT_NEAR(sm, 1.0, 1e-9);
    EXPECT_NEAR(sj, 1.0, 1e-9);
}

TEST(GroupLossDistribution, ExchangeableGroupsAreNearUniform) {
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> losses(2000);
    auto minority = std::make_unique<bool[]>(2000);
    for (int i = 0; i < 2000; ++i) {
        losses[i] = u(gen);
        minority[i] = i % 2;  // correlation 0.5: half of every class is minority
    }
    auto d = eval::group_loss_distribution(losses, std::span<const bool>(minority.get(), 2000));
    for (int q = 0; q < 4; ++q) {
        EXPECT_NEAR(d.minority[q], 0.25, 0.1);
        EXPECT_NEAR(d.majority[q], 0.25, 0.1);
    }
}

TEST(GroupLossDistribution, NoMinorityIsAnError) {
    std::vector<double> losses{1, 2, 3, 4};
    const bool minority[] = {false, false, false, false};
    EXPECT_THROW(eval::group_loss_distribution(losses, minority), InvalidInput);
}

TEST(MaskIou, Examples) {
    BinaryMask a(2, 2, 0), b(2, 2, 0);
    EXPECT_DOUBLE_EQ(eval::mask_iou(a, b), 1.0);
    a.bits = {1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(eval::mask_iou(a, a), 1.0);
    b.bits = {0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(eval::mask_iou(a, b), 0.0);
    b.bits = {0, 1, 1, 0};
    EXPECT_DOUBLE_EQ(eval::mask_iou(a, b), 1.0 / 3.0);
}
