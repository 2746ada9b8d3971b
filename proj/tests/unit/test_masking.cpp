#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dac/error.hpp"
#include "dac/evaluation.hpp"
#include "dac/masking.hpp"
#include "helpers.hpp"

using namespace dac;

namespace {

AttributionMap map_of(int h, int w, std::vector<float> scores) {
    return AttributionMap{h, w, std::move(scores), "", 0};
}

// Reference: stable-sort pixel indices by score and zero the first floor(p*n).
std::vector<std::uint8_t> reference_mask(const std::vector<float>& scores, double p) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    const auto k = static_cast<std::size_t>(std::floor(p * scores.size() + 1e-9));
    std::vector<std::uint8_t> bits(scores.size(), 1);
    for (std::size_t i = 0; i < k; ++i) bits[order[i]] = 0;
    return bits;
}

double softplus_loss(double margin) { return std::log1p(std::exp(-2.0 * margin)); }

}  // namespace

TEST(MaskWithProportion, ZeroProportionKeepsEverything) {
    auto m = masking::mask_with_proportion(map_of(2, 2, {0.3f, 0.1f, 0.2f, 0.9f}), 0.0);
    EXPECT_EQ(m.count_kept(), 4u);
}

TEST(MaskWithProportion, HandExamples) {
    auto scores = map_of(2, 2, {0.1f, 0.9f, 0.4f, 0.6f});
    EXPECT_EQ(masking::mask_with_proportion(scores, 0.5).bits, (std::vector<std::uint8_t>{0, 1, 0, 1}));
    EXPECT_EQ(masking::mask_with_proportion(scores, 0.75).bits, (std::vector<std::uint8_t>{0, 1, 0, 0}));
}

TEST(MaskWithProportion, RejectsOutOfRange) {
    auto scores = map_of(1, 2, {0.1f, 0.2f});
    EXPECT_THROW(masking::mask_with_proportion(scores, 1.0), InvalidInput);
    EXPECT_THROW(masking::mask_with_proportion(scores, -0.1), InvalidInput);
}

TEST(MaskWithProportion, MatchesReferenceNestsAndCountsExactly) {
    std::mt19937_64 gen(5);
    const auto grid = masking::default_grid();
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 3 + trial % 9, w = 2 + trial % 7;
        std::vector<float> s(static_cast<std::size_t>(h) * w);
        const int levels = trial % 4 == 0 ? 1 : 1 + trial % 5;
        for (auto& v : s) v = static_cast<float>(gen() % levels) / levels;
        auto scores = map_of(h, w, s);
        std::vector<std::uint8_t> prev(s.size(), 1);
        for (double p : grid) {
            auto m = masking::mask_with_proportion(scores, p);
            EXPECT_EQ(m.bits, reference_mask(s, p));
            EXPECT_EQ(m.count_masked(), masking::masked_count(p, s.size()));
            for (std::size_t i = 0; i < s.size(); ++i)
                if (!prev[i]) EXPECT_EQ(m.bits[i], 0);
            prev = m.bits;
        }
    }
}

TEST(MaskedCount, RobustToRepresentationError) {
    EXPECT_EQ(masking::masked_count(0.35, 20), 7u);
    EXPECT_EQ(masking::masked_count(0.7, 10), 7u);
    EXPECT_EQ(masking::masked_count(0.5, 7), 3u);
}

TEST(MakeGrid, PresetsExcludeOne) {
    auto g = masking::coarse_grid();
    ASSERT_EQ(g.size(), 5u);
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(g[k], 0.2 * k, 1e-12);
    auto d = masking::default_grid();
    EXPECT_EQ(d.size(), 19u);
    EXPECT_NEAR(d.back(), 0.9, 1e-12);
}

TEST(ProbeLossCurve, ZeroGridIsPlainLoss) {
    std::vector<float> w(16, 0.1f);
    auto model = testing_util::linear_reader(4, w, 0.0f);
    Image im(1, 4, 4, 0.5f);
    auto scores = map_of(4, 4, std::vector<float>(16, 0.3f));
    const double grid[] = {0.0};
    const float fill[] = {0.0f};
    auto curve = masking::probe_loss_curve(model, im, 0, scores, grid, fill);
    ASSERT_EQ(curve.losses.size(), 1u);
    const auto logits = model.forward(im);
    const double plain = cross_entropy_per_example(Eigen::Map<const Matrix>(logits.data(), 2, 1), std::vector<int>{0})[0];
    EXPECT_EQ(curve.losses[0], plain);
}

TEST(ProbeLossCurve, OnePixelReaderJumpsWhenItsRankIsCrossed) {
    const int side = 4, n = side * side, read = 9;
    std::vector<float> w(n, 0.0f);
    w[read] = 2.0f;
    auto model = testing_util::linear_reader(side, w, 0.0f);
    Image im(1, side, side, 0.25f);
    im.data[read] = 1.0f;
    std::mt19937_64 gen(1);
    std::vector<float> s(n);
    for (auto& v : s) v = static_cast<float>(gen() % 1000) / 1000.0f;
    const float fill[] = {0.0f};
    const auto grid = masking::default_grid();
    auto curve = masking::probe_loss_curve(model, im, 0, map_of(side, side, s), grid, fill);

    std::size_t rank = 0;
    for (int i = 0; i < n; ++i) rank += (s[i] < s[read] || (s[i] == s[read] && i < read)) ? 1 : 0;
    const double kept = softplus_loss(2.0), masked = softplus_loss(0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const bool hidden = masking::masked_count(grid[k], n) > rank;
        EXPECT_NEAR(curve.losses[k], hidden ? masked : kept, 1e-6) << "p=" << grid[k];
    }
}

TEST(ChooseMask, BendAtPointSixSelectsPointSix) {
    auto grid = masking::default_grid();
    masking::LossCurve curve{grid, {}};
    for (double p : grid) curve.losses.push_back(p <= 0.6 + 1e-9 ? 0.01 : 0.01 + 8.0 * (p - 0.6));
    std::vector<float> s(100);
    std::iota(s.begin(), s.end(), 0.0f);
    auto r = masking::choose_mask(map_of(10, 10, s), curve, 1.0);
    ASSERT_TRUE(r.knee.found);
    EXPECT_NEAR(r.proportion, 0.6, 1e-12);
    EXPECT_EQ(r.mask.count_masked(), 60u);
}

TEST(ChooseMask, ConstantCurveFallsBackToFullImage) {
    auto grid = masking::default_grid();
    masking::LossCurve curve{grid, std::vector<double>(grid.size(), 0.3)};
    auto r = masking::choose_mask(map_of(2, 2, {0.1f, 0.2f, 0.3f, 0.4f}), curve, 1.0);
    EXPECT_FALSE(r.knee.found);
    EXPECT_EQ(r.proportion, 0.0);
    EXPECT_EQ(r.mask.count_kept(), 4u);
}

TEST(AdaptiveMask, LeftHalfOracleRecoversTheCausalHalf) {
    const int side = 8, n = side * side;
    std::vector<float> w(n, 0.0f), s(n, 0.0f);
    BinaryMask truth(side, side, 0);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side / 2; ++x) {
            w[y * side + x] = 4.0f;
            s[y * side + x] = 1.0f;
            truth.at(y, x) = 1;
        }
    // margin 3 with the left half intact, negative once any of it is masked
    auto model = testing_util::linear_reader(side, w, -125.0f);
    Image im(1, side, side, 0.0f);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side / 2; ++x) im.at(0, y, x) = 1.0f;
    const float fill[] = {0.0f};
    auto r = masking::adaptive_mask(model, im, 0, map_of(side, side, s), masking::default_grid(), 1.0, fill);
    ASSERT_TRUE(r.knee.found);
    EXPECT_NEAR(r.proportion, 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(eval::mask_iou(r.mask, truth), 1.0);
}

TEST(PrecomputeMasks, IndependentOfWorkers) {
    auto cfg = testing_util::tiny_config(2, 40);
    auto ds = synth::generate(cfg);
    auto model = testing_util::small_model(cfg, 2);
    std::vector<Image> images;
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) {
        images.push_back(ds.train.examples[i].image);
        labels.push_back(ds.train.examples[i].label);
    }
    masking::PremaskOptions a;
    a.fill = synth::channel_mean(ds.train);
    a.grid = masking::coarse_grid();
    a.chunk = 5;
    auto b = a;
    b.workers = 3;
    auto c = a;
    c.chunk = 16;
    auto ra = masking::precompute_masks(model, images, labels, a);
    auto rb = masking::precompute_masks(model, images, labels, b);
    auto rc = masking::precompute_masks(model, images, labels, c);
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        EXPECT_EQ(ra[i].mask, rb[i].mask);
        EXPECT_EQ(ra[i].curve.losses, rb[i].curve.losses);
        EXPECT_EQ(ra[i].mask, rc[i].mask);
        for (std::size_t k = 0; k < ra[i].curve.losses.size(); ++k)
            EXPECT_NEAR(ra[i].curve.losses[k], rc[i].curve.losses[k], 1e-5);
    }
}

TEST(MaskCache, RoundTripAndStaleness) {
    const auto dir = std::filesystem::temp_directory_path() / "dac_mask_cache_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    BinaryMask m(3, 4, 1);
    m.at(1, 2) = 0;
    masking::write_mask(dir, "a", m);
    masking::MaskCacheIndex idx;
    idx.grid = masking::coarse_grid();
    idx.fill = {0.5f, 0.5f, 0.5f};
    idx.checkpoint_hash = "abc";
    idx.entries["a"] = {0.2, true};
    masking::write_mask_index(dir, idx);
    const std::string ids[] = {"a"};
    auto loaded = masking::load_masks(dir, ids, "abc");
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_EQ(loaded[0], m);
    EXPECT_THROW(masking::load_masks(dir, ids, "other"), StalenessError);
    const std::string missing[] = {"b"};
    EXPECT_THROW(masking::load_masks(dir, missing, "abc"), IntegrityError);
    std::filesystem::remove_all(dir);
}
