#include <random>

#include <gtest/gtest.h>

#include "dac/baselines.hpp"
#include "dac/error.hpp"
#include "dac/trainer.hpp"
#include "helpers.hpp"

using namespace dac;
using namespace dac::train;

namespace {

struct Fixture {
    synth::Dataset data;
    SplitModel model;
    TrainingSet train;
    EvalSet val;
    ErmCache cache;
    MaskSet masks;
};

Fixture small_fixture(std::uint64_t seed) {
    Fixture f;
    f.data = synth::generate(testing_util::tiny_config(seed, 160));
    f.model = testing_util::small_model(f.data.config, seed);
    f.train = testing_util::training_set(f.data.train);
    f.val = testing_util::eval_set(f.data.val, 2);
    f.cache = make_erm_cache(f.model, f.train);
    f.masks.checkpoint_hash = f.model.weight_hash();
    std::mt19937_64 gen(seed);
    for (std::size_t i = 0; i < f.train.size(); ++i) {
        BinaryMask m(f.data.config.height, f.data.config.width, 1);
        for (auto& b : m.bits) b = gen() % 3 != 0;
        f.masks.masks.push_back(m);
    }
    return f;
}

DacConfig short_config(double alpha) {
    DacConfig c;
    c.alpha = alpha;
    c.epochs = 3;
    c.batch_size = 32;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(SelectLowLoss, Examples) {
    const std::size_t batch[] = {0, 1, 2, 3};
    const double losses[] = {0.1, 0.9, 0.2, 0.5};
    auto r = select_low_loss(batch, losses, 0.5);
    EXPECT_EQ(r.selected, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(r.mode, SelectionMode::quantile);
    EXPECT_EQ(select_low_loss(batch, losses, 1.0).selected.size(), 4u);
    EXPECT_EQ(select_low_loss(batch, losses, 0.01).selected.size(), 1u);
}

TEST(SelectLowLoss, TiesBrokenByDatasetIndex) {
    const std::size_t batch[] = {17, 3, 12, 5, 9, 30, 2, 8};
    std::vector<double> losses(40, 0.7);
    auto r = select_low_loss(batch, losses, 0.25);
    EXPECT_EQ(r.selected, (std::vector<std::size_t>{2, 3}));
}

TEST(SelectCorrect, Examples) {
    const std::size_t batch[] = {0, 1, 2, 3, 4};
    const int labels[] = {0, 1, 1, 0, 1};
    const int all[] = {0, 1, 1, 0, 1};
    const int none[] = {1, 0, 0, 1, 0};
    const int mixed[] = {0, 0, 1, 1, 1};
    EXPECT_EQ(select_correct(batch, all, labels).selected.size(), 5u);
    EXPECT_TRUE(select_correct(batch, none, labels).selected.empty());
    EXPECT_EQ(select_correct(batch, mixed, labels).selected, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(TotalLoss, Examples) {
    const double ce[] = {0.4, 0.4};
    const double comb[] = {0.1, 0.3};
    EXPECT_DOUBLE_EQ(total_loss(ce, comb, 0.0), 0.4);
    EXPECT_DOUBLE_EQ(total_loss(ce, comb, 5.0), 1.4);
    EXPECT_DOUBLE_EQ(total_loss(ce, std::span<const double>{}, 5.0), 0.4);
}

TEST(DacConfigValidation, RejectsOutOfRange) {
    DacConfig c;
    c.q = 0.0;
    EXPECT_THROW(validate(c), ConfigError);
    c.q = 0.5;
    c.alpha = -1.0;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(TrainErm, SeparableToySetReachesFullAccuracy) {
    // Label is the sign of pixel (0,0); the other pixels are noise.
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<Image> images;
    TrainingSet set;
    for (int i = 0; i < 128; ++i) {
        Image im(1, 2, 2);
        for (auto& v : im.data) v = u(gen) * 0.2f;
        const int label = i % 2;
        im.data[0] = label ? 1.0f : -1.0f;
        images.push_back(im);
        set.labels.push_back(label);
        set.ids.push_back("t" + std::to_string(i));
    }
    for (const auto& im : images) set.images.push_back(&im);
    SplitModel model({1, 2, 2}, 2, {{1, 4, 2, 1, 0, true}});
    auto gen_w = std::mt19937_64(2);
    for (auto& l : model.features().layers())
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = u(gen_w);
    ErmConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.optimizer.lr = 0.05;
    auto r = train_erm(model, set, cfg);
    EXPECT_DOUBLE_EQ(r.log.back().train_accuracy, 1.0);
}

TEST(TrainErm, SameSeedSameWeights) {
    auto data = synth::generate(testing_util::tiny_config(3, 96));
    auto set = testing_util::training_set(data.train);
    ErmConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 3;
    auto a = train_erm(testing_util::small_model(data.config, 3), set, cfg);
    auto b = train_erm(testing_util::small_model(data.config, 3), set, cfg);
    EXPECT_EQ(a.model.weight_hash(), b.model.weight_hash());
    ASSERT_EQ(a.log.size(), 2u);
}

TEST(TrainErm, DivergenceReportsEpoch) {
    auto data = synth::generate(testing_util::tiny_config(4, 96));
    auto set = testing_util::training_set(data.train);
    ErmConfig cfg;
    cfg.epochs = 3;
    cfg.optimizer.kind = OptimizerParams::Kind::sgd;
    cfg.optimizer.lr = 1e30;
    try {
        train_erm(testing_util::small_model(data.config, 4), set, cfg);
        FAIL() << "expected divergence";
    } catch (const TrainingError& e) {
        EXPECT_GE(e.epoch(), 0);
    }
}

TEST(ErmCache, RoundTrip) {
    auto f = small_fixture(6);
    const auto path = std::filesystem::temp_directory_path() / "dac_erm_cache_test.json";
    save_erm_cache(f.cache, path);
    auto back = load_erm_cache(path);
    EXPECT_EQ(back.checkpoint_hash, f.cache.checkpoint_hash);
    EXPECT_EQ(back.ids, f.cache.ids);
    EXPECT_EQ(back.losses, f.cache.losses);
    EXPECT_EQ(back.predictions, f.cache.predictions);
    std::filesystem::remove(path);
}

TEST(DacRetrain, AlphaZeroEqualsPlainRetrainBitForBit) {
    auto f = small_fixture(7);
    auto cfg = short_config(0.0);
    auto dac = dac_retrain(f.model, f.train, f.masks, f.cache, cfg, &f.val);
    auto plain = baselines::retrain_plain(f.model, f.train, cfg, &f.val);
    EXPECT_EQ(dac.model.weight_hash(), plain.model.weight_hash());
    EXPECT_EQ(dac.model.head().weight, plain.model.head().weight);
    EXPECT_EQ(dac.model.head().bias, plain.model.head().bias);
}

TEST(DacRetrain, OnlyTheHeadChanges) {
    auto f = small_fixture(8);
    auto r = dac_retrain(f.model, f.train, f.masks, f.cache, short_config(5.0), &f.val);
    EXPECT_EQ(r.model.feature_hash(), f.model.feature_hash());
    EXPECT_NE(r.model.head().hash(), f.model.head().hash());
    ASSERT_EQ(r.log.size(), 3u);
    for (const auto& l : r.log) {
        EXPECT_GT(l.composed, 0u);
        EXPECT_NEAR(l.l_total, l.l_ce + 5.0 * l.l_comb, 1e-9 * (1.0 + l.l_total));
    }
}

TEST(DacRetrain, DeterministicGivenSeed) {
    auto f = small_fixture(9);
    auto a = dac_retrain(f.model, f.train, f.masks, f.cache, short_config(2.0));
    auto b = dac_retrain(f.model, f.train, f.masks, f.cache, short_config(2.0));
    EXPECT_EQ(a.model.weight_hash(), b.model.weight_hash());
}

TEST(DacRetrain, CorrectSelectionModeRuns) {
    auto f = small_fixture(10);
    auto cfg = short_config(1.0);
    cfg.selection_mode = SelectionMode::correct;
    auto r = dac_retrain(f.model, f.train, f.masks, f.cache, cfg);
    EXPECT_EQ(r.model.feature_hash(), f.model.feature_hash());
}

TEST(DacRetrain, StaleCachesAreRejected) {
    auto f = small_fixture(11);
    auto stale = f.cache;
    stale.checkpoint_hash = "0000";
    EXPECT_THROW(dac_retrain(f.model, f.train, f.masks, stale, short_config(1.0)), StalenessError);
    auto masks = f.masks;
    masks.checkpoint_hash = "0000";
    EXPECT_THROW(dac_retrain(f.model, f.train, masks, f.cache, short_config(1.0)), StalenessError);
}

TEST(Sweep, SelectsBestWorstGroupValidation) {
    auto f = small_fixture(12);
    const double alphas[] = {0.0, 1.0};
    const double qs[] = {0.5};
    const bool flags[] = {true, false};
    auto cfg = short_config(0.0);
    cfg.epochs = 1;
    auto r = sweep(f.model, f.train, f.masks, f.cache, cfg, alphas, qs, flags, f.val);
    ASSERT_EQ(r.cells.size(), 4u);
    for (const auto& c : r.cells) EXPECT_LE(c.worst_val, r.cells[r.best].worst_val);
    for (std::size_t i = 0; i < r.best; ++i) EXPECT_LT(r.cells[i].worst_val, r.cells[r.best].worst_val);
}

TEST(Optimizer, StepDecaySchedule) {
    OptimizerParams p;
    p.lr = 0.004;
    p.step_size = 5;
    p.gamma = 0.5;
    EXPECT_DOUBLE_EQ(p.lr_at(0), 0.004);
    EXPECT_DOUBLE_EQ(p.lr_at(4), 0.004);
    EXPECT_DOUBLE_EQ(p.lr_at(5), 0.002);
    EXPECT_DOUBLE_EQ(p.lr_at(10), 0.001);
}
