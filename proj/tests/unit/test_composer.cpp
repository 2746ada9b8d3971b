#include <random>

#include <gtest/gtest.h>

#include "dac/composer.hpp"

using namespace dac;

namespace {

Image row(std::vector<float> values) {
    Image im(1, 1, static_cast<int>(values.size()));
    im.data = std::move(values);
    return im;
}

BinaryMask row_mask(std::vector<std::uint8_t> bits) {
    BinaryMask m(1, static_cast<int>(bits.size()));
    m.bits = std::move(bits);
    return m;
}

BinaryMask random_mask(int h, int w, std::mt19937_64& gen) {
    BinaryMask m(h, w);
    for (auto& b : m.bits) b = gen() & 1;
    return m;
}

Image random_image(int c, int h, int w, std::mt19937_64& gen) {
    Image im(c, h, w);
    for (auto& v : im.data) v = static_cast<float>(gen() % 1024) / 1024.0f;
    return im;
}

}  // namespace

TEST(BatchMean, Examples) {
    Image zero(3, 2, 2, 0.0f);
    const Image* one[] = {&zero};
    EXPECT_EQ(composer::batch_mean(one), (composer::FillColor{0, 0, 0}));

    Image a(2, 1, 1, 0.0f), b(2, 1, 1, 1.0f);
    const Image* two[] = {&a, &b};
    for (float v : composer::batch_mean(two)) EXPECT_FLOAT_EQ(v, 0.5f);

    Image c(3, 4, 5);
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < 20; ++i) c.data[ch * 20 + i] = 0.1f * (ch + 1);
    const Image* same[] = {&c, &c};
    auto m = composer::batch_mean(same);
    for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(m[ch], 0.1f * (ch + 1), 1e-6);
}

TEST(Compose, AllOnesCausalMaskReturnsDonorI) {
    std::mt19937_64 gen(1);
    auto xi = random_image(3, 4, 4, gen), xj = random_image(3, 4, 4, gen);
    const float b[] = {0.2f, 0.3f, 0.4f};
    auto out = composer::compose(xi, BinaryMask(4, 4, 1), xj, random_mask(4, 4, gen), b, 1);
    EXPECT_EQ(out.image.data, xi.data);
    EXPECT_EQ(out.label, 1);
}

TEST(Compose, HandExamples) {
    const float b[] = {0.5f};
    auto out = composer::compose(row({1, 2}), row_mask({1, 0}), row({5, 6}), row_mask({0, 1}), b, 0);
    EXPECT_EQ(out.image.data, (std::vector<float>{1, 0.5f}));
    out = composer::compose(row({1, 2}), row_mask({1, 0}), row({5, 6}), row_mask({0, 0}), b, 0);
    EXPECT_EQ(out.image.data, (std::vector<float>{1, 6}));
}

TEST(Compose, AlgebraOnRandomMasks) {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto mi = random_mask(5, 3, gen), mj = random_mask(5, 3, gen);
        auto f = composer::coefficient_fields(mi, mj);
        for (std::size_t p = 0; p < mi.size(); ++p) EXPECT_EQ(f.keep_i[p] + f.take_j[p] + f.fill[p], 1.0f);
        auto xi = random_image(2, 5, 3, gen), xj = random_image(2, 5, 3, gen);
        const float b[] = {0.25f, 0.75f};
        const int label = trial % 3;
        auto out = composer::compose(xi, mi, xj, mj, b, label);
        EXPECT_EQ(out.label, label);
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 3; ++x) {
                    const float want = mi.at(y, x) ? xi.at(c, y, x) : (mj.at(y, x) ? b[c] : xj.at(c, y, x));
                    EXPECT_EQ(out.image.at(c, y, x), want);
                }
    }
}

TEST(BuildComposedSet, CrossLabelPairOfTwo) {
    std::mt19937_64 gen(3);
    auto a = random_image(1, 2, 2, gen), b = random_image(1, 2, 2, gen);
    BinaryMask m(2, 2, 1);
    composer::Donor donors[] = {{&a, &m, 0, "a"}, {&b, &m, 1, "b"}};
    const float fill[] = {0.5f};
    auto set = composer::build_composed_set(donors, fill, true, 9);
    ASSERT_EQ(set.examples.size(), 2u);
    EXPECT_EQ(set.same_class, 0u);
    EXPECT_EQ(set.examples[0].donor_i, "a");
    EXPECT_EQ(set.examples[0].donor_j, "b");
    EXPECT_EQ(set.examples[1].donor_i, "b");
    EXPECT_EQ(set.examples[1].donor_j, "a");
    EXPECT_EQ(set.examples[0].label, 0);
    EXPECT_EQ(set.examples[1].label, 1);
}

TEST(BuildComposedSet, SameClassFallbackNeverSelfPairs) {
    std::mt19937_64 gen(4);
    std::vector<Image> ims;
    for (int i = 0; i < 3; ++i) ims.push_back(random_image(1, 2, 2, gen));
    BinaryMask m(2, 2, 1);
    std::vector<composer::Donor> donors;
    for (int i = 0; i < 3; ++i) donors.push_back({&ims[i], &m, 0, "d" + std::to_string(i)});
    const float fill[] = {0.5f};
    auto set = composer::build_composed_set(donors, fill, true, 1);
    ASSERT_EQ(set.examples.size(), 3u);
    EXPECT_EQ(set.same_class, 3u);
    for (const auto& e : set.examples) EXPECT_NE(e.donor_i, e.donor_j);
}

TEST(BuildComposedSet, SingleDonorIsSkipped) {
    Image a(1, 2, 2, 0.3f);
    BinaryMask m(2, 2, 1);
    composer::Donor donors[] = {{&a, &m, 0, "a"}};
    const float fill[] = {0.5f};
    auto set = composer::build_composed_set(donors, fill, true, 1);
    EXPECT_TRUE(set.examples.empty());
    EXPECT_EQ(set.skipped, 1u);
}

TEST(BuildComposedSet, InversionInvolution) {
    std::mt19937_64 gen(6);
    std::vector<Image> ims;
    std::vector<BinaryMask> masks, inverted;
    for (int i = 0; i < 8; ++i) {
        ims.push_back(random_image(2, 3, 3, gen));
        masks.push_back(random_mask(3, 3, gen));
        inverted.push_back(masks.back().inverted());
    }
    std::vector<composer::Donor> plain, flipped;
    for (int i = 0; i < 8; ++i) {
        plain.push_back({&ims[i], &masks[i], i % 2, "d" + std::to_string(i)});
        flipped.push_back({&ims[i], &inverted[i], i % 2, "d" + std::to_string(i)});
    }
    const float fill[] = {0.1f, 0.9f};
    auto a = composer::build_composed_set(plain, fill, false, 42);
    auto b = composer::build_composed_set(flipped, fill, true, 42);
    ASSERT_EQ(a.examples.size(), b.examples.size());
    for (std::size_t k = 0; k < a.examples.size(); ++k) {
        EXPECT_EQ(a.examples[k].image.data, b.examples[k].image.data);
        EXPECT_EQ(a.examples[k].donor_j, b.examples[k].donor_j);
        EXPECT_TRUE(a.examples[k].inverted);
    }
}
