#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dac/error.hpp"
#include "dac/kneedle.hpp"

using namespace dac::kneedle;

namespace {

void expect_near_all(const std::vector<double>& got, const std::vector<double>& want) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << "at " << i;
}

// Flat until `bend`, then a straight rise of the given slope.
CurvePoints hinge(double step, double last, double bend, double slope) {
    CurvePoints c;
    for (int k = 0; k * step <= last + 1e-9; ++k) {
        const double x = k * step;
        c.xs.push_back(x);
        c.ys.push_back(x <= bend + 1e-9 ? 0.0 : slope * (x - bend));
    }
    return c;
}

}  // namespace

TEST(KneedleNormalize, ConstantCurveMapsToZeros) {
    auto n = normalize_curve({{0, 0.5, 1}, {2, 2, 2}});
    expect_near_all(n.xs, {0, 0.5, 1});
    expect_near_all(n.ys, {0, 0, 0});
}

TEST(KneedleNormalize, MinMaxByHand) {
    auto n = normalize_curve({{10, 20, 30}, {0, 1, 4}});
    expect_near_all(n.xs, {0, 0.5, 1});
    expect_near_all(n.ys, {0, 0.25, 1});
}

TEST(KneedleNormalize, AlreadyNormalLine) {
    auto n = normalize_curve({{0, 1, 2}, {0, 1, 2}});
    expect_near_all(n.xs, {0, 0.5, 1});
    expect_near_all(n.ys, {0, 0.5, 1});
}

TEST(KneedleDifference, IdentityLineIsZero) {
    expect_near_all(difference_curve({{0, 0.5, 1}, {0, 0.5, 1}}).ys, {0, 0, 0});
}

TEST(KneedleDifference, Arithmetic) {
    expect_near_all(difference_curve({{0, 0.5, 1}, {0, 0.9, 1}}).ys, {0, 0.4, 0});
    expect_near_all(difference_curve({{0, 0.5, 1}, {0, 0.1, 1}}).ys, {0, -0.4, 0});
}

TEST(KneedleValidate, RejectsBadCurves) {
    EXPECT_THROW(validate({{0, 1}, {0, 1}}), dac::InvalidInput);
    EXPECT_THROW(validate({{0, 1, 2}, {0, 1}}), dac::InvalidInput);
    EXPECT_THROW(validate({{0, 1, 1}, {0, 1, 2}}), dac::InvalidInput);
    EXPECT_THROW(validate({{0, 1, 2}, {0, NAN, 2}}), dac::InvalidInput);
    EXPECT_NO_THROW(validate({{0, 1, 2}, {0, 1, 2}}));
}

TEST(KneedleFindElbow, StraightLineHasNoKnee) {
    CurvePoints line{{0, 0.25, 0.5, 0.75, 1}, {0, 0.25, 0.5, 0.75, 1}};
    EXPECT_FALSE(find_elbow(line).found);
    EXPECT_FALSE(max_curvature_oracle(line).found);
}

TEST(KneedleFindElbow, FlatThenLinearBendsAtPointSix) {
    auto c = hinge(0.1, 0.9, 0.6, 10.0);
    auto k = find_elbow(c);
    ASSERT_TRUE(k.found);
    EXPECT_NEAR(k.x_knee, 0.6, 1e-9);
    EXPECT_EQ(k.index, 6u);
    EXPECT_EQ(max_curvature_oracle(c).index, 6u);
}

TEST(KneedleFindElbow, MaskingLossCurveKneeInUpperRange) {
    // Loss vs masked proportion: almost flat, then a rapid convex rise.
    CurvePoints c;
    for (int k = 0; k <= 18; ++k) {
        const double p = 0.05 * k;
        c.xs.push_back(p);
        c.ys.push_back(0.05 + 0.02 * p + (p > 0.65 ? 12.0 * (p - 0.65) * (p - 0.65) + 1.5 * (p - 0.65) : 0.0));
    }
    auto k = find_elbow(c);
    ASSERT_TRUE(k.found);
    EXPECT_GE(k.x_knee, 0.6);
    EXPECT_LE(k.x_knee, 0.8);
}

TEST(KneedleOracle, SingleBendAtPointSix) {
    CurvePoints c{{0, 0.2, 0.4, 0.6, 0.8, 1.0}, {0, 0.1, 0.2, 0.3, 1.3, 2.3}};
    auto k = max_curvature_oracle(c);
    ASSERT_TRUE(k.found);
    EXPECT_DOUBLE_EQ(k.x_knee, 0.6);
}

TEST(KneedleOracle, SymmetricVee) {
    CurvePoints c{{0, 0.25, 0.5, 0.75, 1}, {1, 0.5, 0, 0.5, 1}};
    auto k = max_curvature_oracle(c);
    ASSERT_TRUE(k.found);
    EXPECT_DOUBLE_EQ(k.x_knee, 0.5);
}

TEST(KneedleProperties, RandomHingesAgreeWithConstructionAndAreAffineInvariant) {
    std::mt19937_64 gen(11);
    std::uniform_int_distribution<int> bend_index(3, 15);
    std::uniform_real_distribution<double> slope(1.0, 20.0), scale(0.1, 50.0), shift(-10.0, 10.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int b = bend_index(gen);
        auto c = hinge(0.05, 0.9, 0.05 * b, slope(gen));
        auto k = find_elbow(c);
        ASSERT_TRUE(k.found);
        EXPECT_EQ(k.index, static_cast<std::size_t>(b));
        EXPECT_EQ(k.x_knee, c.xs[k.index]);

        CurvePoints t = c;
        const double a = scale(gen), bx = shift(gen), cy = scale(gen), dy = shift(gen);
        for (auto& x : t.xs) x = a * x + bx;
        for (auto& y : t.ys) y = cy * y + dy;
        EXPECT_EQ(find_elbow(t).index, k.index);
    }
}

TEST(KneedleProperties, Deterministic) {
    auto c = hinge(0.05, 0.9, 0.45, 3.0);
    auto a = find_elbow(c), b = find_elbow(c);
    EXPECT_EQ(a.found, b.found);
    EXPECT_EQ(a.index, b.index);
}
