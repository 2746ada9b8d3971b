#include "dac/kneedle.hpp"

#include <algorithm>
#include <cmath>

#include "dac/error.hpp"

namespace dac::kneedle {

void validate(const CurvePoints& points) {
    if (points.xs.size() != points.ys.size())
        throw InvalidInput("curve: xs and ys differ in length");
    if (points.xs.size() < 3) throw InvalidInput("curve: need at least 3 points");
    for (std::size_t i = 0; i < points.xs.size(); ++i) {
        if (!std::isfinite(points.xs[i]) || !std::isfinite(points.ys[i]))
            throw InvalidInput("curve: non-finite value");
        if (i > 0 && !(points.xs[i] > points.xs[i - 1]))
            throw InvalidInput("curve: xs must be strictly increasing");
    }
}

namespace {

std::vector<double> min_max(const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = *hi - *lo;
    std::vector<double> out(v.size(), 0.0);
    if (span > 0.0)
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / span;
    return out;
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
    if (window <= 1) return v;
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(v.size());
    std::vector<double> out(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, i - half);
        const std::ptrdiff_t b = std::min<std::ptrdiff_t>(n - 1, i + half);
        double s = 0.0;
        for (std::ptrdiff_t j = a; j <= b; ++j) s += v[j];
        out[i] = s / static_cast<double>(b - a + 1);
    }
    return out;
}

}  // namespace

CurvePoints normalize_curve(const CurvePoints& points) {
    if (points.xs.size() < 3 || points.xs.size() != points.ys.size())
        throw InvalidInput("normalize_curve: need at least 3 aligned points");
    const auto [lo, hi] = std::minmax_element(points.xs.begin(), points.xs.end());
    if (!(*hi > *lo)) throw InvalidInput("normalize_curve: degenerate x-range");
    return {min_max(points.xs), min_max(points.ys)};
}

CurvePoints difference_curve(const CurvePoints& points) {
    CurvePoints out = points;
    for (std::size_t i = 0; i < out.ys.size(); ++i) out.ys[i] = points.ys[i] - points.xs[i];
    return out;
}

KneeResult find_elbow(const CurvePoints& points, const Options& options) {
    if (!(options.sensitivity > 0.0) || !std::isfinite(options.sensitivity))
        throw InvalidInput("find_elbow: sensitivity must be positive");
    validate(points);

    CurvePoints smoothed{points.xs, moving_average(points.ys, options.smoothing_window)};
    CurvePoints norm = normalize_curve(smoothed);
    const std::size_t n = norm.xs.size();

    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i)
        diff[i] = options.rising ? norm.xs[i] - norm.ys[i] : norm.ys[i] - norm.xs[i];

    std::vector<std::size_t> maxima;
    for (std::size_t i = 1; i + 1 < n; ++i)
        if (diff[i] > diff[i - 1] && diff[i] >= diff[i + 1] && diff[i] > 0.0) maxima.push_back(i);

    // mean spacing of normalized xs is 1/(n-1) by construction
    const double step = (norm.xs.back() - norm.xs.front()) / static_cast<double>(n - 1);
    for (std::size_t m = 0; m < maxima.size(); ++m) {
        const std::size_t peak = maxima[m];
        const double threshold = diff[peak] - options.sensitivity * step;
        const std::size_t stop = m + 1 < maxima.size() ? maxima[m + 1] : n;
        for (std::size_t j = peak + 1; j < stop; ++j)
            if (diff[j] < threshold) return {true, points.xs[peak], peak};
    }
    return {};
}

KneeResult max_curvature_oracle(const CurvePoints& points) {
    validate(points);
    CurvePoints norm = normalize_curve(points);
    const std::size_t n = norm.xs.size();
    constexpr double kPi = 3.14159265358979323846;
    constexpr double kTol = 1e-12;
    double best = 0.0;
    KneeResult result;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double a1 = std::atan2(norm.ys[i] - norm.ys[i - 1], norm.xs[i] - norm.xs[i - 1]);
        const double a2 = std::atan2(norm.ys[i + 1] - norm.ys[i], norm.xs[i + 1] - norm.xs[i]);
        double turn = std::fabs(a2 - a1);
        if (turn > kPi) turn = 2.0 * kPi - turn;
        if (turn > best + kTol) {
            best = turn;
            result = {true, points.xs[i], i};
        }
    }
    return result;
}

}  // namespace dac::kneedle
