#pragma once

#include <cstddef>
#include <vector>

namespace dac::kneedle {

// Sampled curve. xs strictly increasing, ys finite, at least 3 points.
struct CurvePoints {
    std::vector<double> xs;
    std::vector<double> ys;
};

struct KneeResult {
    bool found = false;
    double x_knee = 0.0;   // valid when found; always an element of xs
    std::size_t index = 0;
};

struct Options {
    double sensitivity = 1.0;
    // Convex increasing curves (loss vs. masked proportion) are rising.
    bool rising = true;
    // Centered moving-average window over ys; 1 disables smoothing.
    std::size_t smoothing_window = 1;
};

// Throws InvalidInput unless size >= 3, sizes match, xs strictly
// increasing and every value finite.
void validate(const CurvePoints& points);

// Min-max normalization of both axes to [0,1]. A constant y-range maps to zeros.
CurvePoints normalize_curve(const CurvePoints& points);

// ys[i] - xs[i] on an already normalized curve.
CurvePoints difference_curve(const CurvePoints& points);

// Kneedle: normalize, build the difference curve, and return the first local
// maximum that is followed by a value below its threshold
// T = d_max - S * mean(dx) before the next local maximum.
//
// For rising (convex increasing) curves the normalized curve is reflected
// through (0.5, 0.5), which turns the elbow into a knee; the difference curve
// is then x - y.
KneeResult find_elbow(const CurvePoints& points, const Options& options = {});
inline KneeResult find_elbow(const CurvePoints& points, double sensitivity, bool rising) {
    return find_elbow(points, Options{sensitivity, rising, 1});
}

// Exhaustive cross-check: the interior point with the largest turning angle
// between adjacent normalized segments. Smallest index wins ties; a curve
// with no turning at all reports found = false.
KneeResult max_curvature_oracle(const CurvePoints& points);

}  // namespace dac::kneedle
