#pragma once

#include <span>
#include <vector>

#include "dac/backbone.hpp"
#include "dac/image.hpp"

namespace dac::attribution {

inline constexpr double kDenominatorEps = 1e-8;

// xGradCAM on the last convolutional activations A of `model`:
//   alpha_k = sum_hw(dy_t/dA_k * A_k) / (sum_hw A_k + eps)
//   raw     = relu(sum_k alpha_k A_k)
// bilinearly upsampled to the input resolution and min-max normalized.
// Throws NumericError when gradients or activations are not finite.
AttributionMap xgradcam(const SplitModel& model, const Image& image, int target);

// Same, for a batch of images (one target per image).
std::vector<AttributionMap> xgradcam_batch(const SplitModel& model, std::span<const Image* const> images,
                                           std::span<const int> targets);

// Bilinear resize with half-pixel centers (edge-clamped).
std::vector<float> upsample_bilinear(std::span<const float> src, int src_h, int src_w, int dst_h, int dst_w);

// Min-max normalization to [0,1]; an all-zero map stays zero and any other
// constant map becomes all ones.
void normalize_scores(std::vector<float>& scores);

// Mean score over pixels where region = 1. Empty region -> InvalidInput.
double region_mean_score(const AttributionMap& map, const BinaryMask& region);

}  // namespace dac::attribution
