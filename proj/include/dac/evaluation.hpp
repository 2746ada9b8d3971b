#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dac/backbone.hpp"
#include "dac/image.hpp"
#include "dac/synthdata.hpp"

namespace dac::eval {

struct GroupMetrics {
    std::vector<double> accuracy;      // per group; groups with no examples hold 0 and are listed in `excluded`
    std::vector<std::size_t> counts;   // per group
    std::vector<std::string> excluded; // names of empty groups
    double worst = 0.0;                // min over non-empty groups
    double average = 0.0;              // unweighted mean over non-empty groups
    double sample_weighted = 0.0;      // plain accuracy over all examples
};

GroupMetrics group_metrics(std::span<const int> predictions, std::span<const int> labels, std::span<const int> groups,
                           int num_classes);

struct Inference {
    std::vector<double> losses;
    std::vector<int> predictions;
};

// Per-example loss and argmax prediction, in batches.
Inference infer(const SplitModel& model, std::span<const Image* const> images, std::span<const int> labels,
                int batch_size = 256);
Inference infer(const SplitModel& model, const synth::Split& split, int batch_size = 256);
// Same for precomputed embeddings (D x N) and a head.
Inference infer_head(const LinearHead& head, const Matrix& embeddings, std::span<const int> labels);

GroupMetrics group_metrics(const SplitModel& model, const synth::Split& split, int num_classes);

// Rank-based loss quartiles: examples sorted by (loss, index) and bucket =
// floor(4 * rank / n). Buckets partition the data and differ in size by at
// most one; equal losses keep index order.
std::vector<int> loss_quartiles(std::span<const double> losses);

struct QuantileAttentionStats {
    std::array<double, 5> edges{};        // min, q25, q50, q75, max of the loss
    std::array<double, 4> causal{};       // mean attribution inside the causal region (C)
    std::array<double, 4> spurious{};     // mean attribution inside the spurious region (S)
    std::array<std::size_t, 4> counts{};
};

QuantileAttentionStats quantile_attention_stats(std::span<const double> losses, std::span<const AttributionMap> maps,
                                                std::span<const BinaryMask> causal_regions);
// Computes losses and xGradCAM maps (true-label target) with `model`.
QuantileAttentionStats quantile_attention_stats(const SplitModel& model, const synth::Split& split);

struct GroupLossDistribution {
    std::array<double, 4> minority{};  // P(quartile | minority)
    std::array<double, 4> majority{};  // P(quartile | majority)
    std::size_t n_minority = 0;
    std::size_t n_majority = 0;
};

GroupLossDistribution group_loss_distribution(std::span<const double> losses, std::span<const bool> minority);
GroupLossDistribution group_loss_distribution(const SplitModel& model, const synth::Split& split);

// |keep_a & keep_b| / |keep_a | keep_b|; 1 when both keep-sets are empty.
double mask_iou(const BinaryMask& mask, const BinaryMask& oracle);

}  // namespace dac::eval
