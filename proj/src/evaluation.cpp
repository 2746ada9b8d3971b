#include "dac/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>

#include "dac/attribution.hpp"

namespace dac::eval {

GroupMetrics group_metrics(std::span<const int> predictions, std::span<const int> labels, std::span<const int> groups,
                           int num_classes) {
    if (predictions.size() != labels.size() || labels.size() != groups.size())
        throw InvalidInput("group_metrics: predictions, labels and groups must align");
    const std::size_t n_groups = static_cast<std::size_t>(num_classes) * num_classes;
    GroupMetrics m;
    m.accuracy.assign(n_groups, 0.0);
    m.counts.assign(n_groups, 0);
    std::vector<std::size_t> correct(n_groups, 0);
    std::size_t total_correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto g = static_cast<std::size_t>(groups[i]);
        if (g >= n_groups) throw InvalidInput("group_metrics: group index out of range");
        ++m.counts[g];
        const bool ok = predictions[i] == labels[i];
        correct[g] += ok ? 1 : 0;
        total_correct += ok ? 1 : 0;
    }
    double sum = 0.0;
    std::size_t used = 0;
    m.worst = 1.0;
    for (std::size_t g = 0; g < n_groups; ++g) {
        if (m.counts[g] == 0) {
            m.excluded.push_back(synth::group_name(static_cast<int>(g), num_classes));
            continue;
        }
        m.accuracy[g] = static_cast<double>(correct[g]) / static_cast<double>(m.counts[g]);
        m.worst = std::min(m.worst, m.accuracy[g]);
        sum += m.accuracy[g];
        ++used;
    }
    if (used == 0) throw InvalidInput("group_metrics: no examples");
    m.average = sum / static_cast<double>(used);
    m.sample_weighted = static_cast<double>(total_correct) / static_cast<double>(labels.size());
    return m;
}

Inference infer(const SplitModel& model, std::span<const Image* const> images, std::span<const int> labels,
                int batch_size) {
    Inference out;
    out.losses.reserve(images.size());
    out.predictions.reserve(images.size());
    for (std::size_t a = 0; a < images.size(); a += batch_size) {
        const std::size_t b = std::min(images.size(), a + static_cast<std::size_t>(batch_size));
        const int n = static_cast<int>(b - a);
        Matrix z = model.logits(pack_images(images.subspan(a, b - a), model.input_shape()), n);
        auto l = cross_entropy_per_example(z, labels.subspan(a, b - a));
        auto p = argmax_per_column(z);
        out.losses.insert(out.losses.end(), l.begin(), l.end());
        out.predictions.insert(out.predictions.end(), p.begin(), p.end());
    }
    return out;
}

Inference infer(const SplitModel& model, const synth::Split& split, int batch_size) {
    std::vector<const Image*> images;
    std::vector<int> labels;
    for (const auto& ex : split.examples) {
        images.push_back(&ex.image);
        labels.push_back(ex.label);
    }
    return infer(model, images, labels, batch_size);
}

Inference infer_head(const LinearHead& head, const Matrix& embeddings, std::span<const int> labels) {
    Matrix z = head.logits(embeddings);
    return {cross_entropy_per_example(z, labels), argmax_per_column(z)};
}

GroupMetrics group_metrics(const SplitModel& model, const synth::Split& split, int num_classes) {
    auto inf = infer(model, split);
    std::vector<int> labels, groups;
    for (const auto& ex : split.examples) {
        labels.push_back(ex.label);
        groups.push_back(ex.group(num_classes));
    }
    return group_metrics(inf.predictions, labels, groups, num_classes);
}

std::vector<int> loss_quartiles(std::span<const double> losses) {
    const std::size_t n = losses.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
    std::vector<int> bucket(n);
    for (std::size_t r = 0; r < n; ++r) bucket[order[r]] = static_cast<int>((4 * r) / n);
    return bucket;
}

namespace {

std::array<double, 5> quartile_edges(std::span<const double> losses) {
    std::vector<double> sorted(losses.begin(), losses.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    std::array<double, 5> e{};
    for (int q = 0; q <= 4; ++q) e[q] = sorted[std::min(n - 1, (q * n) / 4)];
    e[4] = sorted.back();
    return e;
}

}  // namespace

QuantileAttentionStats quantile_attention_stats(std::span<const double> losses, std::span<const AttributionMap> maps,
                                                std::span<const BinaryMask> causal_regions) {
    if (losses.size() < 4) throw InvalidInput("quantile_attention_stats: need at least 4 examples");
    if (maps.size() != losses.size() || causal_regions.size() != losses.size())
        throw InvalidInput("quantile_attention_stats: inputs must align");
    QuantileAttentionStats s;
    s.edges = quartile_edges(losses);
    auto bucket = loss_quartiles(losses);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const int q = bucket[i];
        s.causal[q] += attribution::region_mean_score(maps[i], causal_regions[i]);
        s.spurious[q] += attribution::region_mean_score(maps[i], causal_regions[i].inverted());
        ++s.counts[q];
    }
    for (int q = 0; q < 4; ++q) {
        s.causal[q] /= static_cast<double>(s.counts[q]);
        s.spurious[q] /= static_cast<double>(s.counts[q]);
    }
    return s;
}

QuantileAttentionStats quantile_attention_stats(const SplitModel& model, const synth::Split& split) {
    std::vector<const Image*> images;
    std::vector<int> labels;
    std::vector<BinaryMask> regions;
    for (const auto& ex : split.examples) {
        images.push_back(&ex.image);
        labels.push_back(ex.label);
        regions.push_back(ex.causal_region);
    }
    auto inf = infer(model, images, labels);
    std::vector<AttributionMap> maps;
    maps.reserve(images.size());
    constexpr std::size_t chunk = 128;
    for (std::size_t a = 0; a < images.size(); a += chunk) {
        const std::size_t b = std::min(images.size(), a + chunk);
        auto part = attribution::xgradcam_batch(model, std::span<const Image* const>(images).subspan(a, b - a),
                                                std::span<const int>(labels).subspan(a, b - a));
        for (auto& m : part) maps.push_back(std::move(m));
    }
    return quantile_attention_stats(inf.losses, maps, regions);
}

GroupLossDistribution group_loss_distribution(std::span<const double> losses, std::span<const bool> minority) {
    if (losses.size() != minority.size()) throw InvalidInput("group_loss_distribution: inputs must align");
    if (losses.size() < 4) throw InvalidInput("group_loss_distribution: need at least 4 examples");
    GroupLossDistribution d;
    auto bucket = loss_quartiles(losses);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (minority[i]) {
            d.minority[bucket[i]] += 1.0;
            ++d.n_minority;
        } else {
            d.majority[bucket[i]] += 1.0;
            ++d.n_majority;
        }
    }
    if (d.n_minority == 0) throw InvalidInput("group_loss_distribution: no minority examples");
    for (int q = 0; q < 4; ++q) {
        d.minority[q] /= static_cast<double>(d.n_minority);
        if (d.n_majority) d.majority[q] /= static_cast<double>(d.n_majority);
    }
    return d;
}

GroupLossDistribution group_loss_distribution(const SplitModel& model, const synth::Split& split) {
    auto inf = infer(model, split);
    std::vector<bool> minority_vec;
    for (const auto& ex : split.examples) minority_vec.push_back(ex.minority());
    std::unique_ptr<bool[]> flags(new bool[minority_vec.size()]);
    for (std::size_t i = 0; i < minority_vec.size(); ++i) flags[i] = minority_vec[i];
    return group_loss_distribution(inf.losses, std::span<const bool>(flags.get(), minority_vec.size()));
}

double mask_iou(const BinaryMask& mask, const BinaryMask& oracle) {
    if (mask.height != oracle.height || mask.width != oracle.width) throw ShapeError("mask_iou: shapes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const bool a = mask.bits[i], b = oracle.bits[i];
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dac::eval
