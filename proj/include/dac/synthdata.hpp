#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dac/image.hpp"

namespace dac::synth {

// stacked: spurious glyph panel on top, causal shape panel below (Dominoes).
// fg_bg:   causal shape patch placed on a background texture that carries
//          the spurious value.
enum class Layout { stacked, fg_bg };

std::string to_string(Layout layout);
Layout layout_from_string(const std::string& name);

struct GenConfig {
    int n_train = 8000;
    int n_val = 1000;
    int n_test = 2000;
    double correlation = 0.95;  // fraction of each class whose spurious value agrees with the label
    int height = 64;
    int width = 32;
    int num_classes = 2;
    Layout layout = Layout::stacked;
    double noise_std = 0.05;
    // Contrast of the causal shape against its panel, in (0,1]; lower is harder.
    double causal_contrast = 0.4;
    // Fraction of examples (every split) whose causal panel shows the next
    // class's shape, so the causal cue is informative but not perfect.
    double causal_flip = 0.1;
    // Amplitude of the spurious stripe patch, in (0,0.5].
    double spurious_amplitude = 0.45;
    std::uint64_t seed = 0;
};

// Throws ConfigError on out-of-range values or an allocation that leaves a
// class or test group empty.
void validate(const GenConfig& config);

struct Example {
    std::string id;
    Image image;  // 3 x H x W in [0,1]
    int label = 0;
    int spurious = 0;
    BinaryMask causal_region;  // ground truth; complement is the spurious region

    int group(int num_classes) const { return label * num_classes + spurious; }
    bool minority() const { return spurious != label; }
    BinaryMask spurious_region() const { return causal_region.inverted(); }
};

struct Split {
    std::string name;
    std::vector<Example> examples;
};

struct Dataset {
    GenConfig config;
    Split train, val, test;

    const Split& split(const std::string& name) const;
};

// Train follows `correlation` exactly per class (deterministic allocation,
// then a seeded shuffle); val and test are group-balanced.
Dataset generate(const GenConfig& config);

std::string group_name(int group, int num_classes);
// counts[group] for one split
std::vector<std::size_t> group_counts(const Split& split, int num_classes);

// SHA-256 over ids, labels, spurious values, image bytes and region bits of
// every split, in split order.
std::string content_hash(const Dataset& dataset);

// Layout on disk:
//   manifest.json                 GenConfig, group counts per split, content hash
//   images/<split>.f32            N x C x H x W little-endian float32
//   images/<split>.json           dtype, shape, ids, labels, spurious values
//   masks/<id>.png                ground-truth causal region (255 = causal)
void write_manifest(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_manifest(const std::filesystem::path& dir);

// Image with the spurious region replaced by `fill`.
Image causal_crop(const Example& example, std::span<const float> fill);

// Per-channel mean over a split.
std::vector<float> channel_mean(const Split& split);

// Generator bookkeeping for a composition: whose causal and spurious content
// is visible in m_i*x_i + (1-m_i)(1-m_j)*x_j + (1-m_i)*m_j*b.
struct CompositionSemantics {
    int causal_label = -1;    // -1: no donor's causal content is predominantly visible
    int spurious_value = -1;
    bool minority() const { return causal_label >= 0 && spurious_value >= 0 && causal_label != spurious_value; }
};
CompositionSemantics classify_composition(const Example& donor_i, const BinaryMask& m_i, const Example& donor_j,
                                          const BinaryMask& m_j);

}  // namespace dac::synth
