#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dac/error.hpp"

namespace dac {

// C x H x W float image, channel-major.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float value = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, value) {}

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Per-pixel keep (1) / discard (0) map. `proportion` records the requested
// masked fraction; pixel order for ties is always row-major.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;
    double proportion = 0.0;

    BinaryMask() = default;
    BinaryMask(int h, int w, std::uint8_t value = 1)
        : height(h), width(w), bits(static_cast<std::size_t>(h) * w, value) {}

    std::size_t size() const { return bits.size(); }
    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count_kept() const;
    std::size_t count_masked() const { return size() - count_kept(); }
    BinaryMask inverted() const;
    bool operator==(const BinaryMask& o) const {
        return height == o.height && width == o.width && bits == o.bits;
    }
};

// Relevance scores in [0,1], aligned to the source image's spatial grid.
struct AttributionMap {
    int height = 0;
    int width = 0;
    std::vector<float> scores;
    std::string image_id;
    int target_label = 0;

    float at(int y, int x) const { return scores[static_cast<std::size_t>(y) * width + x]; }
};

inline std::size_t BinaryMask::count_kept() const {
    std::size_t n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
}

inline BinaryMask BinaryMask::inverted() const {
    BinaryMask out = *this;
    for (auto& b : out.bits) b = b ? 0 : 1;
    out.proportion = 1.0 - proportion;
    return out;
}

// Replace every pixel with mask bit 0 by `fill` (one value per channel).
Image apply_mask(const Image& image, const BinaryMask& mask, std::span<const float> fill);

}  // namespace dac
