#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dac/image.hpp"

namespace dac::io {

namespace fs = std::filesystem;

// Incremental SHA-256, hex digest.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::uint8_t> bytes);
    void update(std::string_view text);
    void update_floats(std::span<const float> values);  // little-endian float32 bytes
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::vector<std::uint8_t> read_bytes(const fs::path& path);
std::string read_text(const fs::path& path);

// Write to a sibling temp file, then rename over `path`.
void write_bytes_atomic(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const fs::path& path, std::string_view text);

// 8-bit PNG encode/decode. `channels` is 1 (gray) or 3 (RGB); pixels are
// row-major interleaved.
struct Png {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;
};
void write_png(const fs::path& path, const Png& png);
Png read_png(const fs::path& path);

// Mask <-> PNG: 0 = masked, 255 = kept.
void write_mask_png(const fs::path& path, const BinaryMask& mask);
BinaryMask read_mask_png(const fs::path& path);

// Linear 0..255 grayscale mapping of [0,1] scores.
void write_heatmap_png(const fs::path& path, const AttributionMap& map);

// Image in [0,1] to an RGB (or gray) PNG, values clamped.
Png image_to_png(const Image& image);

// Little-endian float32 blobs.
void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values);
void read_f32_le(std::span<const std::uint8_t> in, std::size_t offset, std::span<float> out);

}  // namespace dac::io
