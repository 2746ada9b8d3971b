#include "dac/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace dac {

Image apply_mask(const Image& image, const BinaryMask& mask, std::span<const float> fill) {
    if (mask.height != image.height || mask.width != image.width)
        throw ShapeError("apply_mask: mask shape does not match image");
    if (fill.size() != static_cast<std::size_t>(image.channels))
        throw ShapeError("apply_mask: fill must have one value per channel");
    Image out = image;
    const std::size_t hw = image.pixels();
    for (int c = 0; c < image.channels; ++c) {
        float* plane = out.data.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i)
            if (!mask.bits[i]) plane[i] = fill[c];
    }
    return out;
}

}  // namespace dac

namespace dac::io {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
        throw Error("sha256: init failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::span<const std::uint8_t> bytes) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
}

void Sha256::update(std::string_view text) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), text.data(), text.size());
}

void Sha256::update_floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), values.data(), values.size_bytes());
    } else {
        std::vector<std::uint8_t> buf;
        append_f32_le(buf, values);
        update(buf);
    }
}

std::string Sha256::hex_digest() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md, &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(digits[md[i] >> 4]);
        out.push_back(digits[md[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    Sha256 h;
    h.update(bytes);
    return h.hex_digest();
}

std::string sha256_hex(std::string_view text) {
    Sha256 h;
    h.update(text);
    return h.hex_digest();
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_bytes_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, std::string_view text) {
    write_bytes_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const fs::path& path, const Png& png) {
    if (png.channels != 1 && png.channels != 3) throw InvalidInput("write_png: channels must be 1 or 3");
    if (png.pixels.size() != static_cast<std::size_t>(png.width) * png.height * png.channels)
        throw ShapeError("write_png: pixel buffer size mismatch");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw Error("cannot write " + tmp.string());
        png_structp ps = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png_create_info_struct(ps);
        if (setjmp(png_jmpbuf(ps))) {
            png_destroy_write_struct(&ps, &info);
            throw Error("libpng write error: " + path.string());
        }
        png_init_io(ps, fp.get());
        png_set_IHDR(ps, info, png.width, png.height, 8,
                     png.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(ps, info);
        const std::size_t stride = static_cast<std::size_t>(png.width) * png.channels;
        for (int y = 0; y < png.height; ++y)
            png_write_row(ps, const_cast<png_bytep>(png.pixels.data() + y * stride));
        png_write_end(ps, nullptr);
        png_destroy_write_struct(&ps, &info);
    }
    fs::rename(tmp, path);
}

Png read_png(const fs::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error("cannot open " + path.string());
    png_structp ps = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(ps);
    Png out;
    if (setjmp(png_jmpbuf(ps))) {
        png_destroy_read_struct(&ps, &info, nullptr);
        throw IntegrityError("corrupt PNG: " + path.string());
    }
    png_init_io(ps, fp.get());
    png_read_info(ps, info);
    png_set_strip_16(ps);
    png_set_strip_alpha(ps);
    png_set_packing(ps);
    png_set_expand(ps);
    png_read_update_info(ps, info);
    out.width = static_cast<int>(png_get_image_width(ps, info));
    out.height = static_cast<int>(png_get_image_height(ps, info));
    out.channels = png_get_channels(ps, info);
    const std::size_t stride = png_get_rowbytes(ps, info);
    out.pixels.resize(stride * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * stride;
    png_read_image(ps, rows.data());
    png_read_end(ps, nullptr);
    png_destroy_read_struct(&ps, &info, nullptr);
    return out;
}

void write_mask_png(const fs::path& path, const BinaryMask& mask) {
    Png png{mask.width, mask.height, 1, {}};
    png.pixels.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) png.pixels[i] = mask.bits[i] ? 255 : 0;
    write_png(path, png);
}

BinaryMask read_mask_png(const fs::path& path) {
    Png png = read_png(path);
    if (png.channels != 1) throw IntegrityError("mask PNG must be grayscale: " + path.string());
    BinaryMask mask(png.height, png.width, 0);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask.bits[i] = png.pixels[i] >= 128 ? 1 : 0;
        kept += mask.bits[i];
    }
    mask.proportion = mask.size() ? 1.0 - static_cast<double>(kept) / mask.size() : 0.0;
    return mask;
}

void write_heatmap_png(const fs::path& path, const AttributionMap& map) {
    Png png{map.width, map.height, 1, {}};
    png.pixels.resize(map.scores.size());
    for (std::size_t i = 0; i < map.scores.size(); ++i) {
        float v = std::clamp(map.scores[i], 0.0f, 1.0f);
        png.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    write_png(path, png);
}

Png image_to_png(const Image& image) {
    const int ch = image.channels == 1 ? 1 : 3;
    Png png{image.width, image.height, ch, {}};
    png.pixels.resize(image.pixels() * ch);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < ch; ++c) {
                float v = std::clamp(image.at(std::min(c, image.channels - 1), y, x), 0.0f, 1.0f);
                png.pixels[(static_cast<std::size_t>(y) * image.width + x) * ch + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    return png;
}

void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) out[start + i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
}

void read_f32_le(std::span<const std::uint8_t> in, std::size_t offset, std::span<float> out) {
    if (offset + out.size() * 4 > in.size()) throw IntegrityError("truncated float32 blob");
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(in[offset + i * 4 + b]) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
}

}  // namespace dac::io
