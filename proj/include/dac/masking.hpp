#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dac/backbone.hpp"
#include "dac/image.hpp"
#include "dac/kneedle.hpp"

namespace dac::masking {

// Loss of the frozen model on the image with proportion grid[i] masked.
struct LossCurve {
    std::vector<double> grid;
    std::vector<double> losses;
};

// Proportions k*step for k = 0, 1, ... up to `max_p` (inclusive); 1 is never
// part of a grid because masking everything is uninformative.
std::vector<double> make_grid(double step, double max_p = 0.9);
inline std::vector<double> default_grid() { return make_grid(0.05); }
inline std::vector<double> coarse_grid() { return make_grid(0.2); }

// floor(p * n), robust to representation error in p (e.g. 0.35 * 20).
std::size_t masked_count(double p, std::size_t n);

// Zero the floor(p*H*W) lowest-scoring pixels; ties resolved by row-major
// index (stable sort). p must be in [0,1).
BinaryMask mask_with_proportion(const AttributionMap& scores, double p);

LossCurve probe_loss_curve(const SplitModel& model, const Image& image, int label, const AttributionMap& scores,
                           std::span<const double> grid, std::span<const float> fill);

struct AdaptiveMaskResult {
    BinaryMask mask;
    LossCurve curve;
    kneedle::KneeResult knee;
    double proportion = 0.0;  // p*, 0 when no knee was found
};

// Elbow of the loss curve picks p*; without an elbow the whole image is kept.
AdaptiveMaskResult choose_mask(const AttributionMap& scores, LossCurve curve, double sensitivity);

AdaptiveMaskResult adaptive_mask(const SplitModel& model, const Image& image, int label,
                                 const AttributionMap& scores, std::span<const double> grid, double sensitivity,
                                 std::span<const float> fill);

struct PremaskOptions {
    std::vector<double> grid = default_grid();
    double sensitivity = 1.0;
    std::vector<float> fill;   // per channel
    std::size_t chunk = 16;    // images per attribution/probe batch
    unsigned workers = 1;
};

// Attribution + adaptive mask for every image using `model` (frozen ERM).
// Results are independent of the worker count. The chunk size changes the
// floating-point rounding of the probe losses, so caches are only
// bit-reproducible for a fixed chunk size.
std::vector<AdaptiveMaskResult> precompute_masks(const SplitModel& model, std::span<const Image> images,
                                                 std::span<const int> labels, const PremaskOptions& options);

// On-disk mask cache: <id>.mask.png per image plus index.json.
struct MaskCacheEntry {
    double proportion = 0.0;
    bool knee_found = false;
};

struct MaskCacheIndex {
    std::vector<double> grid;
    double sensitivity = 1.0;
    std::vector<float> fill;
    std::string checkpoint_hash;
    std::map<std::string, MaskCacheEntry> entries;
};

void write_mask(const std::filesystem::path& dir, const std::string& id, const BinaryMask& mask);
void write_mask_index(const std::filesystem::path& dir, const MaskCacheIndex& index);
MaskCacheIndex read_mask_index(const std::filesystem::path& dir);

// Loads the masks for `ids`. Throws StalenessError if the cache was built
// from a checkpoint other than `expected_hash`, IntegrityError if an id is
// missing.
std::vector<BinaryMask> load_masks(const std::filesystem::path& dir, std::span<const std::string> ids,
                                   const std::string& expected_hash);

}  // namespace dac::masking
