#include "dac/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "dac/attribution.hpp"
#include "dac/io.hpp"

namespace dac::masking {

using json = nlohmann::json;

std::vector<double> make_grid(double step, double max_p) {
    if (!(step > 0.0) || !(max_p < 1.0) || max_p < 0.0) throw InvalidInput("make_grid: need step > 0 and max < 1");
    std::vector<double> grid;
    for (int k = 0;; ++k) {
        const double p = k * step;
        if (p > max_p + 1e-9) break;
        grid.push_back(std::round(p * 1e9) / 1e9);
    }
    return grid;
}

std::size_t masked_count(double p, std::size_t n) {
    return static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
}

BinaryMask mask_with_proportion(const AttributionMap& scores, double p) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidInput("mask_with_proportion: p must lie in [0,1)");
    const std::size_t n = scores.scores.size();
    if (n != static_cast<std::size_t>(scores.height) * scores.width)
        throw ShapeError("mask_with_proportion: score grid size mismatch");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.scores[a] < scores.scores[b]; });
    BinaryMask mask(scores.height, scores.width, 1);
    mask.proportion = p;
    const std::size_t count = std::min(masked_count(p, n), n);
    for (std::size_t i = 0; i < count; ++i) mask.bits[order[i]] = 0;
    return mask;
}

namespace {

void check_grid(std::span<const double> grid) {
    if (grid.empty()) throw InvalidInput("loss probe: empty grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] >= 0.0 && grid[i] < 1.0)) throw InvalidInput("loss probe: grid must lie in [0,1)");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw InvalidInput("loss probe: grid must be increasing");
    }
}

// Loss curves for several images in one forward batch.
std::vector<LossCurve> probe_many(const SplitModel& model, std::span<const Image* const> images,
                                  std::span<const int> labels, std::span<const AttributionMap> scores,
                                  std::span<const double> grid, std::span<const float> fill) {
    check_grid(grid);
    std::vector<Image> masked;
    std::vector<int> probe_labels;
    masked.reserve(images.size() * grid.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        for (double p : grid) {
            masked.push_back(apply_mask(*images[i], mask_with_proportion(scores[i], p), fill));
            probe_labels.push_back(labels[i]);
        }
    const int batch = static_cast<int>(masked.size());
    Matrix z = model.logits(pack_images(std::span<const Image>(masked), model.input_shape()), batch);
    auto losses = cross_entropy_per_example(z, probe_labels);
    std::vector<LossCurve> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        out[i].grid.assign(grid.begin(), grid.end());
        out[i].losses.assign(losses.begin() + static_cast<std::ptrdiff_t>(i * grid.size()),
                             losses.begin() + static_cast<std::ptrdiff_t>((i + 1) * grid.size()));
    }
    return out;
}

}  // namespace

LossCurve probe_loss_curve(const SplitModel& model, const Image& image, int label, const AttributionMap& scores,
                           std::span<const double> grid, std::span<const float> fill) {
    const Image* one[] = {&image};
    const int y[] = {label};
    return std::move(probe_many(model, one, y, std::span<const AttributionMap>(&scores, 1), grid, fill).front());
}

AdaptiveMaskResult choose_mask(const AttributionMap& scores, LossCurve curve, double sensitivity) {
    AdaptiveMaskResult r;
    if (curve.grid.size() >= 3) {
        kneedle::Options opt;
        opt.sensitivity = sensitivity;
        opt.rising = true;
        r.knee = kneedle::find_elbow({curve.grid, curve.losses}, opt);
    } else if (!(sensitivity > 0.0)) {
        throw InvalidInput("adaptive_mask: sensitivity must be positive");
    }
    r.proportion = r.knee.found ? r.knee.x_knee : 0.0;
    r.mask = mask_with_proportion(scores, r.proportion);
    r.curve = std::move(curve);
    return r;
}

AdaptiveMaskResult adaptive_mask(const SplitModel& model, const Image& image, int label,
                                 const AttributionMap& scores, std::span<const double> grid, double sensitivity,
                                 std::span<const float> fill) {
    return choose_mask(scores, probe_loss_curve(model, image, label, scores, grid, fill), sensitivity);
}

std::vector<AdaptiveMaskResult> precompute_masks(const SplitModel& model, std::span<const Image> images,
                                                 std::span<const int> labels, const PremaskOptions& options) {
    if (images.size() != labels.size()) throw InvalidInput("precompute_masks: labels misaligned");
    std::vector<AdaptiveMaskResult> results(images.size());
    const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
    const std::size_t n_chunks = (images.size() + chunk - 1) / chunk;

    auto run_chunk = [&](std::size_t c) {
        const std::size_t a = c * chunk;
        const std::size_t b = std::min(images.size(), a + chunk);
        std::vector<const Image*> ptrs;
        for (std::size_t i = a; i < b; ++i) ptrs.push_back(&images[i]);
        auto maps = attribution::xgradcam_batch(model, ptrs, labels.subspan(a, b - a));
        auto curves = probe_many(model, ptrs, labels.subspan(a, b - a), maps, options.grid, options.fill);
        for (std::size_t i = a; i < b; ++i)
            results[i] = choose_mask(maps[i - a], std::move(curves[i - a]), options.sensitivity);
    };

    const unsigned workers = std::max(1u, options.workers);
    if (workers == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
            });
    }
    return results;
}

void write_mask(const std::filesystem::path& dir, const std::string& id, const BinaryMask& mask) {
    io::write_mask_png(dir / (id + ".mask.png"), mask);
}

void write_mask_index(const std::filesystem::path& dir, const MaskCacheIndex& index) {
    json j;
    j["grid"] = index.grid;
    j["sensitivity"] = index.sensitivity;
    j["fill"] = index.fill;
    j["checkpoint_hash"] = index.checkpoint_hash;
    json entries = json::object();
    for (const auto& [id, e] : index.entries)
        entries[id] = {{"p_star", e.proportion}, {"knee_found", e.knee_found}, {"file", id + ".mask.png"}};
    j["entries"] = entries;
    io::write_text_atomic(dir / "index.json", j.dump(1));
}

MaskCacheIndex read_mask_index(const std::filesystem::path& dir) {
    MaskCacheIndex index;
    try {
        json j = json::parse(io::read_text(dir / "index.json"));
        index.grid = j.at("grid").get<std::vector<double>>();
        index.sensitivity = j.at("sensitivity");
        index.fill = j.at("fill").get<std::vector<float>>();
        index.checkpoint_hash = j.at("checkpoint_hash");
        for (const auto& [id, e] : j.at("entries").items())
            index.entries[id] = {e.at("p_star").get<double>(), e.at("knee_found").get<bool>()};
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("mask cache index malformed: ") + e.what());
    }
    return index;
}

std::vector<BinaryMask> load_masks(const std::filesystem::path& dir, std::span<const std::string> ids,
                                   const std::string& expected_hash) {
    MaskCacheIndex index = read_mask_index(dir);
    if (index.checkpoint_hash != expected_hash)
        throw StalenessError("mask cache was built from checkpoint " + index.checkpoint_hash + ", expected " +
                             expected_hash);
    std::vector<BinaryMask> masks;
    masks.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.entries.find(id);
        if (it == index.entries.end()) throw IntegrityError("mask cache has no entry for " + id);
        BinaryMask m = io::read_mask_png(dir / (id + ".mask.png"));
        m.proportion = it->second.proportion;
        masks.push_back(std::move(m));
    }
    return masks;
}

}  // namespace dac::masking
