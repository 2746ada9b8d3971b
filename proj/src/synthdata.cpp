#include "dac/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "dac/io.hpp"
#include "dac/random.hpp"

namespace dac::synth {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kChannels = 3;
constexpr int kSuper = 4;  // supersampling factor for shape edges
constexpr double kPatchFraction = 0.625;  // stripe patch side relative to its panel
constexpr double kPatchJitter = 2.0;      // pixels
constexpr double kStripePeriod = 8.0;     // pixels

struct Rect {
    int y0, x0, h, w;
};

// Fraction of the pixel (px,py) covered by a shape, estimated on a
// kSuper x kSuper subgrid.
template <class Inside>
double coverage(int py, int px, Inside inside) {
    int hits = 0;
    for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx)
            hits += inside(py + (sy + 0.5) / kSuper, px + (sx + 0.5) / kSuper) ? 1 : 0;
    return static_cast<double>(hits) / (kSuper * kSuper);
}

// Shape family per class; all families have roughly equal area for a given size.
constexpr std::array<int, 4> kShapeFamily{1, 3, 2, 0};

bool inside_shape(int family, double y, double x, double cy, double cx, double r) {
    const double dy = y - cy, dx = x - cx;
    switch (family % 4) {
        case 0:  // disc
            return dx * dx + dy * dy <= r * r;
        case 1: {  // square of equal area
            const double h = r * 0.886;
            return std::fabs(dx) <= h && std::fabs(dy) <= h;
        }
        case 2: {  // upward triangle
            const double h = r * 1.35;
            const double t = (dy + h * 0.5) / h;  // 0 at apex, 1 at base
            return t >= 0.0 && t <= 1.0 && std::fabs(dx) <= t * h * 0.62;
        }
        default: {  // plus
            const double arm = r * 1.1, half = r * 0.42;
            return (std::fabs(dx) <= arm && std::fabs(dy) <= half) || (std::fabs(dy) <= arm && std::fabs(dx) <= half);
        }
    }
}

void blend(Image& im, int y, int x, const std::array<double, 3>& color, double a) {
    for (int c = 0; c < kChannels; ++c) im.at(c, y, x) = static_cast<float>(im.at(c, y, x) * (1 - a) + color[c] * a);
}

// Panel holding a class shape on a random background.
void render_causal(Image& im, const Rect& r, int shape_class, double contrast, std::mt19937_64& gen) {
    std::array<double, 3> bg{}, fg{};
    for (int c = 0; c < kChannels; ++c) {
        bg[c] = 0.1 + 0.4 * uniform01(gen);
        fg[c] = std::clamp(bg[c] + contrast, 0.0, 1.0);
    }
    // gentle linear gradient over the panel background
    const double gy = (uniform01(gen) - 0.5) * 0.2, gx = (uniform01(gen) - 0.5) * 0.2;
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
            for (int c = 0; c < kChannels; ++c)
                im.at(c, r.y0 + y, r.x0 + x) =
                    static_cast<float>(std::clamp(bg[c] + gy * (y - r.h / 2.0) / r.h + gx * (x - r.w / 2.0) / r.w, 0.0, 1.0));

    const double side = std::min(r.h, r.w);
    const double radius = side * (0.22 + 0.08 * uniform01(gen));
    const int fam = kShapeFamily[shape_class % 4];
    const double margin = radius * 1.4 + 1.0;
    const double cy = r.y0 + margin + uniform01(gen) * std::max(0.0, r.h - 2 * margin);
    const double cx = r.x0 + margin + uniform01(gen) * std::max(0.0, r.w - 2 * margin);
    for (int y = r.y0; y < r.y0 + r.h; ++y)
        for (int x = r.x0; x < r.x0 + r.w; ++x) {
            const double a = coverage(y, x, [&](double py, double px) { return inside_shape(fam, py, px, cy, cx, radius); });
            if (a > 0.0) blend(im, y, x, fg, a);
        }
}

// Square patch of oriented stripes (the spurious value) on a dark panel.
void render_stripes(Image& im, const Rect& r, int value, int num_values, double amplitude, std::mt19937_64& gen) {
    const double angle = kPi * value / num_values;
    const double phase = uniform01(gen) * 2 * kPi;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double base = 0.4 + 0.2 * uniform01(gen);
    const int patch = static_cast<int>(std::lround(kPatchFraction * std::min(r.h, r.w)));
    const int py0 = r.y0 + (r.h - patch) / 2 + static_cast<int>(std::lround((uniform01(gen) - 0.5) * kPatchJitter));
    const int px0 = r.x0 + (r.w - patch) / 2 + static_cast<int>(std::lround((uniform01(gen) - 0.5) * kPatchJitter));
    for (int y = r.y0; y < r.y0 + r.h; ++y)
        for (int x = r.x0; x < r.x0 + r.w; ++x) {
            const bool in_patch = y >= py0 && y < py0 + patch && x >= px0 && x < px0 + patch;
            const double s = in_patch ? amplitude * std::sin((x * ca + y * sa) * 2 * kPi / kStripePeriod + phase) : -0.25;
            for (int c = 0; c < kChannels; ++c) im.at(c, y, x) = static_cast<float>(std::clamp(base + s, 0.0, 1.0));
        }
}

// Full-image oriented stripe texture carrying the spurious value.
void render_texture(Image& im, int value, int num_values, std::mt19937_64& gen) {
    const double angle = kPi * value / num_values;
    const double phase = uniform01(gen) * 2 * kPi;
    const double ca = std::cos(angle), sa = std::sin(angle);
    std::array<double, 3> tint{};
    for (int c = 0; c < kChannels; ++c) tint[c] = 0.35 + 0.3 * uniform01(gen);
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) {
            const double s = 0.25 * std::sin((x * ca + y * sa) * 2 * kPi / 6.0 + phase);
            for (int c = 0; c < kChannels; ++c) im.at(c, y, x) = static_cast<float>(std::clamp(tint[c] + s, 0.0, 1.0));
        }
}

Example render(const GenConfig& cfg, const std::string& id, int label, int spurious, std::mt19937_64& gen) {
    Example ex;
    ex.id = id;
    ex.label = label;
    ex.spurious = spurious;
    ex.image = Image(kChannels, cfg.height, cfg.width);
    ex.causal_region = BinaryMask(cfg.height, cfg.width, 0);
    Rect causal{};
    if (cfg.layout == Layout::stacked) {
        const int top = cfg.height / 2;
        render_stripes(ex.image, {0, 0, top, cfg.width}, spurious, cfg.num_classes, cfg.spurious_amplitude, gen);
        causal = {top, 0, cfg.height - top, cfg.width};
        const int shown = uniform01(gen) < cfg.causal_flip ? (label + 1) % cfg.num_classes : label;
        render_causal(ex.image, causal, shown, cfg.causal_contrast, gen);
    } else {
        render_texture(ex.image, spurious, cfg.num_classes, gen);
        const int side = std::min(cfg.height, cfg.width) / 2;
        const int y0 = static_cast<int>(uniform_index(gen, static_cast<std::uint64_t>(cfg.height - side + 1)));
        const int x0 = static_cast<int>(uniform_index(gen, static_cast<std::uint64_t>(cfg.width - side + 1)));
        causal = {y0, x0, side, side};
        render_causal(ex.image, causal, label, cfg.causal_contrast, gen);
    }
    for (int y = causal.y0; y < causal.y0 + causal.h; ++y)
        for (int x = causal.x0; x < causal.x0 + causal.w; ++x) ex.causal_region.at(y, x) = 1;
    ex.causal_region.proportion = 1.0 - static_cast<double>(ex.causal_region.count_kept()) / ex.causal_region.size();
    if (cfg.noise_std > 0.0)
        for (auto& v : ex.image.data)
            v = static_cast<float>(std::clamp(v + cfg.noise_std * normal01(gen), 0.0, 1.0));
    return ex;
}

struct Slot {
    int label;
    int spurious;
};

std::vector<Slot> allocate_train(const GenConfig& cfg) {
    const int k = cfg.num_classes;
    std::vector<Slot> slots;
    for (int y = 0; y < k; ++y) {
        const int n_class = cfg.n_train / k + (y < cfg.n_train % k ? 1 : 0);
        const int agree = static_cast<int>(std::lround(cfg.correlation * n_class));
        for (int i = 0; i < agree; ++i) slots.push_back({y, y});
        // remaining examples cycle through the other spurious values
        for (int i = 0; i < n_class - agree; ++i) slots.push_back({y, (y + 1 + i % (k - 1)) % k});
    }
    return slots;
}

std::vector<Slot> allocate_balanced(int n, int k) {
    const int per_group = n / (k * k);
    std::vector<Slot> slots;
    for (int y = 0; y < k; ++y)
        for (int s = 0; s < k; ++s)
            for (int i = 0; i < per_group; ++i) slots.push_back({y, s});
    return slots;
}

Split make_split(const GenConfig& cfg, const std::string& name, std::vector<Slot> slots) {
    auto shuffler = substream(cfg.seed, "shuffle." + name);
    shuffle_range(slots.begin(), slots.end(), shuffler);
    Split split;
    split.name = name;
    split.examples.reserve(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s-%06zu", name.c_str(), i);
        auto gen = substream(cfg.seed, "example." + name, i);
        split.examples.push_back(render(cfg, id, slots[i].label, slots[i].spurious, gen));
    }
    return split;
}

json config_to_json(const GenConfig& c) {
    return {{"n_train", c.n_train}, {"n_val", c.n_val}, {"n_test", c.n_test}, {"correlation", c.correlation},
            {"height", c.height}, {"width", c.width}, {"num_classes", c.num_classes},
            {"layout", to_string(c.layout)}, {"noise_std", c.noise_std}, {"causal_contrast", c.causal_contrast},
            {"causal_flip", c.causal_flip}, {"spurious_amplitude", c.spurious_amplitude}, {"seed", c.seed}};
}

GenConfig config_from_json(const json& j) {
    GenConfig c;
    c.n_train = j.at("n_train");
    c.n_val = j.at("n_val");
    c.n_test = j.at("n_test");
    c.correlation = j.at("correlation");
    c.height = j.at("height");
    c.width = j.at("width");
    c.num_classes = j.at("num_classes");
    c.layout = layout_from_string(j.at("layout"));
    c.noise_std = j.at("noise_std");
    c.causal_contrast = j.at("causal_contrast");
    c.causal_flip = j.at("causal_flip");
    c.spurious_amplitude = j.at("spurious_amplitude");
    c.seed = j.at("seed");
    return c;
}

void hash_split(io::Sha256& h, const Split& split) {
    h.update(split.name);
    for (const auto& ex : split.examples) {
        h.update(ex.id);
        const std::uint8_t meta[2] = {static_cast<std::uint8_t>(ex.label), static_cast<std::uint8_t>(ex.spurious)};
        h.update(meta);
        h.update_floats(ex.image.data);
        h.update(ex.causal_region.bits);
    }
}

}  // namespace

std::string to_string(Layout layout) { return layout == Layout::stacked ? "stacked" : "fg_bg"; }

Layout layout_from_string(const std::string& name) {
    if (name == "stacked") return Layout::stacked;
    if (name == "fg_bg") return Layout::fg_bg;
    throw ConfigError("unknown layout '" + name + "' (expected stacked or fg_bg)");
}

void validate(const GenConfig& c) {
    if (!(c.correlation >= 0.5 && c.correlation <= 1.0)) throw ConfigError("correlation must lie in [0.5, 1]");
    if (c.n_train <= 0 || c.n_val <= 0 || c.n_test <= 0) throw ConfigError("split sizes must be positive");
    if (c.num_classes < 2 || c.num_classes > 4) throw ConfigError("num_classes must be between 2 and 4");
    if (c.height < 16 || c.width < 16) throw ConfigError("image size must be at least 16x16");
    if (c.noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
    if (!(c.causal_contrast > 0.0 && c.causal_contrast <= 1.0)) throw ConfigError("causal_contrast must lie in (0, 1]");
    if (!(c.causal_flip >= 0.0 && c.causal_flip < 0.5)) throw ConfigError("causal_flip must lie in [0, 0.5)");
    if (!(c.spurious_amplitude > 0.0 && c.spurious_amplitude <= 0.5))
        throw ConfigError("spurious_amplitude must lie in (0, 0.5]");
    const int groups = c.num_classes * c.num_classes;
    if (c.n_train < c.num_classes) throw ConfigError("n_train too small: every class needs an example");
    if (c.n_val < groups || c.n_test < groups)
        throw ConfigError("n_val and n_test must give every group at least one example");
}

const Split& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InvalidInput("unknown split " + name);
}

Dataset generate(const GenConfig& config) {
    validate(config);
    Dataset d;
    d.config = config;
    d.train = make_split(config, "train", allocate_train(config));
    d.val = make_split(config, "val", allocate_balanced(config.n_val, config.num_classes));
    d.test = make_split(config, "test", allocate_balanced(config.n_test, config.num_classes));
    return d;
}

std::string group_name(int group, int num_classes) {
    return "y" + std::to_string(group / num_classes) + "_s" + std::to_string(group % num_classes);
}

std::vector<std::size_t> group_counts(const Split& split, int num_classes) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (const auto& ex : split.examples) ++counts[ex.group(num_classes)];
    return counts;
}

std::string content_hash(const Dataset& dataset) {
    io::Sha256 h;
    hash_split(h, dataset.train);
    hash_split(h, dataset.val);
    hash_split(h, dataset.test);
    return h.hex_digest();
}

void write_manifest(const Dataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    const auto& cfg = dataset.config;
    json counts = json::object();
    for (const Split* s : {&dataset.train, &dataset.val, &dataset.test}) {
        std::vector<std::uint8_t> blob;
        json side;
        side["dtype"] = "float32";
        side["endianness"] = "little";
        side["shape"] = {s->examples.size(), 3, cfg.height, cfg.width};
        json ids = json::array(), labels = json::array(), spurious = json::array();
        for (const auto& ex : s->examples) {
            io::append_f32_le(blob, ex.image.data);
            ids.push_back(ex.id);
            labels.push_back(ex.label);
            spurious.push_back(ex.spurious);
            io::write_mask_png(dir / "masks" / (ex.id + ".png"), ex.causal_region);
        }
        side["ids"] = ids;
        side["labels"] = labels;
        side["spurious"] = spurious;
        io::write_bytes_atomic(dir / "images" / (s->name + ".f32"), blob);
        io::write_text_atomic(dir / "images" / (s->name + ".json"), side.dump());
        json c = json::object();
        auto gc = group_counts(*s, cfg.num_classes);
        for (std::size_t g = 0; g < gc.size(); ++g) c[group_name(static_cast<int>(g), cfg.num_classes)] = gc[g];
        counts[s->name] = c;
    }
    json manifest;
    manifest["format"] = "dac-synthetic-dataset";
    manifest["version"] = 1;
    manifest["gen_config"] = config_to_json(cfg);
    manifest["counts"] = counts;
    manifest["content_hash"] = content_hash(dataset);
    io::write_text_atomic(dir / "manifest.json", manifest.dump(2));
}

Dataset read_manifest(const std::filesystem::path& dir) {
    Dataset d;
    json manifest;
    try {
        manifest = json::parse(io::read_text(dir / "manifest.json"));
        d.config = config_from_json(manifest.at("gen_config"));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("manifest malformed: ") + e.what());
    }
    const auto& cfg = d.config;
    const std::size_t image_floats = static_cast<std::size_t>(3) * cfg.height * cfg.width;
    for (Split* s : {&d.train, &d.val, &d.test}) {
        s->name = s == &d.train ? "train" : s == &d.val ? "val" : "test";
        try {
            json side = json::parse(io::read_text(dir / "images" / (s->name + ".json")));
            auto blob = io::read_bytes(dir / "images" / (s->name + ".f32"));
            const auto ids = side.at("ids").get<std::vector<std::string>>();
            const auto labels = side.at("labels").get<std::vector<int>>();
            const auto spurious = side.at("spurious").get<std::vector<int>>();
            const auto shape = side.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 4 || shape[0] != ids.size() || shape[1] != 3 ||
                shape[2] != static_cast<std::size_t>(cfg.height) || shape[3] != static_cast<std::size_t>(cfg.width) ||
                labels.size() != ids.size() || spurious.size() != ids.size())
                throw IntegrityError("sidecar for split " + s->name + " is inconsistent");
            if (blob.size() != ids.size() * image_floats * 4)
                throw IntegrityError("image blob for split " + s->name + " has the wrong size");
            s->examples.resize(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                auto& ex = s->examples[i];
                ex.id = ids[i];
                ex.label = labels[i];
                ex.spurious = spurious[i];
                ex.image = Image(3, cfg.height, cfg.width);
                io::read_f32_le(blob, i * image_floats * 4, ex.image.data);
                ex.causal_region = io::read_mask_png(dir / "masks" / (ex.id + ".png"));
            }
            auto gc = group_counts(*s, cfg.num_classes);
            const auto& expected = manifest.at("counts").at(s->name);
            for (std::size_t g = 0; g < gc.size(); ++g)
                if (expected.at(group_name(static_cast<int>(g), cfg.num_classes)).get<std::size_t>() != gc[g])
                    throw IntegrityError("manifest group count mismatch in split " + s->name);
        } catch (const json::exception& e) {
            throw IntegrityError("sidecar malformed for split " + s->name + ": " + e.what());
        }
    }
    const std::string declared = manifest.value("content_hash", "");
    const std::string actual = content_hash(d);
    if (declared != actual)
        throw IntegrityError("dataset content hash mismatch (manifest " + declared + ", data " + actual + ")");
    return d;
}

Image causal_crop(const Example& example, std::span<const float> fill) {
    return apply_mask(example.image, example.causal_region, fill);
}

std::vector<float> channel_mean(const Split& split) {
    if (split.examples.empty()) throw InvalidInput("channel_mean: empty split");
    std::vector<double> sum(3, 0.0);
    std::size_t n = 0;
    for (const auto& ex : split.examples) {
        const std::size_t hw = ex.image.pixels();
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < hw; ++i) sum[c] += ex.image.data[c * hw + i];
        n += hw;
    }
    return {static_cast<float>(sum[0] / n), static_cast<float>(sum[1] / n), static_cast<float>(sum[2] / n)};
}

CompositionSemantics classify_composition(const Example& donor_i, const BinaryMask& m_i, const Example& donor_j,
                                          const BinaryMask& m_j) {
    const std::size_t n = m_i.size();
    if (m_j.size() != n || donor_i.causal_region.size() != n || donor_j.causal_region.size() != n)
        throw ShapeError("classify_composition: shape mismatch");
    // source of each composed pixel: 0 = donor i, 1 = donor j, 2 = fill
    auto source = [&](std::size_t p) { return m_i.bits[p] ? 0 : (m_j.bits[p] ? 2 : 1); };
    auto visible = [&](const Example& donor, int who, bool causal) {
        std::size_t region = 0, shown = 0;
        for (std::size_t p = 0; p < n; ++p) {
            if ((donor.causal_region.bits[p] != 0) != causal) continue;
            ++region;
            shown += source(p) == who ? 1 : 0;
        }
        return region ? static_cast<double>(shown) / region : 0.0;
    };
    CompositionSemantics sem;
    const double ci = visible(donor_i, 0, true), cj = visible(donor_j, 1, true);
    const double si = visible(donor_i, 0, false), sj = visible(donor_j, 1, false);
    if (std::max(ci, cj) >= 0.5) sem.causal_label = ci >= cj ? donor_i.label : donor_j.label;
    if (std::max(si, sj) >= 0.5) sem.spurious_value = si >= sj ? donor_i.spurious : donor_j.spurious;
    return sem;
}

}  // namespace dac::synth
