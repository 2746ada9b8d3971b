#include "dac/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dac/attribution.hpp"
#include "dac/backbone.hpp"
#include "dac/baselines.hpp"
#include "dac/composer.hpp"
#include "dac/error.hpp"
#include "dac/evaluation.hpp"
#include "dac/io.hpp"
#include "dac/kneedle.hpp"
#include "dac/masking.hpp"
#include "dac/plot.hpp"
#include "dac/synthdata.hpp"
#include "dac/trainer.hpp"

namespace dac::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunConfig {
    std::uint64_t seed = 0;
    fs::path out = "runs";
    synth::GenConfig data;
    std::vector<int> channels{16, 32, 64};
    train::ErmConfig erm;
    train::DacConfig dac;
    double grid_step = 0.05;
    std::vector<double> sweep_alphas{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<double> sweep_qs{0.2, 0.4, 0.5, 0.6, 0.8, 1.0};
    std::vector<bool> sweep_flags{true, false};
    fs::path data_dir, erm_dir, masks_dir;  // empty: under `out`
};

bool deterministic() {
    const char* v = std::getenv("DAC_DETERMINISTIC");
    return v && std::string(v) == "1";
}

// ------------------------------------------------------------- config I/O

void check_keys(const json& section, const std::string& name, std::initializer_list<const char*> allowed) {
    if (!section.is_object()) throw ConfigError("config section '" + name + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : section.items())
        if (!ok.count(key)) throw ConfigError("unknown config key '" + name + "." + key + "'");
}

template <class T>
void read_key(const json& section, const char* key, T& into) {
    if (section.contains(key)) into = section.at(key).get<T>();
}

train::OptimizerParams::Kind optimizer_kind(const std::string& name) {
    if (name == "adam") return train::OptimizerParams::Kind::adam;
    if (name == "sgd") return train::OptimizerParams::Kind::sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_name(train::OptimizerParams::Kind kind) {
    return kind == train::OptimizerParams::Kind::adam ? "adam" : "sgd";
}

void read_optimizer(const json& j, train::OptimizerParams& p) {
    if (j.contains("optimizer")) p.kind = optimizer_kind(j.at("optimizer").get<std::string>());
    read_key(j, "lr", p.lr);
    read_key(j, "momentum", p.momentum);
    read_key(j, "weight_decay", p.weight_decay);
    read_key(j, "step_size", p.step_size);
    read_key(j, "gamma", p.gamma);
}

json optimizer_json(const train::OptimizerParams& p) {
    return {{"optimizer", optimizer_name(p.kind)}, {"lr", p.lr},         {"momentum", p.momentum},
            {"weight_decay", p.weight_decay},      {"step_size", p.step_size}, {"gamma", p.gamma}};
}

void apply_config(const json& j, RunConfig& c) {
    check_keys(j, "<root>", {"seed", "out", "data", "model", "erm", "dac", "sweep", "paths"});
    read_key(j, "seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data", {"n_train", "n_val", "n_test", "correlation", "height", "width", "num_classes", "layout",
                               "noise_std", "causal_contrast", "causal_flip", "spurious_amplitude"});
        read_key(d, "n_train", c.data.n_train);
        read_key(d, "n_val", c.data.n_val);
        read_key(d, "n_test", c.data.n_test);
        read_key(d, "correlation", c.data.correlation);
        read_key(d, "height", c.data.height);
        read_key(d, "width", c.data.width);
        read_key(d, "num_classes", c.data.num_classes);
        if (d.contains("layout")) c.data.layout = synth::layout_from_string(d.at("layout").get<std::string>());
        read_key(d, "noise_std", c.data.noise_std);
        read_key(d, "causal_contrast", c.data.causal_contrast);
        read_key(d, "causal_flip", c.data.causal_flip);
        read_key(d, "spurious_amplitude", c.data.spurious_amplitude);
    }
    if (j.contains("model")) {
        check_keys(j.at("model"), "model", {"channels"});
        read_key(j.at("model"), "channels", c.channels);
    }
    if (j.contains("erm")) {
        const auto& e = j.at("erm");
        check_keys(e, "erm", {"epochs", "batch_size", "optimizer", "lr", "momentum", "weight_decay", "step_size", "gamma"});
        read_key(e, "epochs", c.erm.epochs);
        read_key(e, "batch_size", c.erm.batch_size);
        read_optimizer(e, c.erm.optimizer);
    }
    if (j.contains("dac")) {
        const auto& d = j.at("dac");
        check_keys(d, "dac", {"alpha", "q", "causalflag", "epochs", "batch_size", "selection", "optimizer", "lr",
                              "momentum", "weight_decay", "step_size", "gamma", "grid_step", "sensitivity"});
        read_key(d, "alpha", c.dac.alpha);
        read_key(d, "q", c.dac.q);
        read_key(d, "causalflag", c.dac.causalflag);
        read_key(d, "epochs", c.dac.epochs);
        read_key(d, "batch_size", c.dac.batch_size);
        if (d.contains("selection")) c.dac.selection_mode = train::selection_mode_from_string(d.at("selection"));
        read_optimizer(d, c.dac.optimizer);
        read_key(d, "grid_step", c.grid_step);
        read_key(d, "sensitivity", c.dac.sensitivity);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        check_keys(s, "sweep", {"alphas", "qs", "causalflags"});
        read_key(s, "alphas", c.sweep_alphas);
        read_key(s, "qs", c.sweep_qs);
        read_key(s, "causalflags", c.sweep_flags);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        check_keys(p, "paths", {"data", "erm", "masks"});
        if (p.contains("data")) c.data_dir = p.at("data").get<std::string>();
        if (p.contains("erm")) c.erm_dir = p.at("erm").get<std::string>();
        if (p.contains("masks")) c.masks_dir = p.at("masks").get<std::string>();
    }
}

json config_json(const RunConfig& c) {
    const auto& d = c.data;
    return {
        {"seed", c.seed},
        {"out", c.out.string()},
        {"data",
         {{"n_train", d.n_train}, {"n_val", d.n_val}, {"n_test", d.n_test}, {"correlation", d.correlation},
          {"height", d.height}, {"width", d.width}, {"num_classes", d.num_classes},
          {"layout", synth::to_string(d.layout)}, {"noise_std", d.noise_std}, {"causal_contrast", d.causal_contrast},
          {"causal_flip", d.causal_flip}, {"spurious_amplitude", d.spurious_amplitude}}},
        {"model", {{"channels", c.channels}}},
        {"erm", [&] {
             json e = optimizer_json(c.erm.optimizer);
             e["epochs"] = c.erm.epochs;
             e["batch_size"] = c.erm.batch_size;
             return e;
         }()},
        {"dac", [&] {
             json e = optimizer_json(c.dac.optimizer);
             e["alpha"] = c.dac.alpha;
             e["q"] = c.dac.q;
             e["causalflag"] = c.dac.causalflag;
             e["epochs"] = c.dac.epochs;
             e["batch_size"] = c.dac.batch_size;
             e["selection"] = train::to_string(c.dac.selection_mode);
             e["grid_step"] = c.grid_step;
             e["sensitivity"] = c.dac.sensitivity;
             return e;
         }()},
        {"sweep", {{"alphas", c.sweep_alphas}, {"qs", c.sweep_qs}, {"causalflags", c.sweep_flags}}},
        {"paths", {{"data", c.data_dir.string()}, {"erm", c.erm_dir.string()}, {"masks", c.masks_dir.string()}}},
    };
}

void finalize(RunConfig& c) {
    c.data.seed = c.seed;
    c.erm.seed = c.seed;
    c.dac.seed = c.seed;
    c.dac.grid = masking::make_grid(c.grid_step);
    if (c.data_dir.empty()) c.data_dir = c.out / "data";
    if (c.erm_dir.empty()) c.erm_dir = c.out / "erm";
    if (c.masks_dir.empty()) c.masks_dir = c.out / "masks";
    synth::validate(c.data);
    train::validate(c.dac);
    if (c.channels.empty()) throw ConfigError("model.channels must not be empty");
    if (c.erm.epochs <= 0 || c.erm.batch_size <= 0) throw ConfigError("erm.epochs and erm.batch_size must be positive");
    if (!(c.grid_step > 0.0 && c.grid_step < 1.0)) throw ConfigError("dac.grid_step must lie in (0, 1)");
}

// ------------------------------------------------------------ run records

// Refuses to reuse a stage directory that already holds a run unless forced.
void prepare_stage(const fs::path& dir, bool force) {
    if (fs::exists(dir / "run.json")) {
        if (!force) throw ConfigError(dir.string() + " already holds a run; pass --force to overwrite");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void write_run_record(const fs::path& dir, const std::string& command, const RunConfig& c, const json& inputs,
                      const json& outputs) {
    json r;
    r["command"] = command;
    r["config"] = config_json(c);
    r["seeds"] = {{"data", c.data.seed}, {"erm", c.erm.seed}, {"dac", c.dac.seed}};
    r["deterministic"] = deterministic();
    r["inputs"] = inputs;
    r["outputs"] = outputs;
    io::write_text_atomic(dir / "config.json", config_json(c).dump(2));
    io::write_text_atomic(dir / "run.json", r.dump(2));
}

json read_run_record(const fs::path& dir) {
    if (!fs::exists(dir / "run.json")) throw IntegrityError("missing run record " + (dir / "run.json").string());
    try {
        return json::parse(io::read_text(dir / "run.json"));
    } catch (const json::exception& e) {
        throw IntegrityError("malformed run record in " + dir.string() + ": " + e.what());
    }
}

std::string file_hash(const fs::path& path) {
    auto bytes = io::read_bytes(path);
    return io::sha256_hex(bytes);
}

class JsonLines {
public:
    explicit JsonLines(const fs::path& path) : path_(path) {}
    void add(const json& record) { text_ += record.dump() + "\n"; }
    void flush() const { io::write_text_atomic(path_, text_); }

private:
    fs::path path_;
    std::string text_;
};

// --------------------------------------------------------- stage loading

struct Loaded {
    synth::Dataset data;
    std::string data_hash;
    train::TrainingSet train;
    train::EvalSet val;
};

train::TrainingSet training_set(const synth::Split& split) {
    train::TrainingSet t;
    for (const auto& e : split.examples) {
        t.images.push_back(&e.image);
        t.labels.push_back(e.label);
        t.ids.push_back(e.id);
    }
    return t;
}

train::EvalSet eval_set(const synth::Split& split, int num_classes) {
    train::EvalSet v;
    v.num_classes = num_classes;
    for (const auto& e : split.examples) {
        v.images.push_back(&e.image);
        v.labels.push_back(e.label);
        v.groups.push_back(e.group(num_classes));
    }
    return v;
}

void load_data(const RunConfig& c, Loaded& l) {
    l.data = synth::read_manifest(c.data_dir);
    l.data_hash = synth::content_hash(l.data);
    l.train = training_set(l.data.train);
    l.val = eval_set(l.data.val, l.data.config.num_classes);
}

struct ErmArtifacts {
    SplitModel model;
    train::ErmCache cache;
};

ErmArtifacts load_erm(const RunConfig& c, const Loaded& l) {
    const json rec = read_run_record(c.erm_dir);
    if (rec.at("inputs").value("dataset", "") != l.data_hash)
        throw StalenessError("ERM checkpoint in " + c.erm_dir.string() + " was trained on a different dataset");
    ErmArtifacts a;
    a.model = load_checkpoint(c.erm_dir / "model.ckpt",
                              InputShape{3, l.data.config.height, l.data.config.width});
    a.cache = train::load_erm_cache(c.erm_dir / "loss_cache.json");
    if (a.cache.checkpoint_hash != a.model.weight_hash())
        throw StalenessError("ERM loss cache does not belong to " + (c.erm_dir / "model.ckpt").string());
    if (a.cache.ids != l.train.ids) throw IntegrityError("ERM loss cache ids do not match the training split");
    return a;
}

train::MaskSet load_mask_set(const RunConfig& c, const Loaded& l, const ErmArtifacts& erm) {
    train::MaskSet m;
    m.checkpoint_hash = erm.model.weight_hash();
    m.masks = masking::load_masks(c.masks_dir, l.train.ids, m.checkpoint_hash);
    return m;
}

json metrics_json(const eval::GroupMetrics& g, int num_classes) {
    json groups = json::object();
    for (std::size_t i = 0; i < g.accuracy.size(); ++i)
        groups[synth::group_name(static_cast<int>(i), num_classes)] = {{"accuracy", g.accuracy[i]}, {"count", g.counts[i]}};
    return {{"worst", g.worst}, {"average", g.average}, {"sample_weighted", g.sample_weighted},
            {"groups", groups}, {"excluded", g.excluded}};
}

json retrain_log_json(const train::RetrainEpochLog& e) {
    return {{"epoch", e.epoch},         {"l_ce", e.l_ce},   {"l_comb", e.l_comb},
            {"l_total", e.l_total},     {"worst_group_val", e.worst_group_val},
            {"avg_val", e.avg_val},     {"skip_count", e.skip_count},
            {"composed", e.composed},   {"same_class", e.same_class}};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// ---------------------------------------------------------------- stages

void cmd_generate(const RunConfig& c, bool force) {
    prepare_stage(c.data_dir, force);
    auto d = synth::generate(c.data);
    synth::write_manifest(d, c.data_dir);
    const std::string hash = synth::content_hash(d);
    write_run_record(c.data_dir, "generate", c, json::object(), {{"dataset", hash}});
    std::cout << "dataset " << c.data_dir.string() << " content hash " << hash << "\n";
}

void cmd_train_erm(const RunConfig& c, bool force) {
    Loaded l;
    load_data(c, l);
    prepare_stage(c.erm_dir, force);
    BackboneConfig bc;
    bc.input = {3, l.data.config.height, l.data.config.width};
    bc.num_classes = l.data.config.num_classes;
    bc.channels = c.channels;
    JsonLines log(c.erm_dir / "log.jsonl");
    auto result = train::train_erm(SplitModel::make(bc, c.seed), l.train, c.erm,
                                   [&](const train::ErmEpochLog& e, const SplitModel& m) {
                                       auto g = eval::group_metrics(m, l.data.val, l.data.config.num_classes);
                                       log.add({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy},
                                                {"worst_group_val", g.worst}, {"avg_val", g.average}});
                                       std::cout << "epoch " << e.epoch << " loss " << e.loss << " val worst " << g.worst
                                                 << "\n";
                                   });
    log.flush();
    save_checkpoint(result.model, c.erm_dir / "model.ckpt");
    auto cache = train::make_erm_cache(result.model, l.train);
    train::save_erm_cache(cache, c.erm_dir / "loss_cache.json");
    write_run_record(c.erm_dir, "train-erm", c, {{"dataset", l.data_hash}},
                     {{"checkpoint", result.model.weight_hash()},
                      {"loss_cache", file_hash(c.erm_dir / "loss_cache.json")}});
    std::cout << "checkpoint " << (c.erm_dir / "model.ckpt").string() << " hash " << result.model.weight_hash() << "\n";
}

void cmd_premask(const RunConfig& c, bool force, int heatmaps) {
    Loaded l;
    load_data(c, l);
    auto erm = load_erm(c, l);
    prepare_stage(c.masks_dir, force);
    masking::PremaskOptions po;
    po.grid = c.dac.grid;
    po.sensitivity = c.dac.sensitivity;
    po.fill = synth::channel_mean(l.data.train);
    po.workers = deterministic() ? 1u : std::max(1u, std::thread::hardware_concurrency());
    std::vector<Image> images;
    images.reserve(l.data.train.examples.size());
    for (const auto& e : l.data.train.examples) images.push_back(e.image);
    auto results = masking::precompute_masks(erm.model, images, l.train.labels, po);
    images.clear();

    masking::MaskCacheIndex index;
    index.grid = po.grid;
    index.sensitivity = po.sensitivity;
    index.fill = po.fill;
    index.checkpoint_hash = erm.model.weight_hash();
    std::size_t found = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        masking::write_mask(c.masks_dir, l.train.ids[i], results[i].mask);
        index.entries[l.train.ids[i]] = {results[i].proportion, results[i].knee.found};
        found += results[i].knee.found ? 1 : 0;
    }
    masking::write_mask_index(c.masks_dir, index);

    if (heatmaps > 0) {
        fs::create_directories(c.masks_dir / "heatmaps");
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(heatmaps), l.data.train.examples.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto& e = l.data.train.examples[i];
            auto map = attribution::xgradcam(erm.model, e.image, e.label);
            io::write_heatmap_png(c.masks_dir / "heatmaps" / (e.id + ".png"), map);
            io::write_png(c.masks_dir / "heatmaps" / (e.id + ".image.png"), io::image_to_png(e.image));
        }
    }
    write_run_record(c.masks_dir, "premask", c, {{"dataset", l.data_hash}, {"checkpoint", index.checkpoint_hash}},
                     {{"index", file_hash(c.masks_dir / "index.json")}, {"knee_found", found},
                      {"masks", results.size()}});
    std::cout << "masks " << results.size() << " (knee found for " << found << ") in " << c.masks_dir.string() << "\n";
}

struct RetrainOutput {
    train::RetrainResult result;
    json inputs;
};

void write_retrain(const fs::path& dir, const std::string& command, const RunConfig& c, const Loaded& l,
                   const RetrainOutput& out) {
    JsonLines log(dir / "log.jsonl");
    for (const auto& e : out.result.log) log.add(retrain_log_json(e));
    log.flush();
    save_checkpoint(out.result.model, dir / "model.ckpt");
    const int k = l.data.config.num_classes;
    json metrics;
    metrics["val"] = metrics_json(eval::group_metrics(out.result.model, l.data.val, k), k);
    metrics["test"] = metrics_json(eval::group_metrics(out.result.model, l.data.test, k), k);
    io::write_text_atomic(dir / "metrics.json", metrics.dump(2));
    write_run_record(dir, command, c, out.inputs, {{"checkpoint", out.result.model.weight_hash()}});
    std::cout << "test worst " << metrics["test"]["worst"] << " average " << metrics["test"]["average"] << "\n";
}

void cmd_retrain(const RunConfig& c, bool force, const std::string& baseline, std::string name) {
    Loaded l;
    load_data(c, l);
    auto erm = load_erm(c, l);
    if (name.empty())
        name = !baseline.empty() ? baseline : (c.dac.selection_mode == train::SelectionMode::correct ? "dac-c" : "dac");
    const fs::path dir = c.out / "retrain" / name;
    RetrainOutput out;
    out.inputs = {{"dataset", l.data_hash}, {"checkpoint", erm.model.weight_hash()}};
    if (baseline == "plain") {
        prepare_stage(dir, force);
        out.result = baselines::retrain_plain(erm.model, l.train, c.dac, &l.val);
    } else if (baseline == "balanced") {
        prepare_stage(dir, force);
        std::vector<int> groups;
        for (const auto& e : l.data.train.examples) groups.push_back(e.group(l.data.config.num_classes));
        out.result = baselines::retrain_group_balanced(erm.model, l.train, groups, c.dac, &l.val);
    } else if (baseline.empty()) {
        auto masks = load_mask_set(c, l, erm);
        prepare_stage(dir, force);
        out.inputs["masks"] = file_hash(c.masks_dir / "index.json");
        out.result = train::dac_retrain(erm.model, l.train, masks, erm.cache, c.dac, &l.val);
    } else {
        throw ConfigError("unknown baseline '" + baseline + "' (expected plain or balanced)");
    }
    write_retrain(dir, baseline.empty() ? "retrain" : "retrain --baseline " + baseline, c, l, out);
}

void cmd_sweep(const RunConfig& c, bool force) {
    Loaded l;
    load_data(c, l);
    auto erm = load_erm(c, l);
    auto masks = load_mask_set(c, l, erm);
    const fs::path dir = c.out / "sweep";
    prepare_stage(dir, force);
    const int k = l.data.config.num_classes;
    std::vector<json> rows;
    std::vector<SplitModel> models;
    auto flags = std::make_unique<bool[]>(c.sweep_flags.size());
    std::copy(c.sweep_flags.begin(), c.sweep_flags.end(), flags.get());
    auto result = train::sweep(
        erm.model, l.train, masks, erm.cache, c.dac, c.sweep_alphas, c.sweep_qs,
        std::span<const bool>(flags.get(), c.sweep_flags.size()), l.val,
        [&](const train::SweepCell& cell, const train::RetrainResult& r) {
            const std::string tag = "a" + fmt(cell.alpha) + "_q" + fmt(cell.q) + "_f" + (cell.causalflag ? "1" : "0");
            const fs::path cdir = dir / "cells" / tag;
            fs::create_directories(cdir);
            JsonLines log(cdir / "log.jsonl");
            for (const auto& e : r.log) log.add(retrain_log_json(e));
            log.flush();
            auto test = eval::group_metrics(r.model, l.data.test, k);
            json row = {{"alpha", cell.alpha}, {"q", cell.q}, {"causalflag", cell.causalflag},
                        {"worst_val", cell.worst_val}, {"avg_val", cell.avg_val},
                        {"worst_test", test.worst}, {"avg_test", test.average}, {"cell", tag}};
            io::write_text_atomic(cdir / "metrics.json", row.dump(2));
            rows.push_back(row);
            models.push_back(r.model);
            std::cout << tag << " val worst " << cell.worst_val << " test worst " << test.worst << "\n";
        });
    std::ostringstream csv;
    csv << "alpha,q,causalflag,worst_val,avg_val,worst_test,avg_test\n";
    for (const auto& r : rows)
        csv << r["alpha"].get<double>() << "," << r["q"].get<double>() << "," << (r["causalflag"].get<bool>() ? 1 : 0)
            << "," << r["worst_val"].get<double>() << "," << r["avg_val"].get<double>() << ","
            << r["worst_test"].get<double>() << "," << r["avg_test"].get<double>() << "\n";
    io::write_text_atomic(dir / "cells.csv", csv.str());
    fs::create_directories(dir / "best");
    save_checkpoint(models[result.best], dir / "best" / "model.ckpt");
    json summary = {{"best", rows[result.best]}, {"cells", rows}};
    io::write_text_atomic(dir / "sweep.json", summary.dump(2));
    write_run_record(dir, "sweep", c,
                     {{"dataset", l.data_hash}, {"checkpoint", erm.model.weight_hash()},
                      {"masks", file_hash(c.masks_dir / "index.json")}},
                     {{"best", rows[result.best]["cell"]}, {"best_checkpoint", models[result.best].weight_hash()}});
    std::cout << "best " << rows[result.best]["cell"].get<std::string>() << "\n";
}

void cmd_evaluate(const RunConfig& c, bool force) {
    Loaded l;
    load_data(c, l);
    auto erm = load_erm(c, l);
    const fs::path dir = c.out / "eval";
    prepare_stage(dir, force);
    const int k = l.data.config.num_classes;
    std::vector<std::pair<std::string, fs::path>> models{{"erm", c.erm_dir / "model.ckpt"}};
    if (fs::exists(c.out / "retrain"))
        for (const auto& entry : fs::directory_iterator(c.out / "retrain"))
            if (fs::exists(entry.path() / "model.ckpt")) models.emplace_back(entry.path().filename().string(), entry.path() / "model.ckpt");
    std::sort(models.begin() + 1, models.end());
    if (fs::exists(c.out / "sweep" / "best" / "model.ckpt")) models.emplace_back("sweep-best", c.out / "sweep" / "best" / "model.ckpt");

    json metrics = json::object(), inputs = {{"dataset", l.data_hash}};
    std::ostringstream csv;
    csv << "model,split,group,accuracy,count\n";
    for (const auto& [name, path] : models) {
        auto m = load_checkpoint(path, InputShape{3, l.data.config.height, l.data.config.width});
        if (m.feature_hash() != erm.model.feature_hash())
            throw StalenessError(path.string() + " does not share the ERM feature extractor");
        inputs[name] = m.weight_hash();
        for (const synth::Split* s : {&l.data.val, &l.data.test}) {
            auto g = eval::group_metrics(m, *s, k);
            metrics[name][s->name] = metrics_json(g, k);
            for (std::size_t i = 0; i < g.accuracy.size(); ++i)
                csv << name << "," << s->name << "," << synth::group_name(static_cast<int>(i), k) << "," << g.accuracy[i]
                    << "," << g.counts[i] << "\n";
            csv << name << "," << s->name << ",worst," << g.worst << ",\n";
            csv << name << "," << s->name << ",average," << g.average << ",\n";
        }
        std::cout << name << " test worst " << metrics[name]["test"]["worst"] << " average "
                  << metrics[name]["test"]["average"] << "\n";
    }
    io::write_text_atomic(dir / "metrics.json", metrics.dump(2));
    io::write_text_atomic(dir / "metrics.csv", csv.str());

    auto att = eval::quantile_attention_stats(erm.model, l.data.train);
    auto dist = eval::group_loss_distribution(erm.model, l.data.train);
    json analysis = {{"attention", {{"loss_edges", att.edges}, {"causal", att.causal}, {"spurious", att.spurious},
                                    {"counts", att.counts}}},
                     {"loss_quartiles", {{"minority", dist.minority}, {"majority", dist.majority},
                                         {"n_minority", dist.n_minority}, {"n_majority", dist.n_majority}}}};
    io::write_text_atomic(dir / "analysis.json", analysis.dump(2));
    write_run_record(dir, "evaluate", c, inputs, {{"metrics", file_hash(dir / "metrics.json")}});
}

void cmd_plot(const RunConfig& c, bool force) {
    const fs::path dir = c.out / "plots";
    const fs::path analysis_path = c.out / "eval" / "analysis.json";
    if (!fs::exists(analysis_path)) throw IntegrityError("missing " + analysis_path.string() + "; run evaluate first");
    prepare_stage(dir, force);
    const json a = json::parse(io::read_text(analysis_path));
    const std::vector<std::string> quartiles{"Q1 (low loss)", "Q2", "Q3", "Q4 (high loss)"};
    io::write_text_atomic(
        dir / "attention.svg",
        plot::grouped_bar_svg("Mean attribution by ERM loss quartile", quartiles,
                              {{"causal", a["attention"]["causal"].get<std::vector<double>>()},
                               {"spurious", a["attention"]["spurious"].get<std::vector<double>>()}},
                              "mean xGradCAM score"));
    io::write_text_atomic(
        dir / "loss_quartiles.svg",
        plot::grouped_bar_svg("Group mass by ERM loss quartile", quartiles,
                              {{"minority", a["loss_quartiles"]["minority"].get<std::vector<double>>()},
                               {"majority", a["loss_quartiles"]["majority"].get<std::vector<double>>()}},
                              "fraction of group"));
    json inputs = {{"analysis", file_hash(analysis_path)}};
    const fs::path sweep_path = c.out / "sweep" / "sweep.json";
    if (fs::exists(sweep_path)) {
        const json s = json::parse(io::read_text(sweep_path));
        const double best_q = s["best"]["q"].get<double>();
        std::map<bool, std::map<double, double>> curves;
        for (const auto& cell : s["cells"])
            if (cell["q"].get<double>() == best_q)
                curves[cell["causalflag"].get<bool>()][cell["alpha"].get<double>()] = cell["worst_test"].get<double>();
        std::vector<double> xs;
        for (const auto& [alpha, _] : curves.begin()->second) xs.push_back(alpha);
        std::vector<plot::Series> series;
        for (const auto& [flag, curve] : curves) {
            plot::Series ser{flag ? "causalflag=true" : "causalflag=false", {}};
            for (double x : xs) ser.values.push_back(curve.count(x) ? curve.at(x) : 0.0);
            series.push_back(ser);
        }
        io::write_text_atomic(dir / "alpha_sweep.svg",
                              plot::line_svg("Worst-group test accuracy vs alpha (q = " + fmt(best_q) + ")", xs, series,
                                             "alpha", "worst-group accuracy"));
        inputs["sweep"] = file_hash(sweep_path);
    }
    write_run_record(dir, "plot", c, inputs, json::object());
    std::cout << "plots in " << dir.string() << "\n";
}

// Knee of a user-supplied two-column x,y CSV (optional header line).
void knee_of_csv(const RunConfig& c, const fs::path& path) {
    std::istringstream in(io::read_text(path));
    kneedle::CurvePoints pts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("csv: expected x,y in line '" + line + "'");
        try {
            const double x = std::stod(line.substr(0, comma));
            const double y = std::stod(line.substr(comma + 1));
            pts.xs.push_back(x);
            pts.ys.push_back(y);
        } catch (const std::invalid_argument&) {
            if (!pts.xs.empty()) throw ConfigError("csv: non-numeric line '" + line + "'");
        }
    }
    kneedle::KneeResult k;
    try {
        k = kneedle::find_elbow(pts, c.dac.sensitivity, true);
    } catch (const InvalidInput& e) {
        throw ConfigError(std::string("csv: ") + e.what());
    }
    if (k.found)
        std::cout << "knee index " << k.index << " x " << k.x_knee << "\n";
    else
        std::cout << "no knee\n";
}

void cmd_debug_knee(const RunConfig& c, int count) {
    Loaded l;
    load_data(c, l);
    auto erm = load_erm(c, l);
    const fs::path dir = c.out / "debug";
    fs::create_directories(dir);
    const auto fill = synth::channel_mean(l.data.train);
    std::ostringstream csv;
    csv << "id,proportion,loss,is_knee\n";
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count), l.data.train.examples.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = l.data.train.examples[i];
        auto map = attribution::xgradcam(erm.model, e.image, e.label);
        auto r = masking::adaptive_mask(erm.model, e.image, e.label, map, c.dac.grid, c.dac.sensitivity, fill);
        for (std::size_t k = 0; k < r.curve.grid.size(); ++k)
            csv << e.id << "," << r.curve.grid[k] << "," << r.curve.losses[k] << ","
                << (r.knee.found && r.knee.index == k ? 1 : 0) << "\n";
    }
    io::write_text_atomic(dir / "knee.csv", csv.str());
    std::cout << "loss curves for " << n << " images in " << (dir / "knee.csv").string() << "\n";
}

Image triptych(const Image& a, const Image& b, const Image& comp) {
    const int gap = 2;
    Image out(a.channels, a.height, 3 * a.width + 2 * gap, 1.0f);
    const Image* parts[3] = {&a, &b, &comp};
    for (int p = 0; p < 3; ++p)
        for (int ch = 0; ch < a.channels; ++ch)
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x) out.at(ch, y, p * (a.width + gap) + x) = parts[p]->at(ch, y, x);
    return out;
}

void cmd_debug_compose(const RunConfig& c, int count) {
    Loaded l;
    load_data(c, l);
    auto erm = load_erm(c, l);
    auto masks = load_mask_set(c, l, erm);
    const fs::path dir = c.out / "debug" / "compose";
    fs::create_directories(dir);
    std::vector<std::size_t> order(l.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return erm.cache.losses[a] < erm.cache.losses[b]; });
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count), order.size());
    std::vector<composer::Donor> donors;
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        donors.push_back({l.train.images[i], &masks.masks[i], l.train.labels[i], l.train.ids[i]});
        index[l.train.ids[i]] = i;
    }
    const auto fill = synth::channel_mean(l.data.train);
    auto set = composer::build_composed_set(donors, fill, c.dac.causalflag, c.seed);
    for (std::size_t k = 0; k < set.examples.size(); ++k) {
        const auto& ce = set.examples[k];
        const Image& a = *l.train.images[index.at(ce.donor_i)];
        const Image& b = *l.train.images[index.at(ce.donor_j)];
        io::write_png(dir / (ce.donor_i + "__" + ce.donor_j + ".png"), io::image_to_png(triptych(a, b, ce.image)));
    }
    std::cout << set.examples.size() << " triptychs (skipped " << set.skipped << ") in " << dir.string() << "\n";
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Decompose-and-compose pipeline on synthetic spurious-correlation data"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool force = false;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "seed for data, training and pairing");
    app.add_option("--out", out, "output root directory");
    app.add_flag("--force", force, "overwrite an existing stage directory");

    std::optional<double> correlation, alpha, q, lr, sensitivity, grid;
    std::optional<int> n_train, epochs;
    std::optional<std::string> layout, data_dir, erm_dir, masks_dir;
    std::optional<bool> causalflag;
    bool dac_c = false;
    std::string baseline, name;
    std::vector<double> alphas, qs;
    int heatmaps = 8, count = 8;

    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
    gen->add_option("--correlation", correlation);
    gen->add_option("--n-train", n_train);
    gen->add_option("--layout", layout)->check(CLI::IsMember({"stacked", "fg_bg"}));

    auto* erm = app.add_subcommand("train-erm", "train the ERM base model");
    erm->add_option("--epochs", epochs);
    erm->add_option("--lr", lr);

    auto* premask = app.add_subcommand("premask", "precompute adaptive masks with the ERM model");
    premask->add_option("--grid", grid, "grid step, e.g. 0.05 or 0.2");
    premask->add_option("--sensitivity", sensitivity);
    premask->add_option("--heatmaps", heatmaps, "number of attribution heatmaps to write");

    auto* retrain = app.add_subcommand("retrain", "last-layer retraining");
    retrain->add_option("--alpha", alpha);
    retrain->add_option("--q", q);
    retrain->add_option("--causalflag", causalflag);
    retrain->add_flag("--dac-c", dac_c, "select all correctly classified examples");
    retrain->add_option("--baseline", baseline)->check(CLI::IsMember({"plain", "balanced"}));
    retrain->add_option("--name", name, "run name under <out>/retrain");
    retrain->add_option("--epochs", epochs);

    auto* sweep = app.add_subcommand("sweep", "grid over alpha, q and causalflag");
    sweep->add_option("--alphas", alphas)->delimiter(',');
    sweep->add_option("--qs", qs)->delimiter(',');
    sweep->add_flag("--dac-c", dac_c);

    auto* evaluate = app.add_subcommand("evaluate", "group metrics and ERM attention analysis");
    auto* plot_cmd = app.add_subcommand("plot", "SVG charts from evaluate and sweep outputs");
    auto* knee = app.add_subcommand("debug-knee", "write loss-vs-proportion curves with their knees");
    knee->add_option("--count", count);
    std::string knee_csv;
    knee->add_option("--csv", knee_csv, "two-column x,y curve; prints its knee")->check(CLI::ExistingFile);
    auto* compose = app.add_subcommand("debug-compose", "write donor/donor/composition triptychs");
    compose->add_option("--count", count);
    compose->add_option("--causalflag", causalflag);

    for (auto* sub : {gen, erm, premask, retrain, sweep, evaluate, plot_cmd, knee, compose}) {
        sub->add_option("--data", data_dir, "dataset directory");
        if (sub != gen) {
            sub->add_option("--erm", erm_dir, "ERM stage directory");
            sub->add_option("--masks", masks_dir, "mask cache directory");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig c;
        if (!config_path.empty()) {
            try {
                apply_config(json::parse(io::read_text(config_path)), c);
            } catch (const json::exception& e) {
                throw ConfigError(std::string("config: ") + e.what());
            }
        }
        if (seed) c.seed = *seed;
        if (out) c.out = *out;
        if (correlation) c.data.correlation = *correlation;
        if (n_train) c.data.n_train = *n_train;
        if (layout) c.data.layout = synth::layout_from_string(*layout);
        if (erm->parsed()) {
            if (epochs) c.erm.epochs = *epochs;
            if (lr) c.erm.optimizer.lr = *lr;
        } else if (epochs) {
            c.dac.epochs = *epochs;
        }
        if (alpha) c.dac.alpha = *alpha;
        if (q) c.dac.q = *q;
        if (causalflag) c.dac.causalflag = *causalflag;
        if (dac_c) c.dac.selection_mode = train::SelectionMode::correct;
        if (grid) c.grid_step = *grid;
        if (sensitivity) c.dac.sensitivity = *sensitivity;
        if (!alphas.empty()) c.sweep_alphas = alphas;
        if (!qs.empty()) c.sweep_qs = qs;
        if (data_dir) c.data_dir = *data_dir;
        if (erm_dir) c.erm_dir = *erm_dir;
        if (masks_dir) c.masks_dir = *masks_dir;
        finalize(c);

        if (gen->parsed()) cmd_generate(c, force);
        else if (erm->parsed()) cmd_train_erm(c, force);
        else if (premask->parsed()) cmd_premask(c, force, heatmaps);
        else if (retrain->parsed()) cmd_retrain(c, force, baseline, name);
        else if (sweep->parsed()) cmd_sweep(c, force);
        else if (evaluate->parsed()) cmd_evaluate(c, force);
        else if (plot_cmd->parsed()) cmd_plot(c, force);
        else if (knee->parsed() && !knee_csv.empty()) knee_of_csv(c, knee_csv);
        else if (knee->parsed()) cmd_debug_knee(c, count);
        else if (compose->parsed()) cmd_debug_compose(c, count);
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const TrainingError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace dac::cli
