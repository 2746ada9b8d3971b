#include "dac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dac/composer.hpp"
#include "dac/evaluation.hpp"
#include "dac/io.hpp"
#include "dac/random.hpp"

namespace dac::train {

using json = nlohmann::json;

double OptimizerParams::lr_at(int epoch) const {
    if (step_size <= 0) return lr;
    return lr * std::pow(gamma, epoch / step_size);
}

Optimizer::Optimizer(OptimizerParams params, const std::vector<std::span<float>>& shapes) : p_(params) {
    for (const auto& s : shapes) {
        m_.emplace_back(s.size(), 0.0);
        if (p_.kind == OptimizerParams::Kind::adam) v_.emplace_back(s.size(), 0.0);
    }
}

void Optimizer::step(const std::vector<std::span<float>>& params, const std::vector<std::span<const float>>& grads,
                     int epoch) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw InvalidInput("optimizer: parameter list changed");
    ++t_;
    const double lr = p_.lr_at(epoch);
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto p = params[t];
        auto g = grads[t];
        auto& m = m_[t];
        if (p_.kind == OptimizerParams::Kind::sgd) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i] + p_.weight_decay * p[i];
                m[i] = p_.momentum * m[i] + gi;
                p[i] = static_cast<float>(p[i] - lr * m[i]);
            }
        } else {
            auto& v = v_[t];
            const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
            const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i] + p_.weight_decay * p[i];
                m[i] = p_.beta1 * m[i] + (1.0 - p_.beta1) * gi;
                v[i] = p_.beta2 * v[i] + (1.0 - p_.beta2) * gi * gi;
                p[i] = static_cast<float>(p[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + p_.eps));
            }
        }
    }
}

namespace {

std::vector<std::span<const float>> const_views(const std::vector<std::span<float>>& v) {
    return {v.begin(), v.end()};
}

}  // namespace

std::vector<std::size_t> epoch_order(const std::vector<int>& labels, bool class_balanced, std::uint64_t seed, int epoch) {
    auto gen = substream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order;
    if (!class_balanced) {
        order.resize(labels.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_range(order.begin(), order.end(), gen);
        return order;
    }
    // Oversample every class to the size of the largest one.
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::size_t largest = 0;
    for (auto& c : by_class) largest = std::max(largest, c.size());
    for (auto& c : by_class) {
        if (c.empty()) continue;
        shuffle_range(c.begin(), c.end(), gen);
        for (std::size_t i = 0; i < largest; ++i) order.push_back(c[i % c.size()]);
    }
    shuffle_range(order.begin(), order.end(), gen);
    return order;
}

ErmResult train_erm(SplitModel init, const TrainingSet& data, const ErmConfig& config, const ErmCallback& on_epoch) {
    if (data.size() == 0) throw InvalidInput("train_erm: empty dataset");
    if (config.epochs <= 0 || config.batch_size <= 0) throw ConfigError("train_erm: epochs and batch_size must be positive");
    ErmResult result{std::move(init), {}};
    SplitModel& model = result.model;
    SplitModel grads = model;
    Optimizer opt(config.optimizer, model.parameters());
    const InputShape shape = model.input_shape();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto order = epoch_order(data.labels, false, config.seed, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t a = 0; a < order.size(); a += config.batch_size) {
            const std::size_t b = std::min(order.size(), a + static_cast<std::size_t>(config.batch_size));
            std::vector<const Image*> imgs;
            std::vector<int> labels;
            for (std::size_t i = a; i < b; ++i) {
                imgs.push_back(data.images[order[i]]);
                labels.push_back(data.labels[order[i]]);
            }
            const int n = static_cast<int>(labels.size());
            Matrix packed = pack_images(imgs, shape);
            grads.set_zero();
            ForwardCache cache;
            Matrix emb = model.features().forward(packed, n, &cache);
            HeadGrad hg = head_cross_entropy(model.head(), emb, labels);
            if (!std::isfinite(hg.loss)) throw TrainingError(epoch, "non-finite loss");
            auto preds = argmax_per_column(model.head().logits(emb));
            for (int i = 0; i < n; ++i) correct += preds[i] == labels[i] ? 1 : 0;
            grads.head().weight = hg.weight.cast<float>();
            grads.head().bias = hg.bias.cast<float>();
            model.features().backward(cache, hg.embedding.cast<float>(), grads.features());
            opt.step(model.parameters(), const_views(grads.parameters()), epoch);
            loss_sum += hg.loss * n;
        }
        ErmEpochLog entry{epoch, loss_sum / static_cast<double>(order.size()),
                          static_cast<double>(correct) / static_cast<double>(order.size())};
        if (!std::isfinite(entry.loss)) throw TrainingError(epoch, "non-finite loss");
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry, model);
    }
    return result;
}

ErmCache make_erm_cache(const SplitModel& model, const TrainingSet& data) {
    auto inf = eval::infer(model, data.images, data.labels);
    return {model.weight_hash(), data.ids, std::move(inf.losses), std::move(inf.predictions)};
}

void save_erm_cache(const ErmCache& cache, const std::filesystem::path& path) {
    json j;
    j["checkpoint_hash"] = cache.checkpoint_hash;
    j["ids"] = cache.ids;
    j["losses"] = cache.losses;
    j["predictions"] = cache.predictions;
    io::write_text_atomic(path, j.dump());
}

ErmCache load_erm_cache(const std::filesystem::path& path) {
    try {
        json j = json::parse(io::read_text(path));
        ErmCache c{j.at("checkpoint_hash"), j.at("ids").get<std::vector<std::string>>(),
                   j.at("losses").get<std::vector<double>>(), j.at("predictions").get<std::vector<int>>()};
        if (c.ids.size() != c.losses.size() || c.ids.size() != c.predictions.size())
            throw IntegrityError("ERM loss cache arrays differ in length");
        return c;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("ERM loss cache malformed: ") + e.what());
    }
}

std::string to_string(SelectionMode mode) { return mode == SelectionMode::quantile ? "quantile" : "correct"; }

SelectionMode selection_mode_from_string(const std::string& name) {
    if (name == "quantile") return SelectionMode::quantile;
    if (name == "correct") return SelectionMode::correct;
    throw ConfigError("unknown selection_mode '" + name + "'");
}

void validate(const DacConfig& c) {
    if (!(c.q > 0.0 && c.q <= 1.0)) throw ConfigError("q must lie in (0, 1]");
    if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) throw ConfigError("alpha must be nonnegative");
    if (c.epochs <= 0 || c.batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
    if (!(c.sensitivity > 0.0)) throw ConfigError("sensitivity must be positive");
}

SelectionRecord select_low_loss(std::span<const std::size_t> batch, std::span<const double> losses, double q) {
    if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("select_low_loss: q must lie in (0, 1]");
    SelectionRecord rec;
    rec.mode = SelectionMode::quantile;
    if (batch.empty()) return rec;
    std::vector<std::size_t> members(batch.begin(), batch.end());
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
        return losses[a] != losses[b] ? losses[a] < losses[b] : a < b;
    });
    const std::size_t k = std::max<std::size_t>(1, masking::masked_count(q, members.size()));
    rec.selected.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    for (auto i : rec.selected) rec.losses.push_back(losses[i]);
    return rec;
}

SelectionRecord select_correct(std::span<const std::size_t> batch, std::span<const int> predictions,
                               std::span<const int> labels) {
    SelectionRecord rec;
    rec.mode = SelectionMode::correct;
    for (auto i : batch)
        if (predictions[i] == labels[i]) rec.selected.push_back(i);
    return rec;
}

double total_loss(std::span<const double> ce, std::span<const double> comb, double alpha) {
    auto mean = [](std::span<const double> v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    return mean(ce) + (comb.empty() ? 0.0 : alpha * mean(comb));
}

Matrix embed_all(const FeatureExtractor& features, std::span<const Image* const> images, int chunk) {
    Matrix out(features.embedding_dim(), static_cast<Eigen::Index>(images.size()));
    for (std::size_t a = 0; a < images.size(); a += chunk) {
        const std::size_t b = std::min(images.size(), a + static_cast<std::size_t>(chunk));
        const int n = static_cast<int>(b - a);
        out.middleCols(static_cast<Eigen::Index>(a), n) =
            features.forward(pack_images(images.subspan(a, b - a), features.input_shape()), n);
    }
    return out;
}

RetrainEpochLog validation_metrics(const LinearHead& head, const Matrix& val_embeddings, const EvalSet& val) {
    auto inf = eval::infer_head(head, val_embeddings, val.labels);
    auto m = eval::group_metrics(inf.predictions, val.labels, val.groups, val.num_classes);
    RetrainEpochLog log;
    log.worst_group_val = m.worst;
    log.avg_val = m.average;
    return log;
}

RetrainResult dac_retrain(const SplitModel& model, const TrainingSet& data, const MaskSet& masks, const ErmCache& erm,
                          const DacConfig& config, const EvalSet* val) {
    validate(config);
    const std::string hash = model.weight_hash();
    if (erm.checkpoint_hash != hash)
        throw StalenessError("ERM loss cache belongs to checkpoint " + erm.checkpoint_hash + ", model is " + hash);
    if (masks.checkpoint_hash != hash)
        throw StalenessError("mask cache belongs to checkpoint " + masks.checkpoint_hash + ", model is " + hash);
    if (erm.losses.size() != data.size() || masks.masks.size() != data.size())
        throw IntegrityError("caches do not cover the training set");
    for (std::size_t i = 0; i < data.ids.size() && i < erm.ids.size(); ++i)
        if (erm.ids[i] != data.ids[i]) throw IntegrityError("ERM loss cache is not aligned with the training set");

    RetrainResult result{model, {}};
    LinearHead& head = result.model.head();
    const FeatureExtractor& features = model.features();
    const Matrix train_emb = embed_all(features, data.images);
    Matrix val_emb;
    if (val) val_emb = embed_all(features, val->images);

    std::vector<std::span<float>> head_params{{head.weight.data(), static_cast<std::size_t>(head.weight.size())},
                                              {head.bias.data(), static_cast<std::size_t>(head.bias.size())}};
    Optimizer opt(config.optimizer, head_params);
    const InputShape shape = model.input_shape();
    std::size_t batch_id = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto order = epoch_order(data.labels, config.class_balanced, config.seed, epoch);
        RetrainEpochLog entry;
        entry.epoch = epoch;
        double ce_sum = 0.0, comb_sum = 0.0, total_sum = 0.0;
        std::size_t n_batches = 0, n_comb_batches = 0;
        for (std::size_t a = 0; a < order.size(); a += config.batch_size, ++batch_id) {
            const std::size_t b = std::min(order.size(), a + static_cast<std::size_t>(config.batch_size));
            std::span<const std::size_t> batch(order.data() + a, b - a);
            Matrix emb(train_emb.rows(), static_cast<Eigen::Index>(batch.size()));
            std::vector<int> labels;
            std::vector<const Image*> batch_images;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                emb.col(static_cast<Eigen::Index>(i)) = train_emb.col(static_cast<Eigen::Index>(batch[i]));
                labels.push_back(data.labels[batch[i]]);
                batch_images.push_back(data.images[batch[i]]);
            }
            HeadGrad g_ce = head_cross_entropy(head, emb, labels);

            SelectionRecord sel = config.selection_mode == SelectionMode::quantile
                                      ? select_low_loss(batch, erm.losses, config.q)
                                      : select_correct(batch, erm.predictions, data.labels);
            sel.batch_id = batch_id;
            std::vector<composer::Donor> donors;
            for (auto i : sel.selected) donors.push_back({data.images[i], &masks.masks[i], data.labels[i], data.ids[i]});
            const auto fill = composer::batch_mean(batch_images);
            auto composed = composer::build_composed_set(donors, fill, config.causalflag,
                                                         mix64(config.seed ^ stream_tag("pairing")) + batch_id);
            entry.skip_count += composed.skipped;
            entry.composed += composed.examples.size();
            entry.same_class += composed.same_class;

            Eigen::MatrixXd grad_w = g_ce.weight;
            Eigen::VectorXd grad_b = g_ce.bias;
            double l_comb = 0.0;
            if (!composed.examples.empty()) {
                std::vector<const Image*> comp_images;
                std::vector<int> comp_labels;
                for (const auto& c : composed.examples) {
                    comp_images.push_back(&c.image);
                    comp_labels.push_back(c.label);
                }
                const int m = static_cast<int>(comp_images.size());
                Matrix comp_emb = features.forward(pack_images(comp_images, shape), m);
                HeadGrad g_comb = head_cross_entropy(head, comp_emb, comp_labels);
                l_comb = g_comb.loss;
                grad_w += config.alpha * g_comb.weight;
                grad_b += config.alpha * g_comb.bias;
                comb_sum += l_comb;
                ++n_comb_batches;
            }
            const double l_total = g_ce.loss + config.alpha * l_comb;
            if (!std::isfinite(l_total)) throw TrainingError(epoch, "non-finite retraining loss");
            ce_sum += g_ce.loss;
            total_sum += l_total;
            ++n_batches;

            Eigen::MatrixXf gw = grad_w.cast<float>();
            Eigen::VectorXf gb = grad_b.cast<float>();
            opt.step(head_params, {{gw.data(), static_cast<std::size_t>(gw.size())}, {gb.data(), static_cast<std::size_t>(gb.size())}},
                     epoch);
        }
        entry.l_ce = ce_sum / static_cast<double>(std::max<std::size_t>(1, n_batches));
        entry.l_comb = n_comb_batches ? comb_sum / static_cast<double>(n_comb_batches) : 0.0;
        entry.l_total = total_sum / static_cast<double>(std::max<std::size_t>(1, n_batches));
        if (val) {
            auto v = validation_metrics(head, val_emb, *val);
            entry.worst_group_val = v.worst_group_val;
            entry.avg_val = v.avg_val;
        }
        result.log.push_back(entry);
    }
    return result;
}

SweepResult sweep(const SplitModel& model, const TrainingSet& data, const MaskSet& masks, const ErmCache& erm,
                  const DacConfig& base, std::span<const double> alphas, std::span<const double> qs,
                  std::span<const bool> flags, const EvalSet& val,
                  const std::function<void(const SweepCell&, const RetrainResult&)>& on_cell) {
    SweepResult out;
    const Matrix val_emb = embed_all(model.features(), val.images);
    for (bool flag : flags)
        for (double q : qs)
            for (double alpha : alphas) {
                DacConfig cfg = base;
                cfg.alpha = alpha;
                cfg.q = q;
                cfg.causalflag = flag;
                auto r = dac_retrain(model, data, masks, erm, cfg, nullptr);
                auto v = validation_metrics(r.model.head(), val_emb, val);
                SweepCell cell{alpha, q, flag, v.worst_group_val, v.avg_val};
                if (out.cells.empty() || cell.worst_val > out.cells[out.best].worst_val) out.best = out.cells.size();
                out.cells.push_back(cell);
                if (on_cell) on_cell(cell, r);
            }
    return out;
}

}  // namespace dac::train
