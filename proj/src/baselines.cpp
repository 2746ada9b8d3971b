#include "dac/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dac/random.hpp"

namespace dac::baselines {

train::RetrainResult retrain_plain(const SplitModel& model, const train::TrainingSet& data,
                                   const train::DacConfig& config, const train::EvalSet* val) {
    train::validate(config);
    train::RetrainResult result{model, {}};
    LinearHead& head = result.model.head();
    const Matrix train_emb = train::embed_all(model.features(), data.images);
    Matrix val_emb;
    if (val) val_emb = train::embed_all(model.features(), val->images);

    std::vector<std::span<float>> params{{head.weight.data(), static_cast<std::size_t>(head.weight.size())},
                                         {head.bias.data(), static_cast<std::size_t>(head.bias.size())}};
    train::Optimizer opt(config.optimizer, params);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto order = train::epoch_order(data.labels, config.class_balanced, config.seed, epoch);
        double ce_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t a = 0; a < order.size(); a += config.batch_size) {
            const std::size_t b = std::min(order.size(), a + static_cast<std::size_t>(config.batch_size));
            Matrix emb(train_emb.rows(), static_cast<Eigen::Index>(b - a));
            std::vector<int> labels;
            for (std::size_t i = a; i < b; ++i) {
                emb.col(static_cast<Eigen::Index>(i - a)) = train_emb.col(static_cast<Eigen::Index>(order[i]));
                labels.push_back(data.labels[order[i]]);
            }
            HeadGrad g = head_cross_entropy(head, emb, labels);
            if (!std::isfinite(g.loss)) throw TrainingError(epoch, "non-finite retraining loss");
            Eigen::MatrixXf gw = g.weight.cast<float>();
            Eigen::VectorXf gb = g.bias.cast<float>();
            opt.step(params, {{gw.data(), static_cast<std::size_t>(gw.size())}, {gb.data(), static_cast<std::size_t>(gb.size())}},
                     epoch);
            ce_sum += g.loss;
            ++n_batches;
        }
        train::RetrainEpochLog entry;
        entry.epoch = epoch;
        entry.l_ce = ce_sum / static_cast<double>(std::max<std::size_t>(1, n_batches));
        entry.l_total = entry.l_ce;
        if (val) {
            auto v = train::validation_metrics(head, val_emb, *val);
            entry.worst_group_val = v.worst_group_val;
            entry.avg_val = v.avg_val;
        }
        result.log.push_back(entry);
    }
    return result;
}

std::vector<std::size_t> balanced_subsample(std::span<const int> oracle_groups, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < oracle_groups.size(); ++i) by_group[oracle_groups[i]].push_back(i);
    if (by_group.empty()) return {};
    std::size_t smallest = oracle_groups.size();
    for (const auto& [g, members] : by_group) smallest = std::min(smallest, members.size());
    std::vector<std::size_t> out;
    for (auto& [g, members] : by_group) {
        auto gen = substream(seed, "balanced", static_cast<std::uint64_t>(g));
        shuffle_range(members.begin(), members.end(), gen);
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(smallest));
    }
    std::sort(out.begin(), out.end());
    return out;
}

train::RetrainResult retrain_group_balanced(const SplitModel& model, const train::TrainingSet& data,
                                            std::span<const int> oracle_groups, const train::DacConfig& config,
                                            const train::EvalSet* val) {
    if (oracle_groups.size() != data.size()) throw InvalidInput("retrain_group_balanced: one group per example required");
    train::TrainingSet subset;
    for (auto i : balanced_subsample(oracle_groups, config.seed)) {
        subset.images.push_back(data.images[i]);
        subset.labels.push_back(data.labels[i]);
        subset.ids.push_back(data.ids[i]);
    }
    return retrain_plain(model, subset, config, val);
}

}  // namespace dac::baselines
