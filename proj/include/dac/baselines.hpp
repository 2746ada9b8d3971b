#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dac/trainer.hpp"

namespace dac::baselines {

// Last-layer retraining on L_CE alone: the alpha = 0 reduction of DaC,
// written as its own loop so the two can be compared.
train::RetrainResult retrain_plain(const SplitModel& model, const train::TrainingSet& data,
                                   const train::DacConfig& config, const train::EvalSet* val = nullptr);

// Seeded subsample with every group cut to the size of the smallest
// non-empty group. Returns sorted dataset indices.
std::vector<std::size_t> balanced_subsample(std::span<const int> oracle_groups, std::uint64_t seed);

// Reference upper bound: plain last-layer retraining on a group-balanced
// subsample. Requires ground-truth groups, so it only runs on synthetic data.
train::RetrainResult retrain_group_balanced(const SplitModel& model, const train::TrainingSet& data,
                                            std::span<const int> oracle_groups, const train::DacConfig& config,
                                            const train::EvalSet* val = nullptr);

}  // namespace dac::baselines
