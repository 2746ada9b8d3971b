#pragma once

#include <cstdint>
#include <vector>

#include "dac/backbone.hpp"
#include "dac/synthdata.hpp"
#include "dac/trainer.hpp"

namespace testing_util {

// One-channel square input read by a single full-size linear "conv", so the
// embedding is sum(pixel_weights * x) + bias. Two classes with logits
// (e, -e).
dac::SplitModel linear_reader(int side, const std::vector<float>& pixel_weights, float bias);

dac::synth::GenConfig tiny_config(std::uint64_t seed, int n_train = 200);

dac::train::TrainingSet training_set(const dac::synth::Split& split);
dac::train::EvalSet eval_set(const dac::synth::Split& split, int num_classes);

dac::SplitModel small_model(const dac::synth::GenConfig& config, std::uint64_t seed);

}  // namespace testing_util
