#include "helpers.hpp"

namespace testing_util {

dac::SplitModel linear_reader(int side, const std::vector<float>& pixel_weights, float bias) {
    dac::SplitModel model({1, side, side}, 2, {{1, 1, side, 1, 0, false}});
    auto& layer = model.features().layers()[0];
    for (int i = 0; i < side * side; ++i) layer.weight(0, i) = pixel_weights[i];
    layer.bias(0) = bias;
    model.head().weight << 1.0f, -1.0f;
    return model;
}

dac::synth::GenConfig tiny_config(std::uint64_t seed, int n_train) {
    dac::synth::GenConfig c;
    c.n_train = n_train;
    c.n_val = 40;
    c.n_test = 40;
    c.correlation = 0.9;
    c.seed = seed;
    return c;
}

dac::train::TrainingSet training_set(const dac::synth::Split& split) {
    dac::train::TrainingSet t;
    for (const auto& e : split.examples) {
        t.images.push_back(&e.image);
        t.labels.push_back(e.label);
        t.ids.push_back(e.id);
    }
    return t;
}

dac::train::EvalSet eval_set(const dac::synth::Split& split, int num_classes) {
    dac::train::EvalSet v;
    v.num_classes = num_classes;
    for (const auto& e : split.examples) {
        v.images.push_back(&e.image);
        v.labels.push_back(e.label);
        v.groups.push_back(e.group(num_classes));
    }
    return v;
}

dac::SplitModel small_model(const dac::synth::GenConfig& config, std::uint64_t seed) {
    dac::BackboneConfig b;
    b.input = {3, config.height, config.width};
    b.num_classes = config.num_classes;
    b.channels = {4, 8};
    return dac::SplitModel::make(b, seed);
}

}  // namespace testing_util
