#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dac/backbone.hpp"
#include "dac/image.hpp"
#include "dac/masking.hpp"

namespace dac::train {

struct OptimizerParams {
    enum class Kind { sgd, adam };
    Kind kind = Kind::adam;
    double lr = 5e-3;
    double momentum = 0.9;  // sgd
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;
    double eps = 1e-8;
    int step_size = 5;      // lr *= gamma every step_size epochs; 0 disables
    double gamma = 0.5;
    double weight_decay = 0.0;

    double lr_at(int epoch) const;
};

// First-order optimizer over a fixed list of parameter tensors.
class Optimizer {
public:
    Optimizer(OptimizerParams params, const std::vector<std::span<float>>& shapes);
    void step(const std::vector<std::span<float>>& params, const std::vector<std::span<const float>>& grads, int epoch);

private:
    OptimizerParams p_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// Images with labels, addressed by dataset index.
struct TrainingSet {
    std::vector<const Image*> images;
    std::vector<int> labels;
    std::vector<std::string> ids;

    std::size_t size() const { return images.size(); }
};

// Validation images with group labels; used for logging and model
// selection only.
struct EvalSet {
    std::vector<const Image*> images;
    std::vector<int> labels;
    std::vector<int> groups;
    int num_classes = 2;
};

// ---------------------------------------------------------------- ERM

struct ErmConfig {
    int epochs = 10;
    int batch_size = 64;
    OptimizerParams optimizer{OptimizerParams::Kind::adam, 3e-3, 0.9, 0.9, 0.999, 1e-8, 0, 0.5, 0.0};
    std::uint64_t seed = 0;
};

struct ErmEpochLog {
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct ErmResult {
    SplitModel model;
    std::vector<ErmEpochLog> log;
};

using ErmCallback = std::function<void(const ErmEpochLog&, const SplitModel&)>;

// Full-model training from `init`. Deterministic given the seed. Throws
// TrainingError when the loss becomes non-finite.
ErmResult train_erm(SplitModel init, const TrainingSet& data, const ErmConfig& config, const ErmCallback& on_epoch = {});

// Per-example loss and prediction of the frozen ERM model on the training set.
struct ErmCache {
    std::string checkpoint_hash;
    std::vector<std::string> ids;
    std::vector<double> losses;
    std::vector<int> predictions;
};
ErmCache make_erm_cache(const SplitModel& model, const TrainingSet& data);
void save_erm_cache(const ErmCache& cache, const std::filesystem::path& path);
ErmCache load_erm_cache(const std::filesystem::path& path);

// ---------------------------------------------------------------- DaC

enum class SelectionMode { quantile, correct };
std::string to_string(SelectionMode mode);
SelectionMode selection_mode_from_string(const std::string& name);

struct DacConfig {
    double alpha = 5.0;
    double q = 0.5;
    bool causalflag = true;
    int epochs = 10;
    int batch_size = 64;
    SelectionMode selection_mode = SelectionMode::quantile;
    std::uint64_t seed = 0;
    OptimizerParams optimizer{};
    bool class_balanced = false;
    // forwarded to masking during premask
    std::vector<double> grid = masking::default_grid();
    double sensitivity = 1.0;
};

void validate(const DacConfig& config);

struct SelectionRecord {
    std::size_t batch_id = 0;
    std::vector<std::size_t> selected;  // dataset indices
    std::vector<double> losses;         // losses of the selected examples
    SelectionMode mode = SelectionMode::quantile;
};

// max(1, floor(q*|batch|)) lowest-loss members of `batch`; ties by dataset index.
SelectionRecord select_low_loss(std::span<const std::size_t> batch, std::span<const double> losses, double q);
// Members whose prediction equals their label.
SelectionRecord select_correct(std::span<const std::size_t> batch, std::span<const int> predictions,
                               std::span<const int> labels);

// mean(ce) + alpha * mean(comb); an empty comb contributes 0.
double total_loss(std::span<const double> ce, std::span<const double> comb, double alpha);

struct RetrainEpochLog {
    int epoch = 0;
    double l_ce = 0.0;
    double l_comb = 0.0;
    double l_total = 0.0;
    double worst_group_val = 0.0;
    double avg_val = 0.0;
    std::size_t skip_count = 0;
    std::size_t composed = 0;
    std::size_t same_class = 0;
};

struct RetrainResult {
    SplitModel model;
    std::vector<RetrainEpochLog> log;
};

// Masks aligned with the training set, plus the checkpoint they came from.
struct MaskSet {
    std::vector<BinaryMask> masks;
    std::string checkpoint_hash;
};

// Last-layer retraining with L_total = L_CE + alpha * L_comb, starting from
// the head of `model`. Only the head changes. Throws StalenessError when a
// cache does not belong to `model`.
RetrainResult dac_retrain(const SplitModel& model, const TrainingSet& data, const MaskSet& masks, const ErmCache& erm,
                          const DacConfig& config, const EvalSet* val = nullptr);

// Feature embeddings (D x N) in chunks.
Matrix embed_all(const FeatureExtractor& features, std::span<const Image* const> images, int chunk = 256);

// Shared pieces of the last-layer loops.
std::vector<std::size_t> epoch_order(const std::vector<int>& labels, bool class_balanced, std::uint64_t seed, int epoch);
RetrainEpochLog validation_metrics(const LinearHead& head, const Matrix& val_embeddings, const EvalSet& val);

// ---------------------------------------------------------------- sweep

struct SweepCell {
    double alpha = 0.0;
    double q = 0.0;
    bool causalflag = true;
    double worst_val = 0.0;
    double avg_val = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::size_t best = 0;  // highest worst-group validation accuracy; first wins ties
};

SweepResult sweep(const SplitModel& model, const TrainingSet& data, const MaskSet& masks, const ErmCache& erm,
                  const DacConfig& base, std::span<const double> alphas, std::span<const double> qs,
                  std::span<const bool> flags, const EvalSet& val,
                  const std::function<void(const SweepCell&, const RetrainResult&)>& on_cell = {});

}  // namespace dac::train
