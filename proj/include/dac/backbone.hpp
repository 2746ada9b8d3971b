#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dac/image.hpp"

namespace dac {

// Batched activations are stored as (channels x batch*H*W) column-major
// matrices; column b*H*W + y*W + x holds every channel of one location.
using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

struct InputShape {
    int channels = 3;
    int height = 32;
    int width = 64;
    bool operator==(const InputShape&) const = default;
};

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 2;
    int padding = 1;
    bool relu = true;
};

struct ConvLayer {
    ConvSpec spec;
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    Matrix weight;  // out x (kernel*kernel*in); column (ky*kernel + kx)*in + c
    Vector bias;
};

struct ForwardCache {
    int batch = 0;
    std::vector<Matrix> cols;         // im2col of each layer's input
    std::vector<Matrix> activations;  // each layer's output (after nonlinearity)
    Matrix embedding;                 // D x batch
};

// Stack of conv layers followed by global average pooling: g_phi.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(InputShape input, const std::vector<ConvSpec>& specs);

    Matrix forward(const Matrix& input, int batch, ForwardCache* cache = nullptr) const;
    // Accumulates parameter gradients into `grads` (same architecture).
    void backward(const ForwardCache& cache, const Matrix& d_embedding, FeatureExtractor& grads) const;

    InputShape input_shape() const { return input_; }
    int embedding_dim() const { return layers_.empty() ? input_.channels : layers_.back().spec.out_channels; }
    int last_height() const { return layers_.empty() ? input_.height : layers_.back().out_h; }
    int last_width() const { return layers_.empty() ? input_.width : layers_.back().out_w; }

    std::vector<ConvLayer>& layers() { return layers_; }
    const std::vector<ConvLayer>& layers() const { return layers_; }

    void set_zero();
    std::string hash() const;

private:
    InputShape input_;
    std::vector<ConvLayer> layers_;
};

// Linear predictor w: logits = weight * embedding + bias.
struct LinearHead {
    Matrix weight;  // K x D
    Vector bias;    // K

    Matrix logits(const Matrix& embedding) const;
    std::string hash() const;
};

struct HeadGrad {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
    Eigen::MatrixXd embedding;  // dL/d(embedding), D x B
    double loss = 0.0;          // mean cross-entropy
};

// Mean cross-entropy of the head over a batch of embeddings, with analytic
// gradients. Evaluated in double precision.
HeadGrad head_cross_entropy(const LinearHead& head, const Matrix& embedding, std::span<const int> labels);

// Per-example cross-entropy from a K x B logits matrix.
std::vector<double> cross_entropy_per_example(const Matrix& logits, std::span<const int> labels);
std::vector<int> argmax_per_column(const Matrix& logits);

struct BackboneConfig {
    InputShape input;
    int num_classes = 2;
    std::vector<int> channels{16, 32, 64};
    int kernel = 3;
    int stride = 2;
};

// f_theta = head o features.
class SplitModel {
public:
    SplitModel() = default;
    SplitModel(InputShape input, int num_classes, const std::vector<ConvSpec>& specs);

    static SplitModel make(const BackboneConfig& config, std::uint64_t seed);

    InputShape input_shape() const { return features_.input_shape(); }
    int num_classes() const { return num_classes_; }

    FeatureExtractor& features() { return features_; }
    const FeatureExtractor& features() const { return features_; }
    LinearHead& head() { return head_; }
    const LinearHead& head() const { return head_; }

    Matrix embed(const Matrix& packed, int batch, ForwardCache* cache = nullptr) const {
        return features_.forward(packed, batch, cache);
    }
    Matrix logits(const Matrix& packed, int batch) const { return head_.logits(embed(packed, batch)); }
    std::vector<float> forward(const Image& image) const;

    void reinit_head(std::uint64_t seed);
    void set_zero();

    // Parameter views in checkpoint order: conv{i}.weight, conv{i}.bias, ...,
    // head.weight, head.bias.
    std::vector<std::span<float>> parameters();
    std::vector<std::string> parameter_names() const;

    std::string weight_hash() const;
    std::string feature_hash() const { return features_.hash(); }

private:
    int num_classes_ = 0;
    FeatureExtractor features_;
    LinearHead head_;
};

// Packs images into the (C x B*H*W) layout. All images must match `shape`.
Matrix pack_images(std::span<const Image* const> images, InputShape shape);
Matrix pack_images(std::span<const Image> images, InputShape shape);

// Full-model training step helper: mean CE loss and gradients of every parameter.
double model_gradient(const SplitModel& model, const Matrix& packed, std::span<const int> labels,
                      SplitModel& grads);

// Checkpoint: 8-byte magic "DACKPT01", u64 LE header length, JSON header,
// then each parameter as raw little-endian float32 in parameter_names()
// order (Eigen column-major within a tensor).
void save_checkpoint(const SplitModel& model, const std::filesystem::path& path);
SplitModel load_checkpoint(const std::filesystem::path& path);
// Reads only the header; returns the recorded weight hash.
std::string checkpoint_hash(const std::filesystem::path& path);
// Throws ShapeError when the stored input shape differs from `expected`.
SplitModel load_checkpoint(const std::filesystem::path& path, InputShape expected);

}  // namespace dac
