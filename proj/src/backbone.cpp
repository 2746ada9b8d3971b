#include "dac/backbone.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "dac/io.hpp"
#include "dac/random.hpp"

namespace dac {

using json = nlohmann::json;

namespace {

int conv_out(int in, const ConvSpec& s) { return (in + 2 * s.padding - s.kernel) / s.stride + 1; }

void im2col(const Matrix& input, int batch, int h, int w, const ConvLayer& layer, Matrix& cols) {
    const auto& s = layer.spec;
    const int c = s.in_channels;
    const int k = s.kernel;
    cols.resize(static_cast<Eigen::Index>(k) * k * c, static_cast<Eigen::Index>(batch) * layer.out_h * layer.out_w);
    float* dst = cols.data();
    const float* src = input.data();
    const Eigen::Index rows = cols.rows();
    for (int b = 0; b < batch; ++b)
        for (int oy = 0; oy < layer.out_h; ++oy)
            for (int ox = 0; ox < layer.out_w; ++ox) {
                float* col = dst + ((static_cast<Eigen::Index>(b) * layer.out_h + oy) * layer.out_w + ox) * rows;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * s.stride - s.padding + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * s.stride - s.padding + kx;
                        float* seg = col + (ky * k + kx) * c;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                            std::memset(seg, 0, sizeof(float) * c);
                        } else {
                            const float* in = src + ((static_cast<Eigen::Index>(b) * h + iy) * w + ix) * c;
                            std::memcpy(seg, in, sizeof(float) * c);
                        }
                    }
                }
            }
}

void col2im(const Matrix& dcols, int batch, int h, int w, const ConvLayer& layer, Matrix& dinput) {
    const auto& s = layer.spec;
    const int c = s.in_channels;
    const int k = s.kernel;
    dinput.setZero(c, static_cast<Eigen::Index>(batch) * h * w);
    const float* src = dcols.data();
    float* dst = dinput.data();
    const Eigen::Index rows = dcols.rows();
    for (int b = 0; b < batch; ++b)
        for (int oy = 0; oy < layer.out_h; ++oy)
            for (int ox = 0; ox < layer.out_w; ++ox) {
                const float* col = src + ((static_cast<Eigen::Index>(b) * layer.out_h + oy) * layer.out_w + ox) * rows;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * s.stride - s.padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * s.stride - s.padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        const float* seg = col + (ky * k + kx) * c;
                        float* out = dst + ((static_cast<Eigen::Index>(b) * h + iy) * w + ix) * c;
                        for (int ch = 0; ch < c; ++ch) out[ch] += seg[ch];
                    }
                }
            }
}

void hash_matrix(io::Sha256& h, const float* data, Eigen::Index n) {
    h.update_floats(std::span<const float>(data, static_cast<std::size_t>(n)));
}

}  // namespace

FeatureExtractor::FeatureExtractor(InputShape input, const std::vector<ConvSpec>& specs) : input_(input) {
    int c = input.channels, h = input.height, w = input.width;
    for (const auto& s : specs) {
        if (s.in_channels != c) throw ShapeError("conv stack: channel mismatch between layers");
        ConvLayer layer;
        layer.spec = s;
        layer.in_h = h;
        layer.in_w = w;
        layer.out_h = conv_out(h, s);
        layer.out_w = conv_out(w, s);
        if (layer.out_h <= 0 || layer.out_w <= 0) throw ShapeError("conv stack: input too small");
        layer.weight = Matrix::Zero(s.out_channels, s.kernel * s.kernel * s.in_channels);
        layer.bias = Vector::Zero(s.out_channels);
        c = s.out_channels;
        h = layer.out_h;
        w = layer.out_w;
        layers_.push_back(std::move(layer));
    }
}

Matrix FeatureExtractor::forward(const Matrix& input, int batch, ForwardCache* cache) const {
    if (input.rows() != input_.channels ||
        input.cols() != static_cast<Eigen::Index>(batch) * input_.height * input_.width)
        throw ShapeError("features: input does not match declared shape");
    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc.batch = batch;
    fc.cols.resize(layers_.size());
    fc.activations.resize(layers_.size());
    const Matrix* x = &input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        im2col(*x, batch, layer.in_h, layer.in_w, layer, fc.cols[i]);
        Matrix& a = fc.activations[i];
        a.noalias() = layer.weight * fc.cols[i];
        a.colwise() += layer.bias;
        if (layer.spec.relu) a = a.cwiseMax(0.0f);
        x = &a;
        if (!cache && i > 0) fc.cols[i - 1].resize(0, 0);
    }
    const int hw = last_height() * last_width();
    Matrix emb(x->rows(), batch);
    for (int b = 0; b < batch; ++b)
        emb.col(b) = x->middleCols(static_cast<Eigen::Index>(b) * hw, hw).rowwise().sum() / static_cast<float>(hw);
    if (cache) fc.embedding = emb;
    return emb;
}

void FeatureExtractor::backward(const ForwardCache& cache, const Matrix& d_embedding, FeatureExtractor& grads) const {
    const int batch = cache.batch;
    const int hw = last_height() * last_width();
    if (layers_.empty()) return;
    Matrix d_out(d_embedding.rows(), static_cast<Eigen::Index>(batch) * hw);
    for (int b = 0; b < batch; ++b)
        d_out.middleCols(static_cast<Eigen::Index>(b) * hw, hw).colwise() = d_embedding.col(b) / static_cast<float>(hw);
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& layer = layers_[li];
        if (layer.spec.relu)
            d_out = (cache.activations[li].array() > 0.0f).select(d_out, 0.0f);
        auto& g = grads.layers_[li];
        g.weight.noalias() += d_out * cache.cols[li].transpose();
        g.bias += d_out.rowwise().sum();
        if (li == 0) break;
        Matrix dcols = layer.weight.transpose() * d_out;
        Matrix d_in;
        col2im(dcols, batch, layer.in_h, layer.in_w, layer, d_in);
        d_out = std::move(d_in);
    }
}

void FeatureExtractor::set_zero() {
    for (auto& l : layers_) {
        l.weight.setZero();
        l.bias.setZero();
    }
}

std::string FeatureExtractor::hash() const {
    io::Sha256 h;
    for (const auto& l : layers_) {
        hash_matrix(h, l.weight.data(), l.weight.size());
        hash_matrix(h, l.bias.data(), l.bias.size());
    }
    return h.hex_digest();
}

Matrix LinearHead::logits(const Matrix& embedding) const {
    if (embedding.rows() != weight.cols()) throw ShapeError("head: embedding dimension mismatch");
    Matrix out = weight * embedding;
    out.colwise() += bias;
    return out;
}

std::string LinearHead::hash() const {
    io::Sha256 h;
    hash_matrix(h, weight.data(), weight.size());
    hash_matrix(h, bias.data(), bias.size());
    return h.hex_digest();
}

HeadGrad head_cross_entropy(const LinearHead& head, const Matrix& embedding, std::span<const int> labels) {
    const Eigen::Index batch = embedding.cols();
    if (static_cast<std::size_t>(batch) != labels.size()) throw ShapeError("head_cross_entropy: label count mismatch");
    const Eigen::MatrixXd emb = embedding.cast<double>();
    const Eigen::MatrixXd w = head.weight.cast<double>();
    Eigen::MatrixXd z = w * emb;
    z.colwise() += head.bias.cast<double>();
    const Eigen::Index k = z.rows();
    HeadGrad g;
    Eigen::MatrixXd dz(k, batch);
    double total = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
        const int y = labels[b];
        if (y < 0 || y >= k) throw InvalidInput("head_cross_entropy: label out of range");
        const double m = z.col(b).maxCoeff();
        Eigen::VectorXd e = (z.col(b).array() - m).exp();
        const double s = e.sum();
        total += m + std::log(s) - z(y, b);
        dz.col(b) = e / s;
        dz(y, b) -= 1.0;
    }
    const double inv = batch > 0 ? 1.0 / static_cast<double>(batch) : 0.0;
    dz *= inv;
    g.loss = total * inv;
    g.weight = dz * emb.transpose();
    g.bias = dz.rowwise().sum();
    g.embedding = w.transpose() * dz;
    return g;
}

std::vector<double> cross_entropy_per_example(const Matrix& logits, std::span<const int> labels) {
    std::vector<double> out(labels.size());
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const auto col = logits.col(static_cast<Eigen::Index>(b)).cast<double>();
        const double m = col.maxCoeff();
        out[b] = m + std::log((col.array() - m).exp().sum()) - col(labels[b]);
    }
    return out;
}

std::vector<int> argmax_per_column(const Matrix& logits) {
    std::vector<int> out(logits.cols());
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        Eigen::Index idx = 0;
        logits.col(b).maxCoeff(&idx);
        out[b] = static_cast<int>(idx);
    }
    return out;
}

SplitModel::SplitModel(InputShape input, int num_classes, const std::vector<ConvSpec>& specs)
    : num_classes_(num_classes), features_(input, specs) {
    if (num_classes < 2) throw InvalidInput("model: need at least two classes");
    head_.weight = Matrix::Zero(num_classes, features_.embedding_dim());
    head_.bias = Vector::Zero(num_classes);
}

SplitModel SplitModel::make(const BackboneConfig& config, std::uint64_t seed) {
    std::vector<ConvSpec> specs;
    int in = config.input.channels;
    for (int out : config.channels) {
        specs.push_back({in, out, config.kernel, config.stride, config.kernel / 2, true});
        in = out;
    }
    SplitModel model(config.input, config.num_classes, specs);
    auto gen = substream(seed, "init.features");
    for (auto& l : model.features_.layers()) {
        const double fan_in = static_cast<double>(l.weight.cols());
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (Eigen::Index i = 0; i < l.weight.size(); ++i)
            l.weight.data()[i] = static_cast<float>(normal01(gen) * std_dev);
    }
    model.reinit_head(seed);
    return model;
}

void SplitModel::reinit_head(std::uint64_t seed) {
    auto gen = substream(seed, "init.head");
    const double bound = 1.0 / std::sqrt(static_cast<double>(head_.weight.cols()));
    for (Eigen::Index i = 0; i < head_.weight.size(); ++i)
        head_.weight.data()[i] = static_cast<float>((2.0 * uniform01(gen) - 1.0) * bound);
    head_.bias.setZero();
}

void SplitModel::set_zero() {
    features_.set_zero();
    head_.weight.setZero();
    head_.bias.setZero();
}

std::vector<float> SplitModel::forward(const Image& image) const {
    const Image* one[] = {&image};
    Matrix packed = pack_images(std::span<const Image* const>(one, 1), input_shape());
    Matrix z = logits(packed, 1);
    return {z.data(), z.data() + z.size()};
}

std::vector<std::span<float>> SplitModel::parameters() {
    std::vector<std::span<float>> out;
    for (auto& l : features_.layers()) {
        out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    out.emplace_back(head_.weight.data(), static_cast<std::size_t>(head_.weight.size()));
    out.emplace_back(head_.bias.data(), static_cast<std::size_t>(head_.bias.size()));
    return out;
}

std::vector<std::string> SplitModel::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < features_.layers().size(); ++i) {
        out.push_back("conv" + std::to_string(i + 1) + ".weight");
        out.push_back("conv" + std::to_string(i + 1) + ".bias");
    }
    out.push_back("head.weight");
    out.push_back("head.bias");
    return out;
}

std::string SplitModel::weight_hash() const {
    io::Sha256 h;
    for (auto p : const_cast<SplitModel*>(this)->parameters()) h.update_floats(p);
    return h.hex_digest();
}

Matrix pack_images(std::span<const Image* const> images, InputShape shape) {
    const Eigen::Index hw = static_cast<Eigen::Index>(shape.height) * shape.width;
    Matrix out(shape.channels, hw * static_cast<Eigen::Index>(images.size()));
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Image& im = *images[b];
        if (im.channels != shape.channels || im.height != shape.height || im.width != shape.width)
            throw ShapeError("pack_images: image shape does not match model input");
        float* dst = out.data() + static_cast<Eigen::Index>(b) * hw * shape.channels;
        for (Eigen::Index p = 0; p < hw; ++p)
            for (int c = 0; c < shape.channels; ++c) dst[p * shape.channels + c] = im.data[c * hw + p];
    }
    return out;
}

Matrix pack_images(std::span<const Image> images, InputShape shape) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& im : images) ptrs.push_back(&im);
    return pack_images(std::span<const Image* const>(ptrs), shape);
}

double model_gradient(const SplitModel& model, const Matrix& packed, std::span<const int> labels, SplitModel& grads) {
    ForwardCache cache;
    const int batch = static_cast<int>(labels.size());
    Matrix emb = model.features().forward(packed, batch, &cache);
    HeadGrad hg = head_cross_entropy(model.head(), emb, labels);
    grads.head().weight += hg.weight.cast<float>();
    grads.head().bias += hg.bias.cast<float>();
    model.features().backward(cache, hg.embedding.cast<float>(), grads.features());
    return hg.loss;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'D', 'A', 'C', 'K', 'P', 'T', '0', '1'};

json header_for(const SplitModel& model) {
    json h;
    h["format"] = "dac-checkpoint";
    h["version"] = 1;
    h["dtype"] = "float32";
    h["endianness"] = "little";
    const auto& in = model.input_shape();
    h["input_shape"] = {in.channels, in.height, in.width};
    h["num_classes"] = model.num_classes();
    json layers = json::array();
    for (const auto& l : model.features().layers())
        layers.push_back({{"in", l.spec.in_channels}, {"out", l.spec.out_channels}, {"kernel", l.spec.kernel},
                          {"stride", l.spec.stride}, {"padding", l.spec.padding}, {"relu", l.spec.relu}});
    h["conv_layers"] = layers;
    json tensors = json::array();
    auto names = model.parameter_names();
    auto params = const_cast<SplitModel&>(model).parameters();
    for (std::size_t i = 0; i < names.size(); ++i) tensors.push_back({{"name", names[i]}, {"count", params[i].size()}});
    h["tensors"] = tensors;
    h["weight_hash"] = model.weight_hash();
    h["feature_hash"] = model.feature_hash();
    return h;
}

json parse_header(std::span<const std::uint8_t> bytes, std::size_t& offset, const std::filesystem::path& path) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw IntegrityError("checkpoint: bad magic or truncated header: " + path.string());
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
    if (16 + len > bytes.size()) throw IntegrityError("checkpoint: truncated header: " + path.string());
    offset = 16 + len;
    try {
        return json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(offset));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    }
}

}  // namespace

void save_checkpoint(const SplitModel& model, const std::filesystem::path& path) {
    const std::string header = header_for(model).dump();
    std::vector<std::uint8_t> bytes(kMagic, kMagic + 8);
    const std::uint64_t len = header.size();
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
    bytes.insert(bytes.end(), header.begin(), header.end());
    for (auto p : const_cast<SplitModel&>(model).parameters()) io::append_f32_le(bytes, p);
    io::write_bytes_atomic(path, bytes);
}

std::string checkpoint_hash(const std::filesystem::path& path) {
    auto bytes = io::read_bytes(path);
    std::size_t offset = 0;
    return parse_header(bytes, offset, path).at("weight_hash").get<std::string>();
}

SplitModel load_checkpoint(const std::filesystem::path& path) {
    auto bytes = io::read_bytes(path);
    std::size_t offset = 0;
    json h = parse_header(bytes, offset, path);
    try {
        InputShape in{h["input_shape"][0], h["input_shape"][1], h["input_shape"][2]};
        std::vector<ConvSpec> specs;
        for (const auto& l : h["conv_layers"])
            specs.push_back({l["in"], l["out"], l["kernel"], l["stride"], l["padding"], l["relu"]});
        SplitModel model(in, h["num_classes"].get<int>(), specs);
        auto params = model.parameters();
        const auto& tensors = h["tensors"];
        if (tensors.size() != params.size()) throw IntegrityError("checkpoint: tensor count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (tensors[i]["count"].get<std::size_t>() != params[i].size())
                throw IntegrityError("checkpoint: tensor size mismatch for " + tensors[i]["name"].get<std::string>());
            io::read_f32_le(bytes, offset, params[i]);
            offset += params[i].size() * 4;
        }
        if (offset != bytes.size()) throw IntegrityError("checkpoint: trailing bytes after weights");
        const std::string declared = h["weight_hash"];
        const std::string actual = model.weight_hash();
        if (declared != actual)
            throw IntegrityError("checkpoint: weight hash mismatch (header " + declared + ", data " + actual + ")");
        return model;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const ShapeError& e) {
        throw IntegrityError(std::string("checkpoint: inconsistent architecture: ") + e.what());
    }
}

SplitModel load_checkpoint(const std::filesystem::path& path, InputShape expected) {
    SplitModel m = load_checkpoint(path);
    if (!(m.input_shape() == expected))
        throw ShapeError("checkpoint input shape does not match expected input shape");
    return m;
}

}  // namespace dac
