#include "dac/attribution.hpp"

#include <algorithm>
#include <cmath>

namespace dac::attribution {

std::vector<float> upsample_bilinear(std::span<const float> src, int src_h, int src_w, int dst_h, int dst_w) {
    std::vector<float> out(static_cast<std::size_t>(dst_h) * dst_w);
    const double sy = static_cast<double>(src_h) / dst_h;
    const double sx = static_cast<double>(src_w) / dst_w;
    for (int y = 0; y < dst_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < dst_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src_w - 1);
            const double wx = fx - x0;
            const double top = src[y0 * src_w + x0] * (1 - wx) + src[y0 * src_w + x1] * wx;
            const double bot = src[y1 * src_w + x0] * (1 - wx) + src[y1 * src_w + x1] * wx;
            out[static_cast<std::size_t>(y) * dst_w + x] = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return out;
}

void normalize_scores(std::vector<float>& scores) {
    if (scores.empty()) return;
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    const float mn = *lo, mx = *hi;
    if (mx > mn) {
        const float span = mx - mn;
        for (auto& s : scores) s = std::clamp((s - mn) / span, 0.0f, 1.0f);
    } else {
        std::fill(scores.begin(), scores.end(), mx > 0.0f ? 1.0f : 0.0f);
    }
}

std::vector<AttributionMap> xgradcam_batch(const SplitModel& model, std::span<const Image* const> images,
                                           std::span<const int> targets) {
    if (images.size() != targets.size()) throw InvalidInput("xgradcam: one target per image required");
    if (model.features().layers().empty()) throw InvalidInput("xgradcam: model has no convolutional layer");
    for (int t : targets)
        if (t < 0 || t >= model.num_classes()) throw InvalidInput("xgradcam: target category out of range");
    std::vector<AttributionMap> maps;
    if (images.empty()) return maps;

    const InputShape in = model.input_shape();
    const int batch = static_cast<int>(images.size());
    ForwardCache cache;
    model.embed(pack_images(images, in), batch, &cache);
    const Matrix& act = cache.activations.back();
    const int lh = model.features().last_height();
    const int lw = model.features().last_width();
    const int hw = lh * lw;
    const auto& w = model.head().weight;

    maps.reserve(images.size());
    for (int b = 0; b < batch; ++b) {
        const auto a = act.middleCols(static_cast<Eigen::Index>(b) * hw, hw);  // D x hw
        // dy_t/dA_k(hw) through global average pooling is w(t,k)/hw at every location.
        std::vector<double> raw(hw, 0.0);
        for (Eigen::Index k = 0; k < a.rows(); ++k) {
            const double grad = static_cast<double>(w(targets[b], k)) / hw;
            double num = 0.0, den = 0.0;
            for (int j = 0; j < hw; ++j) {
                num += grad * a(k, j);
                den += a(k, j);
            }
            const double alpha = num / (den + kDenominatorEps);
            if (!std::isfinite(alpha)) throw NumericError("xgradcam: non-finite channel weight");
            for (int j = 0; j < hw; ++j) raw[j] += alpha * a(k, j);
        }
        std::vector<float> coarse(hw);
        for (int j = 0; j < hw; ++j) {
            if (!std::isfinite(raw[j])) throw NumericError("xgradcam: non-finite activation map");
            // layout inside a column block is y*lw + x
            coarse[j] = static_cast<float>(std::max(raw[j], 0.0));
        }
        AttributionMap map;
        map.height = in.height;
        map.width = in.width;
        map.target_label = targets[b];
        map.scores = upsample_bilinear(coarse, lh, lw, in.height, in.width);
        normalize_scores(map.scores);
        maps.push_back(std::move(map));
    }
    return maps;
}

AttributionMap xgradcam(const SplitModel& model, const Image& image, int target) {
    const Image* one[] = {&image};
    const int t[] = {target};
    return std::move(xgradcam_batch(model, one, t).front());
}

double region_mean_score(const AttributionMap& map, const BinaryMask& region) {
    if (region.height != map.height || region.width != map.width)
        throw ShapeError("region_mean_score: region shape differs from map");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < region.size(); ++i)
        if (region.bits[i]) {
            sum += map.scores[i];
            ++n;
        }
    if (n == 0) throw InvalidInput("region_mean_score: empty region");
    return sum / static_cast<double>(n);
}

}  // namespace dac::attribution
