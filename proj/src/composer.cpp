#include "dac/composer.hpp"

#include "dac/random.hpp"

namespace dac::composer {

FillColor batch_mean(std::span<const Image* const> batch) {
    if (batch.empty()) throw InvalidInput("batch_mean: empty batch");
    const int channels = batch.front()->channels;
    std::vector<double> sum(channels, 0.0);
    std::size_t count = 0;
    for (const Image* im : batch) {
        if (im->channels != channels) throw ShapeError("batch_mean: channel count differs within batch");
        const std::size_t hw = im->pixels();
        for (int c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < hw; ++i) sum[c] += im->data[c * hw + i];
        count += hw;
    }
    FillColor b(channels);
    for (int c = 0; c < channels; ++c) b[c] = static_cast<float>(sum[c] / static_cast<double>(count));
    return b;
}

CoefficientFields coefficient_fields(const BinaryMask& m_i, const BinaryMask& m_j) {
    if (m_i.height != m_j.height || m_i.width != m_j.width) throw ShapeError("coefficient_fields: mask shapes differ");
    CoefficientFields f;
    const std::size_t n = m_i.size();
    f.keep_i.resize(n);
    f.take_j.resize(n);
    f.fill.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
        const float mi = m_i.bits[p], mj = m_j.bits[p];
        f.keep_i[p] = mi;
        f.take_j[p] = (1.0f - mi) * (1.0f - mj);
        f.fill[p] = (1.0f - mi) * mj;
    }
    return f;
}

ComposedExample compose(const Image& x_i, const BinaryMask& m_i, const Image& x_j, const BinaryMask& m_j,
                        std::span<const float> b, int y_i) {
    if (!x_i.same_shape(x_j)) throw ShapeError("compose: donor images differ in shape");
    if (m_i.height != x_i.height || m_i.width != x_i.width || m_j.height != x_j.height || m_j.width != x_j.width)
        throw ShapeError("compose: mask shape differs from image");
    if (b.size() != static_cast<std::size_t>(x_i.channels)) throw ShapeError("compose: fill needs one value per channel");
    ComposedExample out;
    out.label = y_i;
    out.image = Image(x_i.channels, x_i.height, x_i.width);
    const std::size_t hw = x_i.pixels();
    for (int c = 0; c < x_i.channels; ++c) {
        const float* xi = x_i.data.data() + c * hw;
        const float* xj = x_j.data.data() + c * hw;
        float* o = out.image.data.data() + c * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            const float mi = m_i.bits[p], mj = m_j.bits[p];
            o[p] = mi * xi[p] + (1.0f - mi) * (1.0f - mj) * xj[p] + (1.0f - mi) * mj * b[c];
        }
    }
    return out;
}

ComposedSet build_composed_set(std::span<const Donor> selected, std::span<const float> b, bool causalflag,
                               std::uint64_t seed) {
    ComposedSet set;
    std::vector<BinaryMask> inverted;
    if (!causalflag) {
        inverted.reserve(selected.size());
        for (const auto& d : selected) inverted.push_back(d.mask->inverted());
    }
    auto mask_of = [&](std::size_t k) -> const BinaryMask& { return causalflag ? *selected[k].mask : inverted[k]; };

    std::vector<std::size_t> eligible;
    for (std::size_t k = 0; k < selected.size(); ++k) {
        eligible.clear();
        for (std::size_t j = 0; j < selected.size(); ++j)
            if (selected[j].label != selected[k].label) eligible.push_back(j);
        bool fallback = false;
        if (eligible.empty()) {
            for (std::size_t j = 0; j < selected.size(); ++j)
                if (j != k) eligible.push_back(j);
            fallback = true;
        }
        if (eligible.empty()) {
            ++set.skipped;
            continue;
        }
        auto gen = substream(seed, "pairing", k);
        const std::size_t j = eligible[uniform_index(gen, eligible.size())];
        ComposedExample ex = compose(*selected[k].image, mask_of(k), *selected[j].image, mask_of(j), b, selected[k].label);
        ex.donor_i = selected[k].id;
        ex.donor_j = selected[j].id;
        ex.inverted = !causalflag;
        set.same_class += fallback ? 1 : 0;
        set.examples.push_back(std::move(ex));
    }
    return set;
}

}  // namespace dac::composer
