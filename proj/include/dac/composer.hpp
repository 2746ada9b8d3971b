#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dac/image.hpp"

namespace dac::composer {

// Per-channel fill value b.
using FillColor = std::vector<float>;

// Per-channel mean over every pixel of every image in the batch.
FillColor batch_mean(std::span<const Image* const> batch);

struct ComposedExample {
    Image image;
    int label = 0;  // label of the causal donor i
    std::string donor_i;
    std::string donor_j;
    bool inverted = false;
};

// Coefficients of x_i, x_j and b at each pixel:
//   m_i,  (1 - m_i)(1 - m_j),  (1 - m_i) m_j
struct CoefficientFields {
    std::vector<float> keep_i;
    std::vector<float> take_j;
    std::vector<float> fill;
};
CoefficientFields coefficient_fields(const BinaryMask& m_i, const BinaryMask& m_j);

// m_i*x_i + (1-m_i)(1-m_j)*x_j + (1-m_i)*m_j*b, labelled y_i.
ComposedExample compose(const Image& x_i, const BinaryMask& m_i, const Image& x_j, const BinaryMask& m_j,
                        std::span<const float> b, int y_i);

// A low-loss example eligible for composition, with its cached mask.
struct Donor {
    const Image* image = nullptr;
    const BinaryMask* mask = nullptr;
    int label = 0;
    std::string id;
};

struct ComposedSet {
    std::vector<ComposedExample> examples;
    std::size_t skipped = 0;    // donors with no partner other than themselves
    std::size_t same_class = 0; // pairings that used the same-class fallback
};

// One composition per donor. The partner is drawn uniformly (with
// replacement across donors) from donors with a different label; when none
// exists it is drawn from the other same-label donors. With causalflag =
// false both masks are inverted first. Draws for donor k come from the
// counter-indexed substream (seed, "pairing", k).
ComposedSet build_composed_set(std::span<const Donor> selected, std::span<const float> b, bool causalflag,
                               std::uint64_t seed);

}  // namespace dac::composer
