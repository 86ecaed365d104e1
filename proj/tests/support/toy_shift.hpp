#pragma once

// Two-class 2-D toy domain shift: the target is the source with the first
// feature's sign flipped. Classes are imbalanced (70/30) and their means are
// placed asymmetrically, so the only alignment of the two marginals is the
// one that reads the second feature; a classifier relying on the first
// feature fails on the target.

#include <cstdint>

#include "dapol/dan.hpp"
#include "dapol/net.hpp"
#include "dapol/rng.hpp"

namespace dapol::toy {

struct ToyShift {
    dan::LabeledData source;
    dan::LabeledData target;  ///< labels kept for scoring only
};

inline dan::LabeledData toy_domain(std::size_t n, std::uint64_t seed, bool flip) {
    constexpr double mean[2][2] = {{-2.0, 1.0}, {1.0, -1.0}};
    constexpr double spread = 0.45;
    Rng rng(seed);
    dan::LabeledData d{Matrix(n, 2), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = (i % 10 < 7) ? 0 : 1;
        d.labels[i] = c;
        d.x(i, 0) = rng.normal(mean[c][0], spread) * (flip ? -1.0 : 1.0);
        d.x(i, 1) = rng.normal(mean[c][1], spread);
    }
    return d;
}

inline ToyShift make_toy_shift(std::size_t n, std::uint64_t seed) {
    return {toy_domain(n, derive_seed(seed, {1}), false), toy_domain(n, derive_seed(seed, {2}), true)};
}

inline std::vector<nn::LayerSpec> toy_arch() {
    using nn::Role;
    return nn::ArchBuilder(2)
        .dense(16, Role::finetune).relu()
        .dense(16, Role::adapt).relu()
        .dense(2, Role::adapt).softmax()
        .build();
}

}  // namespace dapol::toy
