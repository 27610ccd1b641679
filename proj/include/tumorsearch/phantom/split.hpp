#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tumorsearch/core/rng.hpp"
#include "tumorsearch/phantom/manifest.hpp"

namespace tumorsearch::phantom {

/// Assigns whole images to train/test. round(test_fraction * n) images end up
/// in the test split; every tumor inherits its image's tag.
inline DatasetManifest split_dataset(DatasetManifest manifest, double test_fraction, std::uint64_t seed) {
    if (manifest.images.size() < 5) throw Error("split needs at least 5 images, got " + std::to_string(manifest.images.size()));
    if (test_fraction < 0.0 || test_fraction > 1.0) throw ConfigError("test_fraction", "must lie in [0, 1]");
    std::vector<std::size_t> order(manifest.images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(order, rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
    for (std::size_t i = 0; i < order.size(); ++i) {
        manifest.images[order[i]].split = i < n_test ? Split::test : Split::train;
    }
    return manifest;
}

}  // namespace tumorsearch::phantom
