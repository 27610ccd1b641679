#pragma once

#include <array>
#include <cmath>

#include <json.hpp>

#include "tumorsearch/core/geometry.hpp"
#include "tumorsearch/core/rng.hpp"

namespace tumorsearch::retrieval {

/// Box corruption: per-axis log-normal scaling about the center and a
/// Gaussian shift proportional to the side length.
struct DistortionParams {
    double sigma_log2_scale = 1.0 / 3.0;
    double sigma_translation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(sigma_log2_scale >= 0.0)) throw ConfigError("sigma_log2_scale", "must be >= 0");
        if (!(sigma_translation_fraction >= 0.0)) throw ConfigError("sigma_translation_fraction", "must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const DistortionParams& p) {
    j = {{"sigma_log2_scale", p.sigma_log2_scale},
         {"sigma_translation_fraction", p.sigma_translation_fraction},
         {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, DistortionParams& p) {
    p.sigma_log2_scale = j.value("sigma_log2_scale", p.sigma_log2_scale);
    p.sigma_translation_fraction = j.value("sigma_translation_fraction", p.sigma_translation_fraction);
    p.seed = j.value("seed", p.seed);
    p.validate();
}

/// Raw per-axis draws before rounding: log2 of the scale and shift / side.
struct DistortionDraw {
    std::array<double, 3> log2_scale{};
    std::array<double, 3> shift_fraction{};
};

inline BBox distort_bbox(const BBox& box, const Shape3& volume, const DistortionParams& params, Rng& rng,
                         DistortionDraw* draw = nullptr) {
    if (box.empty()) throw Error("cannot distort an empty box " + box.str());
    BBox out;
    for (std::size_t a = 0; a < 3; ++a) {
        // both draws are taken even for zero sigmas so the stream stays aligned
        const double g = rng.normal() * params.sigma_log2_scale;
        const double h = rng.normal() * params.sigma_translation_fraction;
        if (draw) {
            draw->log2_scale[a] = g;
            draw->shift_fraction[a] = h;
        }
        const double side = box.side(a);
        const double center = 0.5 * (box.start[a] + box.stop[a]) + side * h;
        const double half = 0.5 * side * std::exp2(g);
        int lo = static_cast<int>(std::round(center - half));
        int hi = static_cast<int>(std::round(center + half));
        lo = std::clamp(lo, 0, volume[a] - 1);
        hi = std::clamp(hi, lo + 1, volume[a]);
        out.start[a] = lo;
        out.stop[a] = hi;
    }
    return out;
}

}  // namespace tumorsearch::retrieval
