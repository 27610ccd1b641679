#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include <json.hpp>

#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/geometry.hpp"
#include "tumorsearch/core/tasks.hpp"

namespace tumorsearch::phantom {

struct PhantomConfig {
    Shape3 volume_shape{{64, 64, 64}};
    std::array<double, 3> voxel_spacing_mm{1.0, 1.0, 1.0};
    int n_images = 120;
    int min_tumors_per_image = 1;
    int max_tumors_per_image = 3;
    /// Prior over {metastasis, meningioma, schwannoma}.
    std::array<double, kNumTumorTypes> type_priors{0.40, 0.35, 0.25};
    double min_size_mm = 4.0;
    double max_size_mm = 20.0;
    int n_regions = 11;
    double noise_sigma = 0.05;
    double missing_label_rate = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (volume_shape[a] < 8) throw ConfigError("volume_shape", "each side must be at least 8 voxels");
            if (!(voxel_spacing_mm[a] > 0.0)) throw ConfigError("voxel_spacing_mm", "must be positive");
        }
        if (n_images < 1) throw ConfigError("n_images", "must be positive");
        if (min_tumors_per_image < 1 || max_tumors_per_image < min_tumors_per_image) {
            throw ConfigError("tumors_per_image", "need 1 <= min <= max");
        }
        double total = 0.0;
        for (double p : type_priors) {
            if (p < 0.0) throw ConfigError("type_priors", "probabilities must be non-negative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("type_priors", "must sum to 1");
        const double max_spacing = std::max({voxel_spacing_mm[0], voxel_spacing_mm[1], voxel_spacing_mm[2]});
        if (min_size_mm < 2.0 * max_spacing) throw ConfigError("size_range_mm", "minimum must span at least 2 voxels");
        if (max_size_mm < min_size_mm) throw ConfigError("size_range_mm", "max must be >= min");
        for (std::size_t a = 0; a < 3; ++a) {
            // A tumor must fit comfortably inside the smallest admissible brain.
            if (max_size_mm / voxel_spacing_mm[a] > 0.35 * volume_shape[a]) {
                throw ConfigError("size_range_mm", "max tumor size too large for the volume");
            }
        }
        if (n_regions < 2) throw ConfigError("n_regions", "must be at least 2");
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma", "must be non-negative");
        if (missing_label_rate < 0.0 || missing_label_rate > 1.0) {
            throw ConfigError("missing_label_rate", "must lie in [0, 1]");
        }
    }
};

inline void to_json(nlohmann::json& j, const PhantomConfig& c) {
    j = nlohmann::json{{"volume_shape", c.volume_shape.dims},
                       {"voxel_spacing_mm", c.voxel_spacing_mm},
                       {"n_images", c.n_images},
                       {"tumors_per_image", {c.min_tumors_per_image, c.max_tumors_per_image}},
                       {"type_priors", c.type_priors},
                       {"size_range_mm", {c.min_size_mm, c.max_size_mm}},
                       {"n_regions", c.n_regions},
                       {"noise_sigma", c.noise_sigma},
                       {"missing_label_rate", c.missing_label_rate},
                       {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, PhantomConfig& c) {
    for (const auto& [key, value] : j.items()) {
        if (key == "volume_shape") c.volume_shape.dims = value.get<std::array<int, 3>>();
        else if (key == "voxel_spacing_mm") c.voxel_spacing_mm = value.get<std::array<double, 3>>();
        else if (key == "n_images") c.n_images = value.get<int>();
        else if (key == "tumors_per_image") {
            const auto range = value.get<std::array<int, 2>>();
            c.min_tumors_per_image = range[0];
            c.max_tumors_per_image = range[1];
        } else if (key == "type_priors") c.type_priors = value.get<std::array<double, kNumTumorTypes>>();
        else if (key == "size_range_mm") {
            const auto range = value.get<std::array<double, 2>>();
            c.min_size_mm = range[0];
            c.max_size_mm = range[1];
        } else if (key == "n_regions") c.n_regions = value.get<int>();
        else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
        else if (key == "missing_label_rate") c.missing_label_rate = value.get<double>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else throw ConfigError(key, "unknown phantom config field");
    }
}

}  // namespace tumorsearch::phantom
