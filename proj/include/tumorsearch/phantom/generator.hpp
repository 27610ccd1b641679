#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <vector>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/core/rng.hpp"
#include "tumorsearch/phantom/config.hpp"
#include "tumorsearch/phantom/labels.hpp"
#include "tumorsearch/phantom/manifest.hpp"

namespace tumorsearch::phantom {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 random_unit(Rng& rng) {
    // Marsaglia's method.
    for (;;) {
        const double a = rng.uniform(-1.0, 1.0);
        const double b = rng.uniform(-1.0, 1.0);
        const double s = a * a + b * b;
        if (s >= 1.0 || s == 0.0) continue;
        const double f = 2.0 * std::sqrt(1.0 - s);
        return {a * f, b * f, 1.0 - 2.0 * s};
    }
}

/// Orthonormal frame whose third axis is `w`.
inline std::array<Vec3, 3> frame_around(const Vec3& w) {
    const Vec3 helper = std::abs(w[0]) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
    Vec3 u{helper[1] * w[2] - helper[2] * w[1], helper[2] * w[0] - helper[0] * w[2],
           helper[0] * w[1] - helper[1] * w[0]};
    const double n = std::sqrt(dot(u, u));
    for (double& c : u) c /= n;
    const Vec3 v{w[1] * u[2] - w[2] * u[1], w[2] * u[0] - w[0] * u[2], w[0] * u[1] - w[1] * u[0]};
    return {u, v, w};
}

/// Axis-aligned brain ellipsoid in voxel coordinates.
struct BrainSupport {
    Vec3 center{};
    Vec3 semi_axes{};

    Vec3 normalized(const Vec3& voxel) const {
        return {(voxel[0] - center[0]) / semi_axes[0], (voxel[1] - center[1]) / semi_axes[1],
                (voxel[2] - center[2]) / semi_axes[2]};
    }

    double radius(const Vec3& voxel) const {
        const Vec3 u = normalized(voxel);
        return std::sqrt(dot(u, u));
    }

    bool contains(const Vec3& voxel) const { return radius(voxel) <= 1.0; }
};

struct TextureWave {
    Vec3 frequency{};  // radians per voxel
    double phase = 0.0;
    double amplitude = 0.0;
};

/// Noise-free brain intensity model. Besides random low-frequency texture it
/// carries fixed anatomy shared by every subject: a dark interhemispheric
/// fissure, two dark ventricles, a darker cortical rim and a gentle
/// orientation-dependent intensity field.
struct BrainModel {
    BrainSupport support;
    std::vector<TextureWave> texture;

    double intensity(const Vec3& voxel) const {
        const Vec3 u = support.normalized(voxel);
        const double rho = std::sqrt(dot(u, u));
        if (rho > 1.0) return 0.0;
        double value = 0.5 + 0.10 * std::tanh(u[0] / 0.1) + 0.04 * u[1] - 0.04 * u[2];
        const double fissure_mm = (voxel[0] - support.center[0]) / 1.2;
        value -= 0.25 * std::exp(-fissure_mm * fissure_mm) * (u[2] > -0.3 ? 1.0 : 0.0);
        for (double side : {-1.0, 1.0}) {
            const Vec3 c{side * 0.15, -0.05, 0.10};
            const Vec3 r{0.10, 0.28, 0.12};
            double q = 0.0;
            for (std::size_t a = 0; a < 3; ++a) q += ((u[a] - c[a]) / r[a]) * ((u[a] - c[a]) / r[a]);
            if (q <= 1.0) value -= 0.22;
        }
        if (rho > 0.88) value -= 0.08;
        for (const auto& w : texture) value += w.amplitude * std::cos(dot(w.frequency, voxel) + w.phase);
        return value;
    }
};

struct Brain {
    Volume volume;
    BrainModel model;
};

/// Samples a brain ellipsoid filling 50-80% of each axis and renders it with
/// `noise_sigma` Gaussian noise over the whole volume.
inline Brain synth_brain(Rng& rng, const PhantomConfig& config) {
    const Shape3 shape = config.volume_shape;
    Brain brain;
    for (std::size_t a = 0; a < 3; ++a) {
        const double fraction = rng.uniform(0.5, 0.8);
        brain.model.support.semi_axes[a] = 0.5 * fraction * shape[a];
        brain.model.support.center[a] = 0.5 * (shape[a] - 1) + rng.uniform(-0.01, 0.01) * shape[a];
    }
    for (int i = 0; i < 3; ++i) {
        TextureWave w;
        const Vec3 dir = random_unit(rng);
        const double wavelength = rng.uniform(16.0, 32.0);
        for (std::size_t a = 0; a < 3; ++a) w.frequency[a] = dir[a] * 2.0 * std::numbers::pi / wavelength;
        w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        w.amplitude = 0.03;
        brain.model.texture.push_back(w);
    }
    brain.volume = Volume(shape);
    for (int x = 0; x < shape[0]; ++x) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int z = 0; z < shape[2]; ++z) {
                const Vec3 p{double(x), double(y), double(z)};
                const double noise = config.noise_sigma > 0.0 ? config.noise_sigma * rng.normal() : 0.0;
                brain.volume(x, y, z) = static_cast<float>(brain.model.intensity(p) + noise);
            }
        }
    }
    return brain;
}

/// Solid ellipsoid in millimetre space.
struct Ellipsoid {
    Vec3 center_mm{};
    std::array<Vec3, 3> axes{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    Vec3 radii_mm{};

    /// Squared normalized radius of `p_mm`; <= 1 means inside.
    double level(const Vec3& p_mm) const {
        const Vec3 d{p_mm[0] - center_mm[0], p_mm[1] - center_mm[1], p_mm[2] - center_mm[2]};
        double q = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double t = dot(d, axes[k]) / radii_mm[k];
            q += t * t;
        }
        return q;
    }

    double max_radius() const { return std::max({radii_mm[0], radii_mm[1], radii_mm[2]}); }
};

/// Union of ellipsoids; the first part is the tumor body.
struct TumorShape {
    TumorType type = TumorType::metastasis;
    std::vector<Ellipsoid> parts;
    double diameter_mm = 0.0;

    double level(const Vec3& p_mm) const {
        double best = parts.front().level(p_mm);
        for (std::size_t i = 1; i < parts.size(); ++i) best = std::min(best, parts[i].level(p_mm));
        return best;
    }

    void translate(const Vec3& offset_mm) {
        for (auto& part : parts) {
            for (std::size_t a = 0; a < 3; ++a) part.center_mm[a] += offset_mm[a];
        }
    }
};

struct Voxel {
    std::array<int, 3> index{};
    /// Normalized radius inside the tumor, in [0, 1].
    double depth = 0.0;
};

/// Voxels whose centers lie inside `shape`.
inline std::vector<Voxel> rasterize(const TumorShape& shape, const Shape3& volume_shape, const Vec3& spacing) {
    const Vec3& c = shape.parts.front().center_mm;
    const double reach = 0.5 * shape.diameter_mm + 1e-9;
    std::array<int, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((c[a] - reach) / spacing[a])));
        hi[a] = std::min(volume_shape[a] - 1, static_cast<int>(std::ceil((c[a] + reach) / spacing[a])));
    }
    std::vector<Voxel> voxels;
    for (int x = lo[0]; x <= hi[0]; ++x) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
            for (int z = lo[2]; z <= hi[2]; ++z) {
                const Vec3 p{x * spacing[0], y * spacing[1], z * spacing[2]};
                const double q = shape.level(p);
                if (q <= 1.0) voxels.push_back({{x, y, z}, std::sqrt(q)});
            }
        }
    }
    return voxels;
}

/// Tumors must stay this far inside the brain surface (normalized radius).
inline constexpr double kTumorBrainMargin = 0.92;
/// Tumors keep this many voxels clear of the midsagittal plane, so none
/// crosses between hemispheres.
inline constexpr double kMidlineGap = 1.0;
/// Meningiomas reach into the outer band of the brain beyond this radius.
inline constexpr double kMeningiomaBand = 0.85;
/// Schwannoma anchor offsets from the brain center, in semi-axis units; the
/// sign of the first component selects the hemisphere.
inline constexpr Vec3 kSchwannomaAnchor{0.45, 0.30, -0.20};
inline constexpr double kSchwannomaJitter = 0.06;

inline Vec3 schwannoma_anchor(const BrainSupport& brain, int side) {
    const double sign = side == 0 ? -1.0 : 1.0;
    return {brain.center[0] + sign * kSchwannomaAnchor[0] * brain.semi_axes[0],
            brain.center[1] + kSchwannomaAnchor[1] * brain.semi_axes[1],
            brain.center[2] + kSchwannomaAnchor[2] * brain.semi_axes[2]};
}

/// Shape template centered at the origin.
inline TumorShape make_shape(Rng& rng, TumorType type, double diameter_mm) {
    TumorShape shape;
    shape.type = type;
    shape.diameter_mm = diameter_mm;
    const double r = 0.5 * diameter_mm;
    switch (type) {
        case TumorType::metastasis: {
            Ellipsoid body;
            body.axes = frame_around(random_unit(rng));
            body.radii_mm = {r, r, r * rng.uniform(0.85, 1.0)};
            shape.parts.push_back(body);
            break;
        }
        case TumorType::meningioma: {
            Ellipsoid body;
            body.radii_mm = {0.7 * r, 0.7 * r, 0.7 * r};
            shape.parts.push_back(body);
            const auto lobes = rng.uniform_int(2, 4);
            for (std::int64_t i = 0; i < lobes; ++i) {
                const Vec3 d = random_unit(rng);
                Ellipsoid lobe;
                lobe.center_mm = {0.45 * r * d[0], 0.45 * r * d[1], 0.45 * r * d[2]};
                lobe.radii_mm = {0.5 * r, 0.5 * r, 0.5 * r};
                shape.parts.push_back(lobe);
            }
            break;
        }
        case TumorType::schwannoma: {
            // Elongated along the front/rear axis with a small random tilt.
            Vec3 w{rng.uniform(-0.25, 0.25), 1.0, rng.uniform(-0.25, 0.25)};
            const double n = std::sqrt(dot(w, w));
            for (double& c : w) c /= n;
            Ellipsoid body;
            body.axes = frame_around(w);
            body.radii_mm = {0.6 * r, 0.6 * r, r};
            shape.parts.push_back(body);
            break;
        }
    }
    return shape;
}

struct PlacedTumor {
    TumorShape shape;
    std::vector<Voxel> voxels;
};

/// Places one tumor of the given type and diameter inside the brain, avoiding
/// voxels flagged in `occupied`. Returns nullopt after 100 failed attempts so
/// the caller can redraw the size.
inline std::optional<PlacedTumor> synth_tumor(Rng& rng, TumorType type, double diameter_mm, const PhantomConfig& config,
                                              const BrainSupport& brain, const Mask& occupied) {
    const Vec3 spacing = config.voxel_spacing_mm;
    const Shape3 shape3 = config.volume_shape;

    auto fits = [&](const std::vector<Voxel>& voxels, double* outer) {
        if (voxels.empty()) return false;
        double max_rho = 0.0;
        const double side = voxels.front().index[0] < brain.center[0] ? -1.0 : 1.0;
        for (const auto& v : voxels) {
            const Vec3 p{double(v.index[0]), double(v.index[1]), double(v.index[2])};
            if (side * (p[0] - brain.center[0]) < kMidlineGap) return false;
            const double rho = brain.radius(p);
            if (rho > kTumorBrainMargin) return false;
            if (occupied(v.index[0], v.index[1], v.index[2])) return false;
            max_rho = std::max(max_rho, rho);
        }
        if (outer) *outer = max_rho;
        return true;
    };

    for (int attempt = 0; attempt < 100; ++attempt) {
        TumorShape shape = make_shape(rng, type, diameter_mm);
        Vec3 center_vox{};
        switch (type) {
            case TumorType::metastasis: {
                const Vec3 d = random_unit(rng);
                const double rho = kTumorBrainMargin * std::cbrt(rng.uniform());
                for (std::size_t a = 0; a < 3; ++a) center_vox[a] = brain.center[a] + d[a] * rho * brain.semi_axes[a];
                break;
            }
            case TumorType::meningioma: {
                // Slide inward along a random ray until the blob fits, then
                // require it to reach the outer band.
                const Vec3 d = random_unit(rng);
                for (double rho = kTumorBrainMargin; rho > 0.0; rho -= 0.02) {
                    TumorShape trial = shape;
                    Vec3 c{};
                    for (std::size_t a = 0; a < 3; ++a) c[a] = brain.center[a] + d[a] * rho * brain.semi_axes[a];
                    trial.translate({c[0] * spacing[0], c[1] * spacing[1], c[2] * spacing[2]});
                    const auto voxels = rasterize(trial, shape3, spacing);
                    double outer = 0.0;
                    if (fits(voxels, &outer)) {
                        if (outer >= kMeningiomaBand) return PlacedTumor{trial, voxels};
                        break;
                    }
                }
                continue;
            }
            case TumorType::schwannoma: {
                const int side = static_cast<int>(rng.uniform_int(0, 1));
                const Vec3 anchor = schwannoma_anchor(brain, side);
                for (std::size_t a = 0; a < 3; ++a) {
                    center_vox[a] = anchor[a] + rng.uniform(-kSchwannomaJitter, kSchwannomaJitter) * brain.semi_axes[a];
                }
                break;
            }
        }
        shape.translate({center_vox[0] * spacing[0], center_vox[1] * spacing[1], center_vox[2] * spacing[2]});
        auto voxels = rasterize(shape, shape3, spacing);
        if (fits(voxels, nullptr)) return PlacedTumor{std::move(shape), std::move(voxels)};
    }
    return std::nullopt;
}

/// Intensity added on top of the local brain intensity.
inline double tumor_contrast(TumorType type, const Voxel& v, double noise_sigma) {
    double contrast = 0.0;
    switch (type) {
        case TumorType::metastasis:  // ring enhancement around a darker core
            contrast = 0.10 + 0.75 * v.depth * v.depth;
            break;
        case TumorType::meningioma:
            contrast = 0.50;
            break;
        case TumorType::schwannoma:  // heterogeneous
            contrast = 0.18 + 0.10 * std::cos(1.7 * v.index[0] + 2.3 * v.index[1] + 2.9 * v.index[2]);
            break;
    }
    return contrast + 3.0 * noise_sigma;
}

/// Width and peak intensity drop of the edema rim around metastases.
inline constexpr double kEdemaWidthMm = 3.0;
inline constexpr double kEdemaDrop = 0.15;

/// Darkens brain tissue within kEdemaWidthMm outside a tumor, fading
/// linearly to nothing; voxels owned by any tumor are left alone.
inline void add_edema(Volume& volume, const Array3<std::uint8_t>& owner, const TumorShape& shape, const BrainSupport& brain,
                      const Vec3& spacing) {
    const Vec3& c = shape.parts.front().center_mm;
    const double r = 0.5 * shape.diameter_mm;
    const double reach = r + kEdemaWidthMm;
    std::array<int, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((c[a] - reach) / spacing[a])));
        hi[a] = std::min(volume.shape[a] - 1, static_cast<int>(std::ceil((c[a] + reach) / spacing[a])));
    }
    for (int x = lo[0]; x <= hi[0]; ++x) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
            for (int z = lo[2]; z <= hi[2]; ++z) {
                if (owner(x, y, z) || !brain.contains({double(x), double(y), double(z)})) continue;
                const double outside_mm = (std::sqrt(shape.level({x * spacing[0], y * spacing[1], z * spacing[2]})) - 1.0) * r;
                if (outside_mm <= 0.0 || outside_mm >= kEdemaWidthMm) continue;
                volume(x, y, z) -= static_cast<float>(kEdemaDrop * (1.0 - outside_mm / kEdemaWidthMm));
            }
        }
    }
}

struct GeneratedImage {
    Volume volume;
    Mask mask;
    std::vector<TumorRecord> tumors;
    BrainSupport brain;
};

inline TumorType draw_type(Rng& rng, const PhantomConfig& config) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < kNumTumorTypes; ++i) {
        acc += config.type_priors[i];
        if (u < acc && config.type_priors[i] > 0.0) return static_cast<TumorType>(i);
    }
    for (int i = kNumTumorTypes - 1; i >= 0; --i) {
        if (config.type_priors[i] > 0.0) return static_cast<TumorType>(i);
    }
    return TumorType::metastasis;
}

inline std::string image_id_for(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img%04d", index);
    return buf;
}

/// Generates image `index`; pure in (config, index).
inline GeneratedImage generate_image(const PhantomConfig& config, int index) {
    Rng rng = Rng(config.seed).fork(static_cast<std::uint64_t>(index));
    Brain brain = synth_brain(rng, config);
    const Shape3 shape = config.volume_shape;

    GeneratedImage out;
    out.brain = brain.model.support;
    out.mask = Mask(shape);
    Mask occupied(shape);
    Array3<std::uint8_t> owner(shape);  // tumor index + 1
    std::vector<PlacedTumor> placed;

    const auto n_tumors = rng.uniform_int(config.min_tumors_per_image, config.max_tumors_per_image);
    for (std::int64_t t = 0; t < n_tumors; ++t) {
        const TumorType type = draw_type(rng, config);
        std::optional<PlacedTumor> tumor;
        for (int redraw = 0; redraw < 50 && !tumor; ++redraw) {
            const double diameter = rng.uniform(config.min_size_mm, config.max_size_mm);
            tumor = synth_tumor(rng, type, diameter, config, brain.model.support, occupied);
        }
        if (!tumor) continue;
        const auto id = static_cast<std::uint8_t>(placed.size() + 1);
        for (const auto& v : tumor->voxels) {
            const auto [x, y, z] = v.index;
            owner(x, y, z) = id;
            out.mask(x, y, z) = 1;
            // Keep a two-voxel gap so tumors stay separate components.
            for (int dx = -2; dx <= 2; ++dx) {
                for (int dy = -2; dy <= 2; ++dy) {
                    for (int dz = -2; dz <= 2; ++dz) {
                        const int a = x + dx, b = y + dy, c = z + dz;
                        if (a < 0 || b < 0 || c < 0 || a >= shape[0] || b >= shape[1] || c >= shape[2]) continue;
                        occupied(a, b, c) = 1;
                    }
                }
            }
            const Vec3 p{double(x), double(y), double(z)};
            const double noise = config.noise_sigma > 0.0 ? config.noise_sigma * rng.normal() : 0.0;
            brain.volume(x, y, z) =
                static_cast<float>(brain.model.intensity(p) + tumor_contrast(type, v, config.noise_sigma) + noise);
        }
        placed.push_back(std::move(*tumor));
    }
    if (placed.empty()) throw Error("could not place any tumor in image " + std::to_string(index));
    for (const auto& tumor : placed) {
        if (tumor.shape.type == TumorType::metastasis) {
            add_edema(brain.volume, owner, tumor.shape, brain.model.support, config.voxel_spacing_mm);
        }
    }

    const std::string image_id = image_id_for(index);
    for (std::size_t i = 0; i < placed.size(); ++i) {
        const auto derived =
            derive_labels(owner, config.voxel_spacing_mm, config.n_regions, static_cast<std::uint8_t>(i + 1));
        TumorRecord record;
        record.tumor_id = image_id + "_t" + std::to_string(i);
        record.image_id = image_id;
        record.bbox = derived.bbox;
        record.labels.type = placed[i].shape.type;
        record.labels.linear_size_mm = derived.linear_size_mm;
        auto maybe = [&](int value) -> std::optional<int> {
            if (rng.uniform() < config.missing_label_rate) return std::nullopt;
            return value;
        };
        record.labels.region = maybe(derived.region);
        record.labels.left_right = maybe(derived.left_right);
        record.labels.front_rear = maybe(derived.front_rear);
        record.labels.upper_lower = maybe(derived.upper_lower);
        out.tumors.push_back(std::move(record));
    }
    out.volume = std::move(brain.volume);
    return out;
}

/// Writes every volume, mask and the manifest below `out_dir`.
inline DatasetManifest generate_dataset(const PhantomConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "volumes", ec);
    std::filesystem::create_directories(out_dir / "masks", ec);
    if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

    DatasetManifest manifest;
    manifest.config = config;
    manifest.root = out_dir;
    for (int i = 0; i < config.n_images; ++i) {
        GeneratedImage g = generate_image(config, i);
        ImageEntry entry;
        entry.image_id = image_id_for(i);
        entry.volume_path = "volumes/" + entry.image_id + ".f32";
        entry.mask_path = "masks/" + entry.image_id + ".u8";
        entry.shape = config.volume_shape;
        entry.spacing_mm = config.voxel_spacing_mm;
        entry.tumors = std::move(g.tumors);
        io::write_array<float>(out_dir / entry.volume_path, g.volume.data);
        io::write_array<std::uint8_t>(out_dir / entry.mask_path, g.mask.data);
        manifest.images.push_back(std::move(entry));
    }
    manifest.validate();
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace tumorsearch::phantom
