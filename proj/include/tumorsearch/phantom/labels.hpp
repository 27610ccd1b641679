#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/geometry.hpp"

namespace tumorsearch::phantom {

/// Geometry-derived labels of one tumor mask.
struct DerivedLabels {
    BBox bbox;
    double linear_size_mm = 0.0;
    std::array<double, 3> centroid{};
    int left_right = 0;   // 0 = left, 1 = right (axis 0)
    int front_rear = 0;   // 0 = front, 1 = rear (axis 1)
    int upper_lower = 0;  // 0 = lower, 1 = upper (axis 2)
    int region = 0;
};

/// Radius (in half-extent units, measured from the volume center) below which
/// a centroid falls into one of the central cells.
inline constexpr double kCentralRegionRadius = 0.2;

/// Maps a centroid to one of `n_regions` cells tiling the volume.
///
/// For n_regions >= 9 the cells are the eight octants around the volume
/// center plus (n_regions - 8) central slabs cut along axis 1. With fewer
/// regions the cells are equal angular sectors in the axis-0/axis-1 plane.
/// Coordinates exactly on a boundary fall on the lower-index side.
inline int region_of(const std::array<double, 3>& centroid, const Shape3& shape, int n_regions) {
    std::array<double, 3> u{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double mid = 0.5 * (shape[a] - 1);
        u[a] = (centroid[a] - mid) / (0.5 * shape[a]);
    }
    if (n_regions >= 9) {
        const double rho = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        if (rho < kCentralRegionRadius) {
            const int n_central = n_regions - 8;
            const double t = (u[1] / kCentralRegionRadius + 1.0) * 0.5;  // in [0, 1)
            const int slab = std::clamp(static_cast<int>(std::floor(t * n_central)), 0, n_central - 1);
            return 8 + slab;
        }
        return (u[0] > 0.0 ? 4 : 0) + (u[1] > 0.0 ? 2 : 0) + (u[2] > 0.0 ? 1 : 0);
    }
    const double angle = std::atan2(u[1], u[0]) + std::numbers::pi;  // [0, 2pi]
    const int sector = static_cast<int>(std::floor(angle / (2.0 * std::numbers::pi) * n_regions));
    return std::clamp(sector, 0, n_regions - 1);
}

/// Labels of the voxels of `mask` equal to `value`.
template <typename MaskT>
DerivedLabels derive_labels(const Array3<MaskT>& mask, const std::array<double, 3>& spacing_mm, int n_regions,
                            MaskT value = MaskT{1}) {
    const Shape3& shape = mask.shape;
    BBox box{{shape[0], shape[1], shape[2]}, {0, 0, 0}};
    std::array<double, 3> sum{0.0, 0.0, 0.0};
    std::size_t count = 0;
    for (int x = 0; x < shape[0]; ++x) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int z = 0; z < shape[2]; ++z) {
                if (mask(x, y, z) != value) continue;
                const std::array<int, 3> p{x, y, z};
                for (std::size_t a = 0; a < 3; ++a) {
                    box.start[a] = std::min(box.start[a], p[a]);
                    box.stop[a] = std::max(box.stop[a], p[a] + 1);
                    sum[a] += p[a];
                }
                ++count;
            }
        }
    }
    if (count == 0) throw Error("no tumor voxels");

    DerivedLabels out;
    out.bbox = box;
    for (std::size_t a = 0; a < 3; ++a) {
        out.centroid[a] = sum[a] / static_cast<double>(count);
        out.linear_size_mm = std::max(out.linear_size_mm, box.side(a) * spacing_mm[a]);
    }
    // Ties on the midplane go to the lower-index side.
    auto side_of = [&](std::size_t a) { return out.centroid[a] > 0.5 * (shape[a] - 1) ? 1 : 0; };
    out.left_right = side_of(0);
    out.front_rear = side_of(1);
    out.upper_lower = side_of(2);
    out.region = region_of(out.centroid, shape, n_regions);
    return out;
}

}  // namespace tumorsearch::phantom
