#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tumorsearch/core/error.hpp"

namespace tumorsearch {

/// Voxel counts per axis. Axis 0 runs left to right, axis 1 front to rear and
/// axis 2 lower to upper; axis 2 is fastest in memory.
struct Shape3 {
    std::array<int, 3> dims{0, 0, 0};

    constexpr int operator[](std::size_t axis) const { return dims[axis]; }
    constexpr int& operator[](std::size_t axis) { return dims[axis]; }

    constexpr std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    constexpr bool operator==(const Shape3&) const = default;

    std::string str() const {
        return std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" + std::to_string(dims[2]);
    }
};

/// Half-open voxel box: [start, stop) along each axis.
struct BBox {
    std::array<int, 3> start{0, 0, 0};
    std::array<int, 3> stop{0, 0, 0};

    constexpr int side(std::size_t axis) const { return stop[axis] - start[axis]; }
    constexpr int max_side() const { return std::max({side(0), side(1), side(2)}); }

    constexpr bool empty() const { return side(0) <= 0 || side(1) <= 0 || side(2) <= 0; }

    constexpr bool within(const Shape3& shape) const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (start[a] < 0 || stop[a] > shape[a]) return false;
        }
        return true;
    }

    constexpr bool contains(const BBox& other) const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (other.start[a] < start[a] || other.stop[a] > stop[a]) return false;
        }
        return true;
    }

    constexpr bool intersects(const Shape3& shape) const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (stop[a] <= 0 || start[a] >= shape[a]) return false;
        }
        return true;
    }

    constexpr BBox clipped(const Shape3& shape) const {
        BBox out = *this;
        for (std::size_t a = 0; a < 3; ++a) {
            out.start[a] = std::clamp(start[a], 0, shape[a]);
            out.stop[a] = std::clamp(stop[a], 0, shape[a]);
        }
        return out;
    }

    constexpr BBox shifted(const std::array<int, 3>& offset) const {
        BBox out = *this;
        for (std::size_t a = 0; a < 3; ++a) {
            out.start[a] += offset[a];
            out.stop[a] += offset[a];
        }
        return out;
    }

    constexpr bool operator==(const BBox&) const = default;

    std::string str() const {
        std::string s;
        for (std::size_t a = 0; a < 3; ++a) {
            if (a) s += "x";
            s += "[" + std::to_string(start[a]) + ".." + std::to_string(stop[a]) + ")";
        }
        return s;
    }
};

/// Dense 3D array in C order (axis 2 fastest).
template <typename T>
struct Array3 {
    Shape3 shape;
    std::vector<T> data;

    Array3() = default;
    explicit Array3(Shape3 s, T fill = T{}) : shape(s), data(s.voxels(), fill) {}

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(x) * static_cast<std::size_t>(shape[1]) + static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(shape[2]) +
               static_cast<std::size_t>(z);
    }

    T& operator()(int x, int y, int z) { return data[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data[index(x, y, z)]; }

    /// Copies `box` out of this array. Voxels of `box` outside the array are zero.
    Array3 crop(const BBox& box) const {
        Array3 out(Shape3{{box.side(0), box.side(1), box.side(2)}});
        for (int x = 0; x < out.shape[0]; ++x) {
            const int sx = box.start[0] + x;
            if (sx < 0 || sx >= shape[0]) continue;
            for (int y = 0; y < out.shape[1]; ++y) {
                const int sy = box.start[1] + y;
                if (sy < 0 || sy >= shape[1]) continue;
                for (int z = 0; z < out.shape[2]; ++z) {
                    const int sz = box.start[2] + z;
                    if (sz < 0 || sz >= shape[2]) continue;
                    out(x, y, z) = (*this)(sx, sy, sz);
                }
            }
        }
        return out;
    }
};

}  // namespace tumorsearch
