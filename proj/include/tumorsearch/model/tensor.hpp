#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/geometry.hpp"

namespace tumorsearch::model {

/// Batch of multi-channel volumes laid out as (sample, channel, x, y, z).
template <typename T>
struct Tensor {
    int batch = 0;
    int channels = 0;
    Shape3 spatial;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n, int c, Shape3 s, T fill = T{})
        : batch(n), channels(c), spatial(s), data(static_cast<std::size_t>(n) * c * s.voxels(), fill) {}

    std::size_t plane() const { return spatial.voxels(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(channels) * plane(); }

    T* sample(int n) { return data.data() + static_cast<std::size_t>(n) * sample_size(); }
    const T* sample(int n) const { return data.data() + static_cast<std::size_t>(n) * sample_size(); }

    T* channel(int n, int c) { return sample(n) + static_cast<std::size_t>(c) * plane(); }
    const T* channel(int n, int c) const { return sample(n) + static_cast<std::size_t>(c) * plane(); }

    T& at(int n, int c, int x, int y, int z) {
        return channel(n, c)[(static_cast<std::size_t>(x) * spatial[1] + y) * spatial[2] + z];
    }
    const T& at(int n, int c, int x, int y, int z) const {
        return channel(n, c)[(static_cast<std::size_t>(x) * spatial[1] + y) * spatial[2] + z];
    }

    bool same_shape(const Tensor& o) const {
        return batch == o.batch && channels == o.channels && spatial == o.spatial;
    }

    std::string shape_str() const {
        return std::to_string(batch) + "x" + std::to_string(channels) + "x" + spatial.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.batch = batch;
        out.channels = channels;
        out.spatial = spatial;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
    if (!dst.same_shape(src)) throw ShapeError("add: " + dst.shape_str() + " vs " + src.shape_str());
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

/// Named trainable array with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        std::size_t count = 1;
        for (int d : shape) count *= static_cast<std::size_t>(d);
        value.assign(count, T{});
        grad.assign(count, T{});
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T{}); }
};

}  // namespace tumorsearch::model
