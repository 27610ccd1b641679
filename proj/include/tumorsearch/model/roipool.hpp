#pragma once

#include <limits>
#include <vector>

#include "tumorsearch/model/tensor.hpp"

namespace tumorsearch::model {

/// Per-channel maximum of sample `n` of `features` over the voxels of `box`.
/// When `argmax` is given it receives, per channel, the offset of the winning
/// voxel inside the channel plane (first maximum in scan order).
template <typename T>
std::vector<T> roipool(const Tensor<T>& features, int n, const BBox& box, std::vector<std::size_t>* argmax = nullptr) {
    if (box.empty()) throw ShapeError("roipool: empty box " + box.str());
    if (!box.within(features.spatial)) {
        throw ShapeError("roipool: box " + box.str() + " outside feature map " + features.spatial.str());
    }
    const int Y = features.spatial[1], Z = features.spatial[2];
    std::vector<T> out(features.channels, -std::numeric_limits<T>::infinity());
    if (argmax) argmax->assign(features.channels, 0);
    for (int c = 0; c < features.channels; ++c) {
        const T* fc = features.channel(n, c);
        T best = -std::numeric_limits<T>::infinity();
        std::size_t where = 0;
        for (int x = box.start[0]; x < box.stop[0]; ++x) {
            for (int y = box.start[1]; y < box.stop[1]; ++y) {
                const std::size_t row = (static_cast<std::size_t>(x) * Y + y) * Z;
                for (int z = box.start[2]; z < box.stop[2]; ++z) {
                    if (fc[row + z] > best) {
                        best = fc[row + z];
                        where = row + z;
                    }
                }
            }
        }
        out[c] = best;
        if (argmax) (*argmax)[c] = where;
    }
    return out;
}

}  // namespace tumorsearch::model
