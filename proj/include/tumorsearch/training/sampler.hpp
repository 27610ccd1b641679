#pragma once

#include <array>
#include <vector>

#include "tumorsearch/core/rng.hpp"
#include "tumorsearch/phantom/manifest.hpp"

namespace tumorsearch::training {

using phantom::Mask;
using phantom::TumorRecord;
using phantom::Volume;

struct PatchSample {
    /// Patch location in volume coordinates.
    BBox window;
    Volume patch;
    Mask mask;
    /// Tumors fully inside the window, bboxes rebased to patch coordinates.
    std::vector<TumorRecord> tumors;
};

/// Draws a patch that entirely contains a uniformly chosen anchor tumor. The
/// position is uniform over all placements that keep the anchor inside and
/// the patch inside the volume. Tumors cut by the window keep their mask
/// voxels but are not returned.
inline PatchSample sample_patch(const Volume& volume, const Mask& mask, const std::vector<TumorRecord>& tumors,
                                const std::array<int, 3>& patch_size, Rng& rng) {
    if (tumors.empty()) throw Error("sample_patch: image has no tumors");
    for (std::size_t a = 0; a < 3; ++a) {
        if (patch_size[a] > volume.shape[a]) {
            throw Error("sample_patch: patch side " + std::to_string(patch_size[a]) + " exceeds volume side " +
                        std::to_string(volume.shape[a]));
        }
    }
    const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tumors.size()) - 1));
    const BBox& anchor = tumors[pick].bbox;
    PatchSample out;
    for (std::size_t a = 0; a < 3; ++a) {
        if (anchor.side(a) > patch_size[a]) throw Error("tumor exceeds patch size (" + tumors[pick].tumor_id + ")");
        const int lo = std::max(0, anchor.stop[a] - patch_size[a]);
        const int hi = std::min(anchor.start[a], volume.shape[a] - patch_size[a]);
        out.window.start[a] = static_cast<int>(rng.uniform_int(lo, hi));
        out.window.stop[a] = out.window.start[a] + patch_size[a];
    }
    out.patch = volume.crop(out.window);
    out.mask = mask.crop(out.window);
    const std::array<int, 3> offset{-out.window.start[0], -out.window.start[1], -out.window.start[2]};
    for (const auto& t : tumors) {
        if (!out.window.contains(t.bbox)) continue;
        TumorRecord rebased = t;
        rebased.bbox = t.bbox.shifted(offset);
        out.tumors.push_back(std::move(rebased));
    }
    return out;
}

}  // namespace tumorsearch::training
