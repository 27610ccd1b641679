#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/model/checkpoint.hpp"
#include "tumorsearch/phantom/manifest.hpp"
#include "tumorsearch/retrieval/distortion.hpp"
#include "tumorsearch/retrieval/evaluate.hpp"
#include "tumorsearch/retrieval/table.hpp"

namespace tumorsearch::retrieval {

using phantom::DatasetManifest;
using phantom::Split;
using phantom::Volume;

struct ExtractOptions {
    /// Minimum side of the crop fed to the backbone.
    int patch_size = 32;
};

/// Smallest crop of side >= patch_size (rounded up to a multiple of
/// `factor`) containing `box`, centered on it and shifted inward at the
/// borders. Extends past the volume only where the volume is too small.
inline BBox inference_window(const Shape3& volume, const BBox& box, int patch_size, int factor) {
    BBox w;
    for (std::size_t a = 0; a < 3; ++a) {
        int need = std::max(patch_size, box.side(a));
        need = (need + factor - 1) / factor * factor;
        int start = box.start[a] - (need - box.side(a)) / 2;
        if (need <= volume[a]) {
            start = std::clamp(start, 0, volume[a] - need);
        } else {
            start = -((need - volume[a]) / 2);
        }
        w.start[a] = start;
        w.stop[a] = start + need;
    }
    return w;
}

template <typename T>
std::vector<float> extract_embedding(const model::MultitaskNet<T>& net, const Volume& volume, const BBox& box,
                                     const ExtractOptions& options = {}) {
    if (box.empty()) throw Error("empty bounding box " + box.str());
    if (!box.intersects(volume.shape)) throw Error("bounding box " + box.str() + " lies outside the volume");
    const BBox clipped = box.clipped(volume.shape);
    const BBox window = inference_window(volume.shape, clipped, options.patch_size, net.config().down_up_factor);
    const Volume crop = volume.crop(window);
    model::Tensor<T> input(1, 1, crop.shape);
    std::copy(crop.data.begin(), crop.data.end(), input.data.begin());
    const BBox local = clipped.shifted({-window.start[0], -window.start[1], -window.start[2]});
    const auto out = net.infer(input, {{local}});
    const auto& e = out.tumors[0][0].embedding;
    return {e.begin(), e.end()};
}

inline bool in_split(const phantom::ImageEntry& image, const std::string& split) {
    if (split == "all") return true;
    if (split == "train") return image.split == Split::train;
    if (split == "test") return image.split == Split::test;
    throw Error("unknown split '" + split + "' (expected train, test or all)");
}

inline void check_compatible(const model::ModelConfig& config, const DatasetManifest& manifest) {
    if (config.n_regions != manifest.config.n_regions || config.n_types != kNumTumorTypes) {
        throw Error("checkpoint/model-config mismatch: model has " + std::to_string(config.n_regions) +
                    " regions, dataset has " + std::to_string(manifest.config.n_regions));
    }
}

/// Embeds every tumor of the images in `split`; `boxes` may replace the
/// recorded boxes (keyed by tumor id).
template <typename T>
EmbeddingTable embed_dataset(const model::MultitaskNet<T>& net, const std::string& fingerprint,
                             const DatasetManifest& manifest, const std::string& split,
                             const ExtractOptions& options = {},
                             const std::map<std::string, BBox>* boxes = nullptr) {
    check_compatible(net.config(), manifest);
    EmbeddingTable table;
    table.fingerprint = fingerprint;
    table.channels = net.config().channels;
    table.n_regions = manifest.config.n_regions;
    for (const auto& image : manifest.images) {
        if (!in_split(image, split) || image.tumors.empty()) continue;
        const Volume volume = manifest.load_volume(image);
        for (const auto& t : image.tumors) {
            BBox box = t.bbox;
            if (boxes) {
                auto it = boxes->find(t.tumor_id);
                if (it != boxes->end()) box = it->second;
            }
            table.rows.push_back({t.tumor_id, image.image_id, t.labels, extract_embedding(net, volume, box, options)});
        }
    }
    if (table.rows.empty()) throw Error("no tumors in split '" + split + "'");
    table.validate();
    return table;
}

inline EmbeddingTable embed_dataset(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                                    const std::string& split, const ExtractOptions& options = {}) {
    const auto loaded = model::load_checkpoint<float>(checkpoint);
    return embed_dataset(loaded.net, loaded.fingerprint, manifest, split, options);
}

struct TaskDelta {
    Task task = Task::type;
    double clean = 0.0;
    double distorted = 0.0;
    double delta = 0.0;  // distorted - clean
};

/// Clean and distorted evaluations of the same test tumors.
struct DistortionReport {
    DistortionParams params;
    KnnEvalReport clean;
    KnnEvalReport distorted;
    std::vector<TaskDelta> deltas;
    double size_rmse_delta_mm = 0.0;
    std::map<std::string, BBox> distorted_boxes;

    double delta(Task task) const {
        for (const auto& d : deltas) {
            if (d.task == task) return d.delta;
        }
        throw Error("no delta for task '" + std::string(to_string(task)) + "'");
    }
};

/// One distorted box per test tumor, drawn in manifest order from one stream.
inline std::map<std::string, BBox> distorted_test_boxes(const DatasetManifest& manifest, const DistortionParams& params,
                                                        const std::string& split = "test") {
    params.validate();
    Rng rng(params.seed);
    std::map<std::string, BBox> out;
    for (const auto& image : manifest.images) {
        if (!in_split(image, split)) continue;
        for (const auto& t : image.tumors) out[t.tumor_id] = distort_bbox(t.bbox, image.shape, params, rng);
    }
    return out;
}

template <typename T>
DistortionReport eval_distortion(const model::MultitaskNet<T>& net, const std::string& fingerprint,
                                 const DatasetManifest& manifest, const DistortionParams& params, int k,
                                 const EmbeddingTable& train_table, const EmbeddingTable& clean_test,
                                 const ExtractOptions& options = {}, const EvalOptions& eval = {}) {
    DistortionReport report;
    report.params = params;
    report.distorted_boxes = distorted_test_boxes(manifest, params);
    const EmbeddingTable distorted =
        embed_dataset(net, fingerprint, manifest, "test", options, &report.distorted_boxes);
    report.clean = eval_knn(train_table, clean_test, k, default_eval_tasks(), eval);
    report.distorted = eval_knn(train_table, distorted, k, default_eval_tasks(), eval);
    for (const auto& m : report.clean.tasks) {
        const double d = report.distorted.accuracy(m.task);
        report.deltas.push_back({m.task, m.accuracy, d, d - m.accuracy});
    }
    report.size_rmse_delta_mm = report.distorted.size_rmse_mm - report.clean.size_rmse_mm;
    return report;
}

inline DistortionReport eval_distortion(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                                        const DistortionParams& params, int k, const ExtractOptions& options = {}) {
    const auto loaded = model::load_checkpoint<float>(checkpoint);
    const auto train = embed_dataset(loaded.net, loaded.fingerprint, manifest, "train", options);
    const auto test = embed_dataset(loaded.net, loaded.fingerprint, manifest, "test", options);
    return eval_distortion(loaded.net, loaded.fingerprint, manifest, params, k, train, test, options);
}

inline nlohmann::json to_json(const DistortionReport& r) {
    nlohmann::json deltas = nlohmann::json::object();
    for (const auto& d : r.deltas) {
        deltas[std::string(to_string(d.task))] = {{"clean", d.clean}, {"distorted", d.distorted}, {"delta", d.delta}};
    }
    nlohmann::json boxes = nlohmann::json::object();
    for (const auto& [id, b] : r.distorted_boxes) boxes[id] = phantom::bbox_to_json(b);
    return {{"params", r.params},
            {"clean", to_json(r.clean)},
            {"distorted", to_json(r.distorted)},
            {"deltas", deltas},
            {"size_rmse_delta_mm", r.size_rmse_delta_mm},
            {"distorted_boxes", boxes}};
}

inline DistortionReport distortion_report_from_json(const nlohmann::json& j) {
    DistortionReport r;
    r.params = j.at("params").get<DistortionParams>();
    r.clean = report_from_json(j.at("clean"));
    r.distorted = report_from_json(j.at("distorted"));
    for (const auto& [name, d] : j.at("deltas").items()) {
        r.deltas.push_back({task_from_string(name), d.at("clean").get<double>(), d.at("distorted").get<double>(),
                            d.at("delta").get<double>()});
    }
    std::sort(r.deltas.begin(), r.deltas.end(), [](const auto& a, const auto& b) { return a.task < b.task; });
    r.size_rmse_delta_mm = j.at("size_rmse_delta_mm").get<double>();
    for (const auto& [id, b] : j.at("distorted_boxes").items()) r.distorted_boxes[id] = phantom::bbox_from_json(b);
    return r;
}

}  // namespace tumorsearch::retrieval
