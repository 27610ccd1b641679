#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/geometry.hpp"
#include "tumorsearch/core/tasks.hpp"
#include "tumorsearch/phantom/config.hpp"

namespace tumorsearch::phantom {

inline constexpr int kManifestSchemaVersion = 1;

using Volume = Array3<float>;
using Mask = Array3<std::uint8_t>;

enum class Split { unassigned, train, test };

inline std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::unassigned: break;
    }
    return "unassigned";
}

inline Split split_from_string(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    if (name == "unassigned") return Split::unassigned;
    throw Error("unknown split tag '" + std::string(name) + "'");
}

struct TumorRecord {
    std::string tumor_id;
    std::string image_id;
    BBox bbox;
    TumorLabels labels;

    bool operator==(const TumorRecord&) const = default;
};

struct ImageEntry {
    std::string image_id;
    std::string volume_path;  // relative to the manifest directory
    std::string mask_path;
    Shape3 shape;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    Split split = Split::unassigned;
    std::vector<TumorRecord> tumors;
};

struct DatasetManifest {
    int schema_version = kManifestSchemaVersion;
    PhantomConfig config;
    std::vector<ImageEntry> images;
    /// Directory the relative paths resolve against; not serialized.
    std::filesystem::path root;

    std::size_t tumor_count() const {
        std::size_t n = 0;
        for (const auto& image : images) n += image.tumors.size();
        return n;
    }

    const ImageEntry& image(const std::string& image_id) const {
        for (const auto& image : images) {
            if (image.image_id == image_id) return image;
        }
        throw Error("unknown image id '" + image_id + "'");
    }

    Volume load_volume(const ImageEntry& image) const {
        Volume v;
        v.shape = image.shape;
        v.data = io::read_array<float>(root / image.volume_path, image.shape.voxels());
        return v;
    }

    Mask load_mask(const ImageEntry& image) const {
        Mask m;
        m.shape = image.shape;
        m.data = io::read_array<std::uint8_t>(root / image.mask_path, image.shape.voxels());
        return m;
    }

    void validate() const {
        std::set<std::string> ids;
        for (const auto& image : images) {
            for (const auto& tumor : image.tumors) {
                if (!ids.insert(tumor.tumor_id).second) throw Error("duplicate tumor id '" + tumor.tumor_id + "'");
                if (tumor.image_id != image.image_id) throw Error("tumor '" + tumor.tumor_id + "' has wrong image id");
            }
        }
    }
};

namespace detail {

inline nlohmann::json optional_json(const std::optional<int>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<int> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<int>();
}

}  // namespace detail

inline nlohmann::json bbox_to_json(const BBox& b) { return {{"start", b.start}, {"stop", b.stop}}; }

inline BBox bbox_from_json(const nlohmann::json& j) {
    BBox b;
    b.start = j.at("start").get<std::array<int, 3>>();
    b.stop = j.at("stop").get<std::array<int, 3>>();
    return b;
}

inline nlohmann::json labels_to_json(const TumorLabels& l) {
    return {{"type", std::string(to_string(l.type))},
            {"region", detail::optional_json(l.region)},
            {"left_right", detail::optional_json(l.left_right)},
            {"front_rear", detail::optional_json(l.front_rear)},
            {"upper_lower", detail::optional_json(l.upper_lower)},
            {"linear_size_mm", l.linear_size_mm}};
}

inline TumorLabels labels_from_json(const nlohmann::json& j) {
    TumorLabels l;
    l.type = tumor_type_from_string(j.at("type").get<std::string>());
    l.region = detail::optional_from(j, "region");
    l.left_right = detail::optional_from(j, "left_right");
    l.front_rear = detail::optional_from(j, "front_rear");
    l.upper_lower = detail::optional_from(j, "upper_lower");
    l.linear_size_mm = j.at("linear_size_mm").get<double>();
    return l;
}

inline nlohmann::json label_schema_json(int n_regions) {
    return {{"type", kTumorTypeNames},
            {"region", n_regions},
            {"left_right", {"left", "right"}},
            {"front_rear", {"front", "rear"}},
            {"upper_lower", {"lower", "upper"}}};
}

inline nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& image : m.images) {
        nlohmann::json tumors = nlohmann::json::array();
        for (const auto& t : image.tumors) {
            tumors.push_back({{"tumor_id", t.tumor_id}, {"bbox", bbox_to_json(t.bbox)}, {"labels", labels_to_json(t.labels)}});
        }
        images.push_back({{"image_id", image.image_id},
                          {"volume", image.volume_path},
                          {"mask", image.mask_path},
                          {"shape", image.shape.dims},
                          {"spacing_mm", image.spacing_mm},
                          {"split", std::string(to_string(image.split))},
                          {"tumors", std::move(tumors)}});
    }
    return {{"schema_version", m.schema_version},
            {"config", m.config},
            {"label_schema", label_schema_json(m.config.n_regions)},
            {"images", std::move(images)}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path root) {
    DatasetManifest m;
    if (!j.contains("schema_version")) throw Error("manifest lacks schema_version");
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion) {
        throw Error("unsupported manifest schema_version " + std::to_string(m.schema_version));
    }
    m.config = j.at("config").get<PhantomConfig>();
    m.root = std::move(root);
    for (const auto& ji : j.at("images")) {
        ImageEntry image;
        image.image_id = ji.at("image_id").get<std::string>();
        image.volume_path = ji.at("volume").get<std::string>();
        image.mask_path = ji.at("mask").get<std::string>();
        image.shape.dims = ji.at("shape").get<std::array<int, 3>>();
        image.spacing_mm = ji.at("spacing_mm").get<std::array<double, 3>>();
        image.split = split_from_string(ji.value("split", "unassigned"));
        for (const auto& jt : ji.at("tumors")) {
            TumorRecord t;
            t.tumor_id = jt.at("tumor_id").get<std::string>();
            t.image_id = image.image_id;
            t.bbox = bbox_from_json(jt.at("bbox"));
            t.labels = labels_from_json(jt.at("labels"));
            image.tumors.push_back(std::move(t));
        }
        m.images.push_back(std::move(image));
    }
    m.validate();
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    const auto j = nlohmann::json::parse(io::read_text(path));
    return manifest_from_json(j, path.parent_path());
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    io::write_text(path, to_json(m).dump(2) + "\n");
}

}  // namespace tumorsearch::phantom
