#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/phantom/manifest.hpp"

namespace tumorsearch::retrieval {

inline constexpr int kTableSchemaVersion = 1;
inline constexpr char kTableMagic[9] = "TSEMB001";

struct TableRow {
    std::string tumor_id;
    std::string image_id;
    TumorLabels labels;
    std::vector<float> embedding;
};

/// Tumor embeddings produced by one model.
struct EmbeddingTable {
    std::string fingerprint;
    int channels = 0;
    int n_regions = 11;
    std::vector<TableRow> rows;

    void validate() const {
        std::set<std::string> ids;
        for (const auto& row : rows) {
            if (static_cast<int>(row.embedding.size()) != channels) {
                throw Error("row '" + row.tumor_id + "' has " + std::to_string(row.embedding.size()) +
                            " components, expected " + std::to_string(channels));
            }
            for (float v : row.embedding) {
                if (!std::isfinite(v)) throw Error("row '" + row.tumor_id + "' has a non-finite component");
            }
            if (!ids.insert(row.tumor_id).second) throw Error("duplicate tumor id '" + row.tumor_id + "'");
        }
    }

    const TableRow* find(const std::string& tumor_id) const {
        for (const auto& row : rows) {
            if (row.tumor_id == tumor_id) return &row;
        }
        return nullptr;
    }
};

/// Layout: 8-byte magic, u64 header length, JSON header, row-major float32
/// block (rows x channels), u64 metadata length, JSON array of row metadata.
inline std::string serialize_table(const EmbeddingTable& table) {
    table.validate();
    const nlohmann::json header{{"schema_version", kTableSchemaVersion},
                                {"channels", table.channels},
                                {"fingerprint", table.fingerprint},
                                {"rows", table.rows.size()},
                                {"label_schema", phantom::label_schema_json(table.n_regions)}};
    nlohmann::json meta = nlohmann::json::array();
    std::vector<float> block;
    block.reserve(table.rows.size() * static_cast<std::size_t>(table.channels));
    for (const auto& row : table.rows) {
        meta.push_back({{"tumor_id", row.tumor_id}, {"image_id", row.image_id}, {"labels", phantom::labels_to_json(row.labels)}});
        block.insert(block.end(), row.embedding.begin(), row.embedding.end());
    }
    const std::string header_text = header.dump();
    const std::string meta_text = meta.dump();
    std::string out(kTableMagic, 8);
    io::put_u64(out, header_text.size());
    out += header_text;
    out += io::as_bytes(std::span<const float>(block));
    io::put_u64(out, meta_text.size());
    out += meta_text;
    return out;
}

inline EmbeddingTable parse_table(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kTableMagic, 8) != 0) throw IoError("not an embedding table");
    std::size_t offset = 8;
    const auto header = nlohmann::json::parse(io::get_span(bytes, offset, io::get_u64(bytes, offset)));
    if (header.at("schema_version").get<int>() != kTableSchemaVersion) throw IoError("unsupported table schema");
    EmbeddingTable table;
    table.channels = header.at("channels").get<int>();
    table.fingerprint = header.at("fingerprint").get<std::string>();
    table.n_regions = header.at("label_schema").at("region").get<int>();
    const auto n_rows = header.at("rows").get<std::size_t>();
    const auto block = io::get_span(bytes, offset, n_rows * static_cast<std::size_t>(table.channels) * sizeof(float));
    const auto meta = nlohmann::json::parse(io::get_span(bytes, offset, io::get_u64(bytes, offset)));
    if (meta.size() != n_rows) throw IoError("table metadata row count mismatch");
    for (std::size_t i = 0; i < n_rows; ++i) {
        TableRow row;
        row.tumor_id = meta[i].at("tumor_id").get<std::string>();
        row.image_id = meta[i].at("image_id").get<std::string>();
        row.labels = phantom::labels_from_json(meta[i].at("labels"));
        row.embedding.resize(table.channels);
        std::memcpy(row.embedding.data(), block.data() + i * table.channels * sizeof(float), table.channels * sizeof(float));
        table.rows.push_back(std::move(row));
    }
    table.validate();
    return table;
}

inline void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
    io::write_bytes(path, serialize_table(table));
}

inline EmbeddingTable load_table(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    return parse_table({bytes.data(), bytes.size()});
}

}  // namespace tumorsearch::retrieval
