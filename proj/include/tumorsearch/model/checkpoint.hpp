#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/model/network.hpp"

namespace tumorsearch::model {

inline constexpr int kCheckpointSchemaVersion = 1;
inline constexpr char kCheckpointMagic[9] = "TSCKPT01";

/// Layout: 8-byte magic, u64 header length, JSON header, then every tensor as
/// little-endian float32 in header order.
template <typename T>
std::string serialize_checkpoint(const MultitaskNet<T>& net, const nlohmann::json& metadata = nlohmann::json::object()) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<float> blob;
    net.visit([&](const Parameter<T>& p, bool trainable) {
        tensors.push_back({{"name", p.name},
                           {"shape", p.shape},
                           {"offset", blob.size()},
                           {"count", p.size()},
                           {"trainable", trainable}});
        for (T v : p.value) blob.push_back(static_cast<float>(v));
    });
    const nlohmann::json header{{"schema_version", kCheckpointSchemaVersion},
                                {"model_config", net.config()},
                                {"metadata", metadata},
                                {"tensors", std::move(tensors)}};
    const std::string header_text = header.dump();
    std::string out(kCheckpointMagic, 8);
    io::put_u64(out, header_text.size());
    out += header_text;
    out += io::as_bytes(std::span<const float>(blob));
    return out;
}

template <typename T>
void save_checkpoint(const MultitaskNet<T>& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
    io::write_bytes(path, serialize_checkpoint(net, metadata));
}

template <typename T>
struct LoadedCheckpoint {
    MultitaskNet<T> net;
    nlohmann::json metadata;
    std::string fingerprint;
};

template <typename T>
LoadedCheckpoint<T> parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint file");
    std::size_t offset = 8;
    const auto header_len = io::get_u64(bytes, offset);
    const auto header = nlohmann::json::parse(io::get_span(bytes, offset, header_len));
    if (header.at("schema_version").get<int>() != kCheckpointSchemaVersion) throw IoError("unsupported checkpoint schema");
    const std::string_view blob = bytes.substr(offset);

    LoadedCheckpoint<T> out{MultitaskNet<T>(header.at("model_config").get<ModelConfig>()),
                            header.value("metadata", nlohmann::json::object()), io::hash_hex(bytes)};
    std::map<std::string, nlohmann::json> entries;
    for (const auto& t : header.at("tensors")) entries[t.at("name").get<std::string>()] = t;
    std::size_t matched = 0;
    out.net.visit([&](Parameter<T>& p, bool) {
        auto it = entries.find(p.name);
        if (it == entries.end()) throw IoError("checkpoint lacks tensor '" + p.name + "'");
        const auto shape = it->second.at("shape").template get<std::vector<int>>();
        if (shape != p.shape) throw IoError("shape mismatch for tensor '" + p.name + "'");
        const auto start = it->second.at("offset").template get<std::size_t>();
        const auto count = it->second.at("count").template get<std::size_t>();
        if (count != p.size() || (start + count) * sizeof(float) > blob.size()) {
            throw IoError("tensor '" + p.name + "' out of range");
        }
        std::vector<float> values(count);
        std::memcpy(values.data(), blob.data() + start * sizeof(float), count * sizeof(float));
        for (std::size_t i = 0; i < count; ++i) p.value[i] = static_cast<T>(values[i]);
        ++matched;
    });
    if (matched != entries.size()) throw IoError("checkpoint has tensors the model does not know");
    return out;
}

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    return parse_checkpoint<T>({bytes.data(), bytes.size()});
}

}  // namespace tumorsearch::model
