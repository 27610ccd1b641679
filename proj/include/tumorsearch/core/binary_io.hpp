#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tumorsearch/core/error.hpp"

namespace tumorsearch::io {

static_assert(std::endian::native == std::endian::little, "raw array files assume a little-endian host");

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<char> bytes(size);
    in.seekg(0);
    in.read(bytes.data(), static_cast<std::streamsize>(size));
    if (!in) throw IoError("short read from " + path.string());
    return bytes;
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) { write_bytes(path, text); }

template <typename T>
std::string_view as_bytes(std::span<const T> values) {
    return {reinterpret_cast<const char*>(values.data()), values.size_bytes()};
}

template <typename T>
void write_array(const std::filesystem::path& path, std::span<const T> values) {
    write_bytes(path, as_bytes(values));
}

template <typename T>
std::vector<T> read_array(const std::filesystem::path& path, std::size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * sizeof(T)) {
        throw IoError(path.string() + ": expected " + std::to_string(expected_count * sizeof(T)) + " bytes, found " +
                      std::to_string(bytes.size()));
    }
    std::vector<T> values(expected_count);
    std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

/// Appends a little-endian u64.
inline void put_u64(std::string& out, std::uint64_t value) {
    char buf[8];
    std::memcpy(buf, &value, 8);
    out.append(buf, 8);
}

inline std::uint64_t get_u64(std::string_view in, std::size_t& offset) {
    if (offset + 8 > in.size()) throw IoError("truncated file");
    std::uint64_t value;
    std::memcpy(&value, in.data() + offset, 8);
    offset += 8;
    return value;
}

inline std::string_view get_span(std::string_view in, std::size_t& offset, std::size_t length) {
    if (offset + length > in.size()) throw IoError("truncated file");
    auto out = in.substr(offset, length);
    offset += length;
    return out;
}

/// 64-bit FNV-1a; used for fingerprints and stage stamps, not for security.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            state_ ^= c;
            state_ *= 0x100000001b3ULL;
        }
    }

    std::uint64_t digest() const { return state_; }

    std::string hex() const {
        std::ostringstream ss;
        ss << std::hex << std::setw(16) << std::setfill('0') << state_;
        return ss.str();
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_hex(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

inline std::string hash_file(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return hash_hex({bytes.data(), bytes.size()});
}

}  // namespace tumorsearch::io
