#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "tumorsearch/retrieval/index.hpp"

namespace tumorsearch::retrieval {

/// Parses a positive decimal K; anything else yields nullopt.
inline std::optional<int> parse_k(const std::string& text) {
    int k = 0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, k);
    if (text.empty() || ec != std::errc() || ptr != end || k < 1) return std::nullopt;
    return k;
}

/// Splits "host:port"; a bare port binds to all interfaces.
inline std::pair<std::string, int> parse_address(const std::string& addr) {
    const auto colon = addr.rfind(':');
    const std::string host = colon == std::string::npos ? "0.0.0.0" : addr.substr(0, colon);
    const std::string port_text = colon == std::string::npos ? addr : addr.substr(colon + 1);
    int port = -1;
    const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port < 0 || port > 65535) {
        throw ConfigError("addr", "expected host:port, got '" + addr + "'");
    }
    return {host.empty() ? "0.0.0.0" : host, port};
}

/// Neighbors of a stored tumor, excluding tumors from its own image.
inline nlohmann::json neighbors_json(const RetrievalIndex& index, const TableRow& query, int k) {
    const auto result = index.query(query.embedding, static_cast<std::size_t>(k), query.image_id);
    nlohmann::json list = nlohmann::json::array();
    for (const auto& nb : result.neighbors) {
        const auto& row = index.table().rows[nb.row];
        list.push_back({{"tumor_id", row.tumor_id},
                        {"image_id", row.image_id},
                        {"distance", nb.distance},
                        {"labels", phantom::labels_to_json(row.labels)}});
    }
    return {{"query", query.tumor_id}, {"k", k}, {"truncated", result.truncated}, {"neighbors", std::move(list)}};
}

/// Read-only HTTP view of one embedding table.
class NeighborServer {
public:
    explicit NeighborServer(EmbeddingTable table) : index_(std::move(table)) {
        server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            const nlohmann::json body{{"status", "ok"},
                                      {"fingerprint", index_.table().fingerprint},
                                      {"rows", index_.size()}};
            res.set_content(body.dump(), "application/json");
        });
        server_.Get("/neighbors", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    }

    NeighborServer(const NeighborServer&) = delete;
    NeighborServer& operator=(const NeighborServer&) = delete;

    const RetrievalIndex& index() const { return index_; }

    /// Blocks until stop(). Port 0 picks a free port (see port()).
    bool listen(const std::string& host, int port) {
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
        } else {
            if (!server_.bind_to_port(host, port)) return false;
            port_ = port;
        }
        if (port_ < 0) return false;
        return server_.listen_after_bind();
    }

    /// Binds without serving; pair with serve().
    int bind(const std::string& host, int port = 0) {
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
        } else {
            port_ = server_.bind_to_port(host, port) ? port : -1;
        }
        return port_;
    }
    bool serve() { return server_.listen_after_bind(); }

    void wait_until_ready() const { server_.wait_until_ready(); }
    void stop() { server_.stop(); }
    int port() const { return port_; }

private:
    static void error(httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
    }

    void handle(const httplib::Request& req, httplib::Response& res) const {
        if (!req.has_param("tumor_id")) return error(res, 400, "missing tumor_id");
        const std::string id = req.get_param_value("tumor_id");
        int k = 5;
        if (req.has_param("k")) {
            const auto parsed = parse_k(req.get_param_value("k"));
            if (!parsed) return error(res, 400, "k must be a positive integer");
            k = *parsed;
        }
        const TableRow* row = index_.table().find(id);
        if (!row) return error(res, 404, "unknown tumor_id '" + id + "'");
        try {
            res.set_content(neighbors_json(index_, *row, k).dump(), "application/json");
        } catch (const NoCandidates& e) {
            error(res, 409, e.what());
        }
    }

    RetrievalIndex index_;
    httplib::Server server_;
    int port_ = -1;
};

}  // namespace tumorsearch::retrieval
