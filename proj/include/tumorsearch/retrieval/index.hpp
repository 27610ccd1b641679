#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tumorsearch/retrieval/table.hpp"

namespace tumorsearch::retrieval {

struct Neighbor {
    std::size_t row = 0;
    std::string tumor_id;
    double distance = 0.0;

    bool operator==(const Neighbor&) const = default;
};

struct QueryResult {
    std::vector<Neighbor> neighbors;
    /// Fewer candidates than requested were available.
    bool truncated = false;
};

inline double euclidean(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return std::sqrt(sum);
}

/// Ascending distance, then ascending tumor id.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.tumor_id < b.tumor_id;
}

/// No rows remained after exclusion and filtering.
class NoCandidates : public Error {
public:
    using Error::Error;
};

struct IndexOptions {
    /// Scale every vector to unit length before measuring distances.
    bool l2_normalize = false;
};

/// Exact Euclidean search over an immutable copy of an embedding table.
class RetrievalIndex {
public:
    explicit RetrievalIndex(EmbeddingTable table, IndexOptions options = {})
        : table_(std::move(table)), options_(options) {
        table_.validate();
        if (options_.l2_normalize) {
            for (auto& row : table_.rows) normalize(row.embedding);
        }
    }

    const EmbeddingTable& table() const { return table_; }
    std::size_t size() const { return table_.rows.size(); }
    const IndexOptions& options() const { return options_; }

    /// K nearest rows, skipping rows from `exclude_image_id` and rows for
    /// which `keep` returns false.
    template <typename Filter>
    QueryResult query_if(std::span<const float> embedding, std::size_t k, const std::optional<std::string>& exclude_image_id,
                         Filter&& keep) const {
        if (k < 1) throw Error("K must be at least 1");
        if (static_cast<int>(embedding.size()) != table_.channels) {
            throw ShapeError("query has " + std::to_string(embedding.size()) + " components, index has " +
                             std::to_string(table_.channels));
        }
        std::vector<float> q(embedding.begin(), embedding.end());
        if (options_.l2_normalize) normalize(q);
        std::vector<Neighbor> candidates;
        candidates.reserve(table_.rows.size());
        for (std::size_t i = 0; i < table_.rows.size(); ++i) {
            const auto& row = table_.rows[i];
            if (exclude_image_id && row.image_id == *exclude_image_id) continue;
            if (!keep(row)) continue;
            candidates.push_back({i, row.tumor_id, euclidean(q, row.embedding)});
        }
        if (candidates.empty()) throw NoCandidates("no candidate rows left after exclusion");
        QueryResult result;
        result.truncated = candidates.size() < k;
        const std::size_t n = std::min(k, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n), candidates.end(),
                          neighbor_less);
        candidates.resize(n);
        result.neighbors = std::move(candidates);
        return result;
    }

    QueryResult query(std::span<const float> embedding, std::size_t k,
                      const std::optional<std::string>& exclude_image_id = std::nullopt) const {
        return query_if(embedding, k, exclude_image_id, [](const TableRow&) { return true; });
    }

    /// Majority vote over the K nearest rows carrying a label for `task`.
    /// Vote ties go to the smaller summed distance, then the lower label.
    int knn_classify(std::span<const float> embedding, std::size_t k, Task task,
                     const std::optional<std::string>& exclude_image_id = std::nullopt) const {
        QueryResult result;
        try {
            result = query_if(embedding, k, exclude_image_id,
                              [task](const TableRow& row) { return row.labels.get(task).has_value(); });
        } catch (const NoCandidates&) {
            throw Error("no labeled rows for task '" + std::string(to_string(task)) + "'");
        }
        std::map<int, std::pair<int, double>> votes;  // label -> (count, summed distance)
        for (const auto& nb : result.neighbors) {
            auto& v = votes[*table_.rows[nb.row].labels.get(task)];
            ++v.first;
            v.second += nb.distance;
        }
        int best_label = -1;
        std::pair<int, double> best{0, 0.0};
        for (const auto& [label, v] : votes) {  // ascending label order
            if (best_label < 0 || v.first > best.first || (v.first == best.first && v.second < best.second)) {
                best_label = label;
                best = v;
            }
        }
        return best_label;
    }

    /// Unweighted mean linear size of the K nearest rows.
    double knn_regress(std::span<const float> embedding, std::size_t k,
                       const std::optional<std::string>& exclude_image_id = std::nullopt) const {
        const auto result = query(embedding, k, exclude_image_id);
        double sum = 0.0;
        for (const auto& nb : result.neighbors) sum += table_.rows[nb.row].labels.linear_size_mm;
        return sum / static_cast<double>(result.neighbors.size());
    }

private:
    static void normalize(std::vector<float>& v) {
        double norm = 0.0;
        for (float x : v) norm += static_cast<double>(x) * x;
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (float& x : v) x = static_cast<float>(x / norm);
        }
    }

    EmbeddingTable table_;
    IndexOptions options_;
};

}  // namespace tumorsearch::retrieval
