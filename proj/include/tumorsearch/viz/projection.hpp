#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/rng.hpp"

namespace tumorsearch::viz {

enum class ProjectionMethod { tsne, pca_fallback };

struct ProjectionConfig {
    double perplexity = 30.0;
    int n_iterations = 1000;
    std::uint64_t seed = 0;
    ProjectionMethod method = ProjectionMethod::tsne;

    // optimizer settings of the usual exact t-SNE recipe
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iterations = 250;

    void validate(std::size_t n_points) const {
        if (n_iterations < 250) throw ConfigError("n_iterations", "must be >= 250");
        if (!(perplexity > 0.0)) throw ConfigError("perplexity", "must be positive");
        if (method == ProjectionMethod::tsne && !(perplexity < (static_cast<double>(n_points) - 1.0) / 3.0)) {
            throw ConfigError("perplexity", "perplexity " + std::to_string(perplexity) + " too large for " +
                                                std::to_string(n_points) + " points");
        }
    }

    /// Largest perplexity accepted for `n_points`, capped at `wanted`.
    static double clamp_perplexity(double wanted, std::size_t n_points) {
        const double limit = (static_cast<double>(n_points) - 1.0) / 3.0;
        return std::min(wanted, std::nextafter(limit, 0.0));
    }
};

inline std::string to_string(ProjectionMethod m) { return m == ProjectionMethod::tsne ? "tsne" : "pca-fallback"; }

inline ProjectionMethod projection_method_from_string(const std::string& s) {
    if (s == "tsne") return ProjectionMethod::tsne;
    if (s == "pca-fallback" || s == "pca") return ProjectionMethod::pca_fallback;
    throw ConfigError("method", "unknown projection method '" + s + "'");
}

inline void to_json(nlohmann::json& j, const ProjectionConfig& c) {
    j = {{"perplexity", c.perplexity}, {"n_iterations", c.n_iterations}, {"seed", c.seed}, {"method", to_string(c.method)}};
}

inline void from_json(const nlohmann::json& j, ProjectionConfig& c) {
    c.perplexity = j.value("perplexity", c.perplexity);
    c.n_iterations = j.value("n_iterations", c.n_iterations);
    c.seed = j.value("seed", c.seed);
    if (j.contains("method")) c.method = projection_method_from_string(j.at("method").get<std::string>());
}

using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Points to_points(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw Error("no points to project");
    Points x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw ShapeError("points differ in dimension");
        for (std::size_t d = 0; d < rows[i].size(); ++d) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
    }
    return x;
}

inline Eigen::MatrixXd squared_distances(const Points& x) {
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = (-2.0 * (x * x.transpose())).colwise() + norms;
    d.rowwise() += norms.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

/// Projection onto the two leading principal axes, signs fixed so the
/// largest-magnitude loading of each axis is positive.
inline Points pca_2d(const Points& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    Points out = Points::Zero(x.rows(), 2);
    if (x.rows() < 2) return out;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::Index d = cov.rows();
    for (Eigen::Index c = 0; c < std::min<Eigen::Index>(2, d); ++c) {
        Eigen::VectorXd axis = eig.eigenvectors().col(d - 1 - c);
        Eigen::Index arg = 0;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis(arg) < 0) axis = -axis;
        out.col(c) = centered * axis;
    }
    return out;
}

/// Conditional affinities with per-point bandwidths matched to the
/// perplexity by bisection, then symmetrized.
inline Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& d2, double perplexity) {
    const Eigen::Index n = d2.rows();
    const double target = std::log(perplexity);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0.0, weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double v = std::exp(-beta * d2(i, j));
                p(i, j) = v;
                sum += v;
                weighted += v * d2(i, j);
            }
            sum = std::max(sum, std::numeric_limits<double>::min());
            const double entropy = std::log(sum) + beta * weighted / sum;
            for (Eigen::Index j = 0; j < n; ++j) p(i, j) /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
    }
    Eigen::MatrixXd sym = (p + p.transpose()) / (2.0 * static_cast<double>(n));
    return sym.cwiseMax(1e-12);
}

/// Exact t-SNE (or the PCA fallback) to two dimensions.
inline Points project_2d(const Points& x, const ProjectionConfig& config) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (config.method == ProjectionMethod::pca_fallback) {
        config.validate(n);
        return pca_2d(x);
    }
    if (n < 10) throw Error("t-SNE needs at least 10 points, got " + std::to_string(n));
    config.validate(n);

    const Eigen::MatrixXd p = tsne_affinities(squared_distances(x), config.perplexity);
    const auto ni = static_cast<Eigen::Index>(n);
    Rng rng(config.seed);
    Points y(ni, 2);
    for (Eigen::Index i = 0; i < ni; ++i) {
        y(i, 0) = 1e-4 * rng.normal();
        y(i, 1) = 1e-4 * rng.normal();
    }
    Points velocity = Points::Zero(ni, 2);
    Points gains = Points::Ones(ni, 2);
    Eigen::MatrixXd num(ni, ni);
    Points grad(ni, 2);
    for (int iter = 0; iter < config.n_iterations; ++iter) {
        const double exaggeration = iter < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
        const double momentum = iter < config.exaggeration_iterations ? 0.5 : 0.8;
        num = (1.0 + squared_distances(y).array()).inverse().matrix();
        num.diagonal().setZero();
        const double z = std::max(num.sum(), std::numeric_limits<double>::min());
        // dC/dy_i = 4 sum_j (P_ij - Q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)
        const Eigen::MatrixXd w = ((exaggeration * p).array() - num.array() / z).matrix().cwiseProduct(num);
        const Eigen::VectorXd row_sum = w.rowwise().sum();
        grad = 4.0 * (row_sum.asDiagonal() * y - w * y);
        for (Eigen::Index i = 0; i < ni; ++i) {
            for (Eigen::Index c = 0; c < 2; ++c) {
                const bool same_sign = (grad(i, c) > 0) == (velocity(i, c) > 0);
                gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
                velocity(i, c) = momentum * velocity(i, c) - config.learning_rate * gains(i, c) * grad(i, c);
                y(i, c) += velocity(i, c);
            }
        }
        y.rowwise() -= y.colwise().mean();
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y.data()[i])) throw Error("t-SNE diverged to non-finite coordinates");
    }
    return y;
}

/// Rank-based trustworthiness of a low-dimensional embedding, in [0, 1].
inline double trustworthiness(const Points& high, const Points& low, int k) {
    const Eigen::Index n = high.rows();
    if (k < 1 || 2 * n - 3 * k - 1 <= 0) throw Error("trustworthiness: k out of range");
    const Eigen::MatrixXd dh = squared_distances(high);
    const Eigen::MatrixXd dl = squared_distances(low);
    auto order = [n](const Eigen::MatrixXd& d, Eigen::Index i) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) idx.push_back(j);
        }
        std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return d(i, a) < d(i, b); });
        return idx;
    };
    double penalty = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto oh = order(dh, i);
        const auto ol = order(dl, i);
        std::vector<Eigen::Index> rank(static_cast<std::size_t>(n), 0);
        for (std::size_t r = 0; r < oh.size(); ++r) rank[static_cast<std::size_t>(oh[r])] = static_cast<Eigen::Index>(r) + 1;
        for (int r = 0; r < k; ++r) {
            const Eigen::Index j = ol[static_cast<std::size_t>(r)];
            if (rank[static_cast<std::size_t>(j)] > k) penalty += static_cast<double>(rank[static_cast<std::size_t>(j)] - k);
        }
    }
    const double nd = static_cast<double>(n), kd = k;
    return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * penalty;
}

/// Number of single-linkage groups when merging pairs closer than `cut`.
/// Groups smaller than `min_size` are not counted.
inline int single_linkage_groups(const Points& pts, double cut, int min_size = 1) {
    const Eigen::Index n = pts.rows();
    std::vector<Eigen::Index> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto root = [&](Eigen::Index i) {
        while (parent[static_cast<std::size_t>(i)] != i) i = parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
        return i;
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if ((pts.row(i) - pts.row(j)).norm() <= cut) parent[static_cast<std::size_t>(root(i))] = root(j);
        }
    }
    std::vector<int> sizes(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) ++sizes[static_cast<std::size_t>(root(i))];
    return static_cast<int>(std::count_if(sizes.begin(), sizes.end(), [min_size](int s) { return s >= min_size && s > 0; }));
}

}  // namespace tumorsearch::viz
