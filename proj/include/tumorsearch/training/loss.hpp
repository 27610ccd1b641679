#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "tumorsearch/model/network.hpp"

namespace tumorsearch::training {

using model::NetOutput;
using model::NetOutputGrad;
using model::Tensor;

inline constexpr std::size_t kNumClassTasks = kClassificationTasks.size();

/// Per-tumor classification targets; nullopt marks a missing label.
using TaskTargets = std::array<std::optional<int>, kNumClassTasks>;

inline TaskTargets targets_from(const TumorLabels& labels) {
    TaskTargets t;
    for (Task task : kClassificationTasks) t[classification_index(task)] = labels.get(task);
    return t;
}

struct LossWeights {
    double lambda_seg = 1.0;
    std::array<double, kNumClassTasks> lambda_task{1e-3, 1e-3, 1e-3, 1e-3, 1e-3};
    /// Terms of inactive tasks are skipped entirely: no loss, no gradient, not
    /// counted as omitted.
    bool seg_active = true;
    std::array<bool, kNumClassTasks> task_active{true, true, true, true, true};

    void restrict_to(const std::vector<Task>& tasks) {
        auto has = [&](Task t) { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); };
        seg_active = has(Task::segmentation);
        for (Task t : kClassificationTasks) task_active[classification_index(t)] = has(t);
    }

    static LossWeights uniform(double lambda_seg, double lambda_p) {
        LossWeights w;
        w.lambda_seg = lambda_seg;
        w.lambda_task.fill(lambda_p);
        return w;
    }
};

/// Unweighted terms of one evaluation of the multitask loss, averaged over
/// the patches of a batch.
struct LossBreakdown {
    double total = 0.0;
    double segmentation = 0.0;
    /// Sum over tumors of the cross-entropy of each classification task.
    std::array<double, kNumClassTasks> task_terms{};
    std::array<int, kNumClassTasks> present{};
    std::array<int, kNumClassTasks> omitted{};

    /// Weighted sum of this breakdown's own terms.
    double recompose(const LossWeights& w, bool seg_enabled) const {
        double t = seg_enabled ? w.lambda_seg * segmentation : 0.0;
        for (std::size_t p = 0; p < kNumClassTasks; ++p) t += w.lambda_task[p] * task_terms[p];
        return t;
    }
};

template <typename T>
struct LossResult {
    LossBreakdown breakdown;
    NetOutputGrad<T> grad;
};

/// Binary cross-entropy with logits and its derivative.
inline double bce_with_logits(double z, double y, double* dz) {
    const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (dz) *dz = 1.0 / (1.0 + std::exp(-z)) - y;
    return loss;
}

/// Multiclass cross-entropy over `logits` for class `label`; fills the gradient.
template <typename T>
double softmax_cross_entropy(const std::vector<T>& logits, int label, std::vector<T>* grad) {
    double mx = logits[0];
    for (T v : logits) mx = std::max<double>(mx, v);
    double sum = 0.0;
    for (T v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    if (grad) {
        grad->resize(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k) {
            (*grad)[k] = static_cast<T>(std::exp(logits[k] - lse) - (static_cast<int>(k) == label ? 1.0 : 0.0));
        }
    }
    return lse - logits[label];
}

/// Weighted multitask loss
///   L = lambda_s * mean_voxels BCE(seg) + sum_p lambda_p * sum_t CE_p(t)
/// for each patch of the batch, averaged over the batch. Missing labels add
/// nothing and are counted in `omitted`. `seg_target` holds {0,1} per voxel
/// with shape (batch, 1, spatial); it is ignored when the output carries no
/// segmentation logits.
template <typename T>
LossResult<T> multitask_loss(const NetOutput<T>& pred, const Tensor<T>& seg_target,
                             const std::vector<std::vector<TaskTargets>>& targets, const LossWeights& weights) {
    LossResult<T> out;
    auto& b = out.breakdown;
    const int batch = pred.features.batch;
    if (static_cast<int>(pred.tumors.size()) != batch || static_cast<int>(targets.size()) != batch) {
        throw ShapeError("loss: per-tumor outputs and targets must cover every sample of the batch");
    }
    const double inv_batch = 1.0 / batch;

    const bool seg = weights.seg_active && !pred.seg_logits.data.empty();
    if (seg) {
        if (!pred.seg_logits.same_shape(seg_target)) {
            throw ShapeError("loss: segmentation target " + seg_target.shape_str() + " vs logits " +
                             pred.seg_logits.shape_str());
        }
        out.grad.seg_logits = Tensor<T>(pred.seg_logits.batch, 1, pred.seg_logits.spatial);
        const std::size_t P = pred.seg_logits.plane();
        const double scale = weights.lambda_seg * inv_batch / static_cast<double>(P);
        for (int n = 0; n < batch; ++n) {
            const T* z = pred.seg_logits.channel(n, 0);
            const T* y = seg_target.channel(n, 0);
            T* g = out.grad.seg_logits.channel(n, 0);
            double sum = 0.0;
            for (std::size_t i = 0; i < P; ++i) {
                if (y[i] != T{0} && y[i] != T{1}) throw Error("loss: segmentation target must be binary");
                double dz = 0.0;
                sum += bce_with_logits(z[i], y[i], &dz);
                g[i] = static_cast<T>(dz * scale);
            }
            b.segmentation += sum / static_cast<double>(P) * inv_batch;
        }
    }

    out.grad.tumor_logits.resize(batch);
    for (int n = 0; n < batch; ++n) {
        if (pred.tumors[n].size() != targets[n].size()) {
            throw ShapeError("loss: " + std::to_string(targets[n].size()) + " targets for " +
                             std::to_string(pred.tumors[n].size()) + " tumors");
        }
        out.grad.tumor_logits[n].resize(targets[n].size());
        for (std::size_t t = 0; t < targets[n].size(); ++t) {
            for (std::size_t p = 0; p < kNumClassTasks; ++p) {
                const auto& logits = pred.tumors[n][t].logits[p];
                const auto& label = targets[n][t][p];
                if (logits.empty() || !weights.task_active[p]) continue;
                if (!label) {
                    ++b.omitted[p];
                    continue;
                }
                if (*label < 0 || *label >= static_cast<int>(logits.size())) {
                    throw Error("loss: label " + std::to_string(*label) + " out of range for task '" +
                                std::string(to_string(kClassificationTasks[p])) + "'");
                }
                std::vector<T> g;
                const double ce = softmax_cross_entropy(logits, *label, &g);
                const double scale = weights.lambda_task[p] * inv_batch;
                for (auto& v : g) v = static_cast<T>(v * scale);
                out.grad.tumor_logits[n][t][p] = std::move(g);
                b.task_terms[p] += ce * inv_batch;
                ++b.present[p];
            }
        }
    }
    b.total = b.recompose(weights, seg);
    return out;
}

}  // namespace tumorsearch::training
