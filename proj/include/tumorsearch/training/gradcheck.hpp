#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "tumorsearch/training/loss.hpp"
#include "tumorsearch/training/trainer.hpp"

namespace tumorsearch::training {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

/// Training-mode total loss of `net` on `batch`.
template <typename T>
double batch_loss(model::MultitaskNet<T>& net, const Batch<T>& batch, const LossWeights& weights) {
    typename model::MultitaskNet<T>::Cache cache;
    const auto out = net.forward_train(batch.input, batch.boxes, cache);
    return multitask_loss(out, batch.seg_target, batch.targets, weights).breakdown.total;
}

/// Compares backprop gradients of the total loss with central differences
/// for every trainable scalar. Relative error is |a - n| / max(|a|, |n|, floor).
template <typename T>
GradCheckResult gradient_check(model::MultitaskNet<T>& net, const Batch<T>& batch, const LossWeights& weights,
                               double step = 1e-5, double floor = 1e-7) {
    typename model::MultitaskNet<T>::Cache cache;
    net.zero_grad();
    const auto out = net.forward_train(batch.input, batch.boxes, cache);
    const auto loss = multitask_loss(out, batch.seg_target, batch.targets, weights);
    net.backward(cache, loss.grad);

    std::vector<model::Parameter<T>*> params;
    net.visit([&](model::Parameter<T>& p, bool trainable) {
        if (trainable) params.push_back(&p);
    });
    GradCheckResult result;
    for (auto* p : params) {
        const std::vector<T> analytic = p->grad;
        for (std::size_t i = 0; i < p->size(); ++i) {
            const T saved = p->value[i];
            p->value[i] = saved + static_cast<T>(step);
            const double up = batch_loss(net, batch, weights);
            p->value[i] = saved - static_cast<T>(step);
            const double down = batch_loss(net, batch, weights);
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = static_cast<double>(analytic[i]);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++result.checked;
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_parameter = p->name;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace tumorsearch::training
