#pragma once

#include <vector>

#include "tumorsearch/model/network.hpp"

namespace tumorsearch::training {

/// SGD with (optionally Nesterov) momentum, no weight decay:
///   v <- mu v + g;  p <- p - lr (g + mu v)   (Nesterov)
///   v <- mu v + g;  p <- p - lr v            (classical)
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(double momentum, bool nesterov) : momentum_(momentum), nesterov_(nesterov) {}

    void step(model::MultitaskNet<T>& net, double lr) {
        std::size_t slot = 0;
        net.visit([&](model::Parameter<T>& p, bool trainable) {
            if (!trainable) return;
            if (slot == velocity_.size()) velocity_.emplace_back(p.size(), T{});
            auto& v = velocity_[slot++];
            const T mu = static_cast<T>(momentum_);
            const T rate = static_cast<T>(lr);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const T g = p.grad[i];
                v[i] = mu * v[i] + g;
                p.value[i] -= rate * (nesterov_ ? g + mu * v[i] : v[i]);
            }
        });
    }

private:
    double momentum_;
    bool nesterov_;
    std::vector<std::vector<T>> velocity_;
};

}  // namespace tumorsearch::training
