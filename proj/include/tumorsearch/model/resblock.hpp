#pragma once

#include <optional>

#include "tumorsearch/model/layers.hpp"

namespace tumorsearch::model {

/// Pre-activation residual unit:
///   out = shortcut(x) + conv2(relu(bn2(conv1(relu(bn1(x))))))
/// The shortcut is the identity when widths match, otherwise a 1x1x1 conv.
template <typename T>
class ResBlock {
public:
    struct Cache {
        typename BatchNorm3d<T>::Cache bn1, bn2;
        Tensor<T> input, act1, pre2, act2;
    };

    ResBlock() = default;
    ResBlock(const std::string& name, int in_channels, int out_channels)
        : in_(in_channels), out_(out_channels), bn1_(name + ".bn1", in_channels),
          conv1_(name + ".conv1", in_channels, out_channels, 3), bn2_(name + ".bn2", out_channels),
          conv2_(name + ".conv2", out_channels, out_channels, 3) {
        if (in_channels != out_channels) shortcut_.emplace(name + ".shortcut", in_channels, out_channels, 1);
    }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }

    void init(Rng& rng) {
        conv1_.init(rng);
        conv2_.init(rng);
        if (shortcut_) shortcut_->init(rng);
    }

    template <typename F>
    void visit(F&& f) {
        f(bn1_.gamma(), true);
        f(bn1_.beta(), true);
        f(bn1_.running_mean(), false);
        f(bn1_.running_var(), false);
        f(conv1_.weight(), true);
        f(conv1_.bias(), true);
        f(bn2_.gamma(), true);
        f(bn2_.beta(), true);
        f(bn2_.running_mean(), false);
        f(bn2_.running_var(), false);
        f(conv2_.weight(), true);
        f(conv2_.bias(), true);
        if (shortcut_) {
            f(shortcut_->weight(), true);
            f(shortcut_->bias(), true);
        }
    }

    Conv3d<T>& conv1() { return conv1_; }
    Conv3d<T>& conv2() { return conv2_; }
    BatchNorm3d<T>& bn1() { return bn1_; }
    BatchNorm3d<T>& bn2() { return bn2_; }

    /// Training-mode forward; fills `cache` for backward.
    Tensor<T> forward(const Tensor<T>& x, Cache& cache) {
        check(x);
        cache.input = x;
        cache.act1 = relu(bn1_.forward(x, Mode::train, &cache.bn1));
        cache.pre2 = conv1_.forward(cache.act1);
        cache.act2 = relu(bn2_.forward(cache.pre2, Mode::train, &cache.bn2));
        Tensor<T> out = conv2_.forward(cache.act2);
        add_inplace(out, shortcut_ ? shortcut_->forward(x) : x);
        return out;
    }

    Tensor<T> infer(const Tensor<T>& x) const {
        check(x);
        Tensor<T> out = conv2_.forward(relu(bn2_.infer(conv1_.forward(relu(bn1_.infer(x))))));
        add_inplace(out, shortcut_ ? shortcut_->forward(x) : x);
        return out;
    }

    Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
        Tensor<T> d_act2 = conv2_.backward(cache.act2, dy);
        Tensor<T> d_pre2 = bn2_.backward(cache.bn2, relu_backward(cache.act2, std::move(d_act2)));
        Tensor<T> d_act1 = conv1_.backward(cache.act1, d_pre2);
        Tensor<T> dx = bn1_.backward(cache.bn1, relu_backward(cache.act1, std::move(d_act1)));
        if (shortcut_) {
            add_inplace(dx, shortcut_->backward(cache.input, dy));
        } else {
            add_inplace(dx, dy);
        }
        return dx;
    }

private:
    void check(const Tensor<T>& x) const {
        if (x.channels != in_) {
            throw ShapeError("resblock: channel mismatch, expected " + std::to_string(in_) + ", got " +
                             std::to_string(x.channels));
        }
    }

    int in_ = 0, out_ = 0;
    BatchNorm3d<T> bn1_;
    Conv3d<T> conv1_;
    BatchNorm3d<T> bn2_;
    Conv3d<T> conv2_;
    std::optional<Conv3d<T>> shortcut_;
};

}  // namespace tumorsearch::model
