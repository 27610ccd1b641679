#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "tumorsearch/core/rng.hpp"
#include "tumorsearch/model/tensor.hpp"

namespace tumorsearch::model {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

enum class Mode { train, inference };

namespace detail {

template <typename T>
std::vector<T>& scratch() {
    thread_local std::vector<T> buffer;
    return buffer;
}

/// Unfolds one sample of `x` into (channels * 27) x voxels columns for a
/// 3x3x3 kernel with zero padding 1.
template <typename T>
void im2col3(const T* x, int channels, const Shape3& s, T* cols) {
    const int X = s[0], Y = s[1], Z = s[2];
    const std::size_t P = s.voxels();
    T* row = cols;
    for (int c = 0; c < channels; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * P;
        for (int kx = -1; kx <= 1; ++kx) {
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kz = -1; kz <= 1; ++kz, row += P) {
                    const int z_lo = std::max(0, -kz), z_hi = std::min(Z, Z - kz);
                    for (int i = 0; i < X; ++i) {
                        const int si = i + kx;
                        for (int j = 0; j < Y; ++j) {
                            T* dst = row + (static_cast<std::size_t>(i) * Y + j) * Z;
                            const int sj = j + ky;
                            if (si < 0 || si >= X || sj < 0 || sj >= Y) {
                                std::fill(dst, dst + Z, T{});
                                continue;
                            }
                            const T* src = xc + (static_cast<std::size_t>(si) * Y + sj) * Z + kz;
                            for (int k = 0; k < z_lo; ++k) dst[k] = T{};
                            for (int k = z_lo; k < z_hi; ++k) dst[k] = src[k];
                            for (int k = z_hi; k < Z; ++k) dst[k] = T{};
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col3: accumulates columns back into `dx`.
template <typename T>
void col2im3(const T* cols, int channels, const Shape3& s, T* dx) {
    const int X = s[0], Y = s[1], Z = s[2];
    const std::size_t P = s.voxels();
    const T* row = cols;
    for (int c = 0; c < channels; ++c) {
        T* dc = dx + static_cast<std::size_t>(c) * P;
        for (int kx = -1; kx <= 1; ++kx) {
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kz = -1; kz <= 1; ++kz, row += P) {
                    const int z_lo = std::max(0, -kz), z_hi = std::min(Z, Z - kz);
                    for (int i = 0; i < X; ++i) {
                        const int si = i + kx;
                        if (si < 0 || si >= X) continue;
                        for (int j = 0; j < Y; ++j) {
                            const int sj = j + ky;
                            if (sj < 0 || sj >= Y) continue;
                            const T* src = row + (static_cast<std::size_t>(i) * Y + j) * Z;
                            T* dst = dc + (static_cast<std::size_t>(si) * Y + sj) * Z + kz;
                            for (int k = z_lo; k < z_hi; ++k) dst[k] += src[k];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 3D convolution with a cubic kernel of side 1 or 3 (padding keeps the
/// spatial shape), stride 1.
template <typename T>
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::string name, int in_channels, int out_channels, int kernel)
        : in_(in_channels), out_(out_channels), kernel_(kernel),
          weight_(name + ".weight", {out_channels, in_channels, kernel, kernel, kernel}),
          bias_(name + ".bias", {out_channels}) {
        if (kernel != 1 && kernel != 3) throw Error("Conv3d supports kernel 1 or 3");
    }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int fan_in() const { return in_ * kernel_ * kernel_ * kernel_; }

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    const Parameter<T>& weight() const { return weight_; }
    const Parameter<T>& bias() const { return bias_; }

    void init(Rng& rng) {
        const double stddev = std::sqrt(2.0 / fan_in());
        for (auto& w : weight_.value) w = static_cast<T>(rng.normal(0.0, stddev));
        std::fill(bias_.value.begin(), bias_.value.end(), T{});
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.channels != in_) {
            throw ShapeError("conv " + weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                             std::to_string(x.channels));
        }
        Tensor<T> y(x.batch, out_, x.spatial);
        const auto P = static_cast<Eigen::Index>(x.plane());
        const auto K = static_cast<Eigen::Index>(fan_in());
        ConstMatrixMap<T> W(weight_.value.data(), out_, K);
        for (int n = 0; n < x.batch; ++n) {
            MatrixMap<T> Y(y.sample(n), out_, P);
            if (kernel_ == 1) {
                Y.noalias() = W * ConstMatrixMap<T>(x.sample(n), K, P);
            } else {
                auto& cols = detail::scratch<T>();
                cols.resize(static_cast<std::size_t>(K * P));
                detail::im2col3(x.sample(n), in_, x.spatial, cols.data());
                Y.noalias() = W * ConstMatrixMap<T>(cols.data(), K, P);
            }
            for (int c = 0; c < out_; ++c) Y.row(c).array() += bias_.value[c];
        }
        return y;
    }

    /// Accumulates parameter gradients; returns dL/dx unless `need_input_grad` is false.
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad = true) {
        const auto P = static_cast<Eigen::Index>(x.plane());
        const auto K = static_cast<Eigen::Index>(fan_in());
        ConstMatrixMap<T> W(weight_.value.data(), out_, K);
        MatrixMap<T> dW(weight_.grad.data(), out_, K);
        Tensor<T> dx;
        if (need_input_grad) dx = Tensor<T>(x.batch, in_, x.spatial);
        for (int n = 0; n < x.batch; ++n) {
            ConstMatrixMap<T> dY(dy.sample(n), out_, P);
            // Fixed-order sum; Eigen's vectorized redux peels by pointer alignment, which broke run-to-run bit identity.
            for (int c = 0; c < out_; ++c) {
                const T* row = dy.sample(n) + static_cast<std::size_t>(c) * static_cast<std::size_t>(P);
                double acc = 0.0;
                for (Eigen::Index i = 0; i < P; ++i) acc += static_cast<double>(row[i]);
                bias_.grad[c] += static_cast<T>(acc);
            }
            if (kernel_ == 1) {
                ConstMatrixMap<T> X(x.sample(n), K, P);
                dW.noalias() += dY * X.transpose();
                if (need_input_grad) MatrixMap<T>(dx.sample(n), K, P).noalias() = W.transpose() * dY;
            } else {
                auto& cols = detail::scratch<T>();
                cols.resize(static_cast<std::size_t>(K * P));
                detail::im2col3(x.sample(n), in_, x.spatial, cols.data());
                dW.noalias() += dY * ConstMatrixMap<T>(cols.data(), K, P).transpose();
                if (need_input_grad) {
                    MatrixMap<T>(cols.data(), K, P).noalias() = W.transpose() * dY;
                    detail::col2im3(cols.data(), in_, x.spatial, dx.sample(n));
                }
            }
        }
        return dx;
    }

private:
    int in_ = 0, out_ = 0, kernel_ = 3;
    Parameter<T> weight_;
    Parameter<T> bias_;
};

/// Per-channel batch normalization over (sample, x, y, z).
template <typename T>
class BatchNorm3d {
public:
    struct Cache {
        Tensor<T> normalized;
        std::vector<T> inv_std;
    };

    BatchNorm3d() = default;
    BatchNorm3d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5)
        : channels_(channels), momentum_(momentum), eps_(eps), gamma_(name + ".gamma", {channels}),
          beta_(name + ".beta", {channels}), running_mean_(name + ".running_mean", {channels}),
          running_var_(name + ".running_var", {channels}) {
        reset();
    }

    void reset() {
        std::fill(gamma_.value.begin(), gamma_.value.end(), T{1});
        std::fill(beta_.value.begin(), beta_.value.end(), T{});
        std::fill(running_mean_.value.begin(), running_mean_.value.end(), T{});
        std::fill(running_var_.value.begin(), running_var_.value.end(), T{1});
    }

    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }
    Parameter<T>& running_mean() { return running_mean_; }
    Parameter<T>& running_var() { return running_var_; }
    const Parameter<T>& gamma() const { return gamma_; }
    const Parameter<T>& beta() const { return beta_; }
    const Parameter<T>& running_mean() const { return running_mean_; }
    const Parameter<T>& running_var() const { return running_var_; }

    /// Inference mode uses the running statistics and leaves `cache` untouched.
    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache) {
        if (mode == Mode::inference) return infer(x);
        check(x);
        Tensor<T> y(x.batch, channels_, x.spatial);
        cache->normalized = Tensor<T>(x.batch, channels_, x.spatial);
        cache->inv_std.assign(channels_, T{});
        const std::size_t P = x.plane();
        const double count = static_cast<double>(P) * x.batch;
        for (int c = 0; c < channels_; ++c) {
            double sum = 0.0;
            for (int n = 0; n < x.batch; ++n) {
                const T* xc = x.channel(n, c);
                for (std::size_t i = 0; i < P; ++i) sum += xc[i];
            }
            const double mean = sum / count;
            double sq = 0.0;
            for (int n = 0; n < x.batch; ++n) {
                const T* xc = x.channel(n, c);
                for (std::size_t i = 0; i < P; ++i) sq += (xc[i] - mean) * (xc[i] - mean);
            }
            const double var = sq / count;
            const double inv = 1.0 / std::sqrt(var + eps_);
            cache->inv_std[c] = static_cast<T>(inv);
            const T g = gamma_.value[c], b = beta_.value[c];
            for (int n = 0; n < x.batch; ++n) {
                const T* xc = x.channel(n, c);
                T* xh = cache->normalized.channel(n, c);
                T* yc = y.channel(n, c);
                for (std::size_t i = 0; i < P; ++i) {
                    xh[i] = static_cast<T>((xc[i] - mean) * inv);
                    yc[i] = g * xh[i] + b;
                }
            }
            const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
            running_mean_.value[c] = static_cast<T>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean);
            running_var_.value[c] = static_cast<T>((1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
        }
        return y;
    }

    Tensor<T> infer(const Tensor<T>& x) const {
        check(x);
        Tensor<T> y(x.batch, channels_, x.spatial);
        const std::size_t P = x.plane();
        for (int c = 0; c < channels_; ++c) {
            const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_));
            const T scale = gamma_.value[c] * inv;
            const T shift = beta_.value[c] - running_mean_.value[c] * scale;
            for (int n = 0; n < x.batch; ++n) {
                const T* xc = x.channel(n, c);
                T* yc = y.channel(n, c);
                for (std::size_t i = 0; i < P; ++i) yc[i] = xc[i] * scale + shift;
            }
        }
        return y;
    }

    Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
        Tensor<T> dx(dy.batch, channels_, dy.spatial);
        const std::size_t P = dy.plane();
        const double count = static_cast<double>(P) * dy.batch;
        for (int c = 0; c < channels_; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int n = 0; n < dy.batch; ++n) {
                const T* g = dy.channel(n, c);
                const T* xh = cache.normalized.channel(n, c);
                for (std::size_t i = 0; i < P; ++i) {
                    sum_dy += g[i];
                    sum_dy_xh += static_cast<double>(g[i]) * xh[i];
                }
            }
            gamma_.grad[c] += static_cast<T>(sum_dy_xh);
            beta_.grad[c] += static_cast<T>(sum_dy);
            const double k = static_cast<double>(gamma_.value[c]) * cache.inv_std[c] / count;
            for (int n = 0; n < dy.batch; ++n) {
                const T* g = dy.channel(n, c);
                const T* xh = cache.normalized.channel(n, c);
                T* d = dx.channel(n, c);
                for (std::size_t i = 0; i < P; ++i) {
                    d[i] = static_cast<T>(k * (count * g[i] - sum_dy - xh[i] * sum_dy_xh));
                }
            }
        }
        return dx;
    }

private:
    void check(const Tensor<T>& x) const {
        if (x.channels != channels_) {
            throw ShapeError("batchnorm " + gamma_.name + ": expected " + std::to_string(channels_) + " channels, got " +
                             std::to_string(x.channels));
        }
    }

    int channels_ = 0;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    Parameter<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T{} ? v : T{};
    return y;
}

/// Backward of relu given its output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
        if (!(y.data[i] > T{})) dy.data[i] = T{};
    }
    return dy;
}

/// Non-overlapping max pooling by `factor` along every axis.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, int factor, std::vector<std::uint32_t>* argmax) {
    Shape3 out_shape;
    for (std::size_t a = 0; a < 3; ++a) {
        if (x.spatial[a] % factor != 0) {
            throw ShapeError("spatial side not divisible by " + std::to_string(factor) + " (axis " + std::to_string(a) +
                             ", side " + std::to_string(x.spatial[a]) + ")");
        }
        out_shape[a] = x.spatial[a] / factor;
    }
    Tensor<T> y(x.batch, x.channels, out_shape);
    if (argmax) argmax->assign(y.data.size(), 0);
    const int Y = x.spatial[1], Z = x.spatial[2];
    std::size_t o = 0;
    for (int n = 0; n < x.batch; ++n) {
        for (int c = 0; c < x.channels; ++c) {
            const T* xc = x.channel(n, c);
            for (int i = 0; i < out_shape[0]; ++i) {
                for (int j = 0; j < out_shape[1]; ++j) {
                    for (int k = 0; k < out_shape[2]; ++k, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::uint32_t where = 0;
                        for (int a = 0; a < factor; ++a) {
                            for (int b = 0; b < factor; ++b) {
                                const std::size_t base = (static_cast<std::size_t>(i * factor + a) * Y + j * factor + b) * Z + k * factor;
                                for (int d = 0; d < factor; ++d) {
                                    if (xc[base + d] > best) {
                                        best = xc[base + d];
                                        where = static_cast<std::uint32_t>(base + d);
                                    }
                                }
                            }
                        }
                        y.data[o] = best;
                        if (argmax) (*argmax)[o] = where;
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, int channels, Shape3 in_shape) {
    Tensor<T> dx(dy.batch, channels, in_shape);
    const std::size_t out_plane = dy.plane();
    for (int n = 0; n < dy.batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            T* dc = dx.channel(n, c);
            const T* g = dy.channel(n, c);
            const std::uint32_t* idx = argmax.data() + (static_cast<std::size_t>(n) * channels + c) * out_plane;
            for (std::size_t o = 0; o < out_plane; ++o) dc[idx[o]] += g[o];
        }
    }
    return dx;
}

namespace detail {

/// Source taps of 1D linear upsampling (half-pixel centers, edge clamped).
struct LinearTaps {
    std::vector<int> lo, hi;
    std::vector<double> w;  // weight of `hi`
};

inline LinearTaps linear_taps(int in_size, int factor) {
    LinearTaps t;
    const int out_size = in_size * factor;
    t.lo.resize(out_size);
    t.hi.resize(out_size);
    t.w.resize(out_size);
    for (int o = 0; o < out_size; ++o) {
        double src = (o + 0.5) / factor - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in_size - 1) i0 = in_size - 1;
        const int i1 = std::min(i0 + 1, in_size - 1);
        t.lo[o] = i0;
        t.hi[o] = i1;
        t.w[o] = src - i0;
    }
    return t;
}

/// Applies 1D linear upsampling along `axis` of a (planes, X, Y, Z) block.
template <typename T>
std::vector<T> upsample_axis(const std::vector<T>& in, std::size_t planes, Shape3 s, int axis, int factor, Shape3& out_s) {
    out_s = s;
    out_s[axis] = s[axis] * factor;
    const LinearTaps taps = linear_taps(s[axis], factor);
    std::vector<T> out(planes * out_s.voxels());
    // View each plane as (outer, axis, inner).
    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s[a];
    for (int a = axis + 1; a < 3; ++a) inner *= s[a];
    const int n_in = s[axis], n_out = out_s[axis];
    for (std::size_t p = 0; p < planes * outer; ++p) {
        const T* src = in.data() + p * n_in * inner;
        T* dst = out.data() + p * n_out * inner;
        for (int o = 0; o < n_out; ++o) {
            const T* a0 = src + taps.lo[o] * inner;
            const T* a1 = src + taps.hi[o] * inner;
            const T w = static_cast<T>(taps.w[o]);
            T* d = dst + o * inner;
            for (std::size_t k = 0; k < inner; ++k) d[k] = a0[k] + w * (a1[k] - a0[k]);
        }
    }
    return out;
}

/// Adjoint of upsample_axis.
template <typename T>
std::vector<T> upsample_axis_backward(const std::vector<T>& dout, std::size_t planes, Shape3 in_s, int axis, int factor) {
    const LinearTaps taps = linear_taps(in_s[axis], factor);
    std::vector<T> din(planes * in_s.voxels(), T{});
    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= in_s[a];
    for (int a = axis + 1; a < 3; ++a) inner *= in_s[a];
    const int n_in = in_s[axis], n_out = in_s[axis] * factor;
    for (std::size_t p = 0; p < planes * outer; ++p) {
        T* dst = din.data() + p * n_in * inner;
        const T* src = dout.data() + p * n_out * inner;
        for (int o = 0; o < n_out; ++o) {
            T* a0 = dst + taps.lo[o] * inner;
            T* a1 = dst + taps.hi[o] * inner;
            const T w = static_cast<T>(taps.w[o]);
            const T* g = src + o * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                a0[k] += (T{1} - w) * g[k];
                a1[k] += w * g[k];
            }
        }
    }
    return din;
}

}  // namespace detail

/// Separable trilinear upsampling by `factor` (half-pixel centers).
template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, int factor) {
    const std::size_t planes = static_cast<std::size_t>(x.batch) * x.channels;
    Shape3 s = x.spatial, next;
    std::vector<T> buf = detail::upsample_axis(x.data, planes, s, 0, factor, next);
    s = next;
    buf = detail::upsample_axis(buf, planes, s, 1, factor, next);
    s = next;
    buf = detail::upsample_axis(buf, planes, s, 2, factor, next);
    Tensor<T> y;
    y.batch = x.batch;
    y.channels = x.channels;
    y.spatial = next;
    y.data = std::move(buf);
    return y;
}

template <typename T>
Tensor<T> upsample_trilinear_backward(const Tensor<T>& dy, int factor) {
    const std::size_t planes = static_cast<std::size_t>(dy.batch) * dy.channels;
    Shape3 s0 = dy.spatial;
    for (auto& d : s0.dims) d /= factor;
    Shape3 s1 = s0;
    s1[0] *= factor;
    Shape3 s2 = s1;
    s2[1] *= factor;
    std::vector<T> g = detail::upsample_axis_backward(dy.data, planes, s2, 2, factor);
    g = detail::upsample_axis_backward(g, planes, s1, 1, factor);
    g = detail::upsample_axis_backward(g, planes, s0, 0, factor);
    Tensor<T> dx;
    dx.batch = dy.batch;
    dx.channels = dy.channels;
    dx.spatial = s0;
    dx.data = std::move(g);
    return dx;
}

/// Affine map y = W x + b on a single vector.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in_features, int out_features)
        : in_(in_features), out_(out_features), weight_(name + ".weight", {out_features, in_features}),
          bias_(name + ".bias", {out_features}) {}

    int in_features() const { return in_; }
    int out_features() const { return out_; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    const Parameter<T>& weight() const { return weight_; }
    const Parameter<T>& bias() const { return bias_; }

    void init(Rng& rng) {
        const double stddev = std::sqrt(1.0 / in_);
        for (auto& w : weight_.value) w = static_cast<T>(rng.normal(0.0, stddev));
        std::fill(bias_.value.begin(), bias_.value.end(), T{});
    }

    std::vector<T> forward(std::span<const T> x) const {
        if (static_cast<int>(x.size()) != in_) {
            throw ShapeError("linear " + weight_.name + ": expected input of length " + std::to_string(in_) + ", got " +
                             std::to_string(x.size()));
        }
        std::vector<T> y(bias_.value);
        for (int o = 0; o < out_; ++o) {
            const T* row = weight_.value.data() + static_cast<std::size_t>(o) * in_;
            T acc{};
            for (int i = 0; i < in_; ++i) acc += row[i] * x[i];
            y[o] += acc;
        }
        return y;
    }

    std::vector<T> backward(std::span<const T> x, std::span<const T> dy) {
        std::vector<T> dx(in_, T{});
        for (int o = 0; o < out_; ++o) {
            bias_.grad[o] += dy[o];
            T* grow = weight_.grad.data() + static_cast<std::size_t>(o) * in_;
            const T* row = weight_.value.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) {
                grow[i] += dy[o] * x[i];
                dx[i] += dy[o] * row[i];
            }
        }
        return dx;
    }

private:
    int in_ = 0, out_ = 0;
    Parameter<T> weight_;
    Parameter<T> bias_;
};

}  // namespace tumorsearch::model
