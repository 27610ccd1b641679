#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/model/config.hpp"
#include "tumorsearch/model/layers.hpp"
#include "tumorsearch/model/resblock.hpp"
#include "tumorsearch/model/roipool.hpp"

namespace tumorsearch::model {

/// Logits per classification task, indexed by classification_index(); tasks
/// that are not enabled stay empty.
template <typename T>
using TaskLogits = std::array<std::vector<T>, kClassificationTasks.size()>;

template <typename T>
struct TumorOutput {
    std::vector<T> embedding;
    TaskLogits<T> logits;
};

template <typename T>
struct NetOutput {
    Tensor<T> features;
    /// (batch, 1, spatial); empty when segmentation is disabled.
    Tensor<T> seg_logits;
    /// tumors[n][i] belongs to box i of sample n.
    std::vector<std::vector<TumorOutput<T>>> tumors;
};

template <typename T>
struct NetOutputGrad {
    Tensor<T> seg_logits;
    std::vector<std::vector<TaskLogits<T>>> tumor_logits;
};

/// Thread-safe counter that copies by value.
class PassCounter {
public:
    PassCounter() = default;
    PassCounter(const PassCounter& o) : n_(o.n_.load()) {}
    PassCounter& operator=(const PassCounter& o) {
        n_ = o.n_.load();
        return *this;
    }
    void bump() const { ++n_; }
    std::size_t value() const { return n_.load(); }
    void reset() { n_ = 0; }

private:
    mutable std::atomic<std::size_t> n_{0};
};

/// Shared 3D backbone with a segmentation head and one linear head per
/// classification task on top of RoiPool embeddings.
///
/// Backbone: conv3(1 -> C/2), BN, ReLU, conv3(C/2 -> C), maxpool /4,
/// n_resblocks ResBlocks at width C, trilinear upsample x4. The feature map
/// has C channels and the input's spatial shape.
template <typename T>
class MultitaskNet {
public:
    struct Cache {
        Tensor<T> input, stem1, stem_act, stem2, pooled, features, seg_hidden;
        typename BatchNorm3d<T>::Cache stem_bn;
        std::vector<std::uint32_t> pool_argmax;
        std::vector<typename ResBlock<T>::Cache> blocks;
        typename ResBlock<T>::Cache seg_block;
        std::vector<std::vector<std::vector<std::size_t>>> roi_argmax;
        std::vector<std::vector<std::vector<T>>> embeddings;
    };

    explicit MultitaskNet(ModelConfig config) : config_(std::move(config)) {
        config_.validate();
        const int C = config_.channels;
        stem1_ = Conv3d<T>("stem.conv1", 1, config_.stem_channels(), 3);
        stem_bn_ = BatchNorm3d<T>("stem.bn", config_.stem_channels());
        stem2_ = Conv3d<T>("stem.conv2", config_.stem_channels(), C, 3);
        for (int i = 0; i < config_.n_resblocks; ++i) blocks_.emplace_back("block" + std::to_string(i), C, C);
        if (config_.enabled(Task::segmentation)) {
            seg_block_.emplace("seg.block", C, C);
            seg_out_.emplace("seg.out", C, 1, 1);
        }
        for (Task task : kClassificationTasks) {
            if (config_.enabled(task)) {
                heads_[classification_index(task)].emplace("head." + std::string(to_string(task)), C,
                                                           config_.num_classes(task));
            }
        }
        init();
    }

    const ModelConfig& config() const { return config_; }

    /// Re-initializes every parameter. Each tensor draws from a stream keyed by
    /// its name, so the backbone initialization does not depend on which
    /// heads exist.
    void init() {
        const Rng base(config_.seed);
        auto stream = [&](const std::string& name) {
            io::Fnv1a h;
            h.update(name);
            return base.fork(h.digest());
        };
        auto init_conv = [&](Conv3d<T>& conv) {
            Rng rng = stream(conv.weight().name);
            conv.init(rng);
        };
        init_conv(stem1_);
        init_conv(stem2_);
        stem_bn_.reset();
        auto init_block = [&](ResBlock<T>& block) {
            init_conv(block.conv1());
            init_conv(block.conv2());
            block.bn1().reset();
            block.bn2().reset();
            block.visit([&](Parameter<T>& p, bool) {
                if (p.name.find(".shortcut.weight") != std::string::npos) {
                    Rng rng = stream(p.name);
                    const double stddev = std::sqrt(2.0 / block.in_channels());
                    for (auto& w : p.value) w = static_cast<T>(rng.normal(0.0, stddev));
                }
            });
        };
        for (auto& b : blocks_) init_block(b);
        if (seg_block_) {
            init_block(*seg_block_);
            init_conv(*seg_out_);
        }
        for (auto& head : heads_) {
            if (head) {
                Rng rng = stream(head->weight().name);
                head->init(rng);
            }
        }
    }

    /// Calls f(Parameter&, trainable) for every tensor in a fixed order.
    template <typename F>
    void visit(F&& f) {
        f(stem1_.weight(), true);
        f(stem1_.bias(), true);
        f(stem_bn_.gamma(), true);
        f(stem_bn_.beta(), true);
        f(stem_bn_.running_mean(), false);
        f(stem_bn_.running_var(), false);
        f(stem2_.weight(), true);
        f(stem2_.bias(), true);
        for (auto& b : blocks_) b.visit(f);
        if (seg_block_) {
            seg_block_->visit(f);
            f(seg_out_->weight(), true);
            f(seg_out_->bias(), true);
        }
        for (auto& head : heads_) {
            if (head) {
                f(head->weight(), true);
                f(head->bias(), true);
            }
        }
    }

    template <typename F>
    void visit(F&& f) const {
        const_cast<MultitaskNet*>(this)->visit([&](Parameter<T>& p, bool trainable) {
            f(static_cast<const Parameter<T>&>(p), trainable);
        });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        visit([&](const Parameter<T>& p, bool trainable) {
            if (trainable) n += p.size();
        });
        return n;
    }

    void zero_grad() {
        visit([](Parameter<T>& p, bool) { p.zero_grad(); });
    }

    Conv3d<T>* seg_out() { return seg_out_ ? &*seg_out_ : nullptr; }
    Linear<T>* head(Task task) {
        auto& h = heads_[classification_index(task)];
        return h ? &*h : nullptr;
    }
    const Linear<T>* head(Task task) const {
        const auto& h = heads_[classification_index(task)];
        return h ? &*h : nullptr;
    }
    std::vector<ResBlock<T>>& blocks() { return blocks_; }

    /// Number of backbone evaluations so far (inference and training).
    std::size_t backbone_passes() const { return passes_.value(); }
    void reset_pass_counter() { passes_.reset(); }

    void check_input(const Tensor<T>& input) const {
        if (input.channels != 1) throw ShapeError("network input must have 1 channel, got " + std::to_string(input.channels));
        for (std::size_t a = 0; a < 3; ++a) {
            if (input.spatial[a] % config_.down_up_factor != 0 || input.spatial[a] == 0) {
                throw ShapeError("spatial side not divisible by " + std::to_string(config_.down_up_factor) + " (axis " +
                                 std::to_string(a) + ", side " + std::to_string(input.spatial[a]) + ")");
            }
        }
    }

    /// Inference-mode backbone: C x input spatial shape.
    Tensor<T> backbone(const Tensor<T>& input) const {
        check_input(input);
        passes_.bump();
        Tensor<T> h = stem2_.forward(relu(stem_bn_.infer(stem1_.forward(input))));
        h = maxpool(h, config_.down_up_factor, nullptr);
        for (const auto& b : blocks_) h = b.infer(h);
        return upsample_trilinear(h, config_.down_up_factor);
    }

    /// Segmentation logits from a feature map (inference mode).
    Tensor<T> segmentation_head(const Tensor<T>& features) const {
        if (!seg_block_) throw Error("segmentation head is disabled in this model");
        return seg_out_->forward(seg_block_->infer(features));
    }

    std::vector<T> classify(Task task, std::span<const T> embedding) const {
        const Linear<T>* h = head(task);
        if (!h) throw Error("no head for task '" + std::string(to_string(task)) + "'");
        return h->forward(embedding);
    }

    /// One backbone pass shared by all heads and boxes (inference mode).
    NetOutput<T> infer(const Tensor<T>& input, const std::vector<std::vector<BBox>>& boxes) const {
        NetOutput<T> out;
        out.features = backbone(input);
        if (seg_block_) out.seg_logits = segmentation_head(out.features);
        out.tumors = pool_and_classify(out.features, boxes, nullptr);
        return out;
    }

    /// Training-mode forward; batch statistics are used and `cache` is filled.
    NetOutput<T> forward_train(const Tensor<T>& input, const std::vector<std::vector<BBox>>& boxes, Cache& cache) {
        check_input(input);
        passes_.bump();
        cache.input = input;
        cache.stem1 = stem1_.forward(input);
        cache.stem_act = relu(stem_bn_.forward(cache.stem1, Mode::train, &cache.stem_bn));
        cache.stem2 = stem2_.forward(cache.stem_act);
        Tensor<T> h = maxpool(cache.stem2, config_.down_up_factor, &cache.pool_argmax);
        cache.blocks.assign(blocks_.size(), {});
        for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward(h, cache.blocks[i]);
        cache.pooled = h;

        NetOutput<T> out;
        out.features = upsample_trilinear(h, config_.down_up_factor);
        if (seg_block_) {
            cache.seg_hidden = seg_block_->forward(out.features, cache.seg_block);
            out.seg_logits = seg_out_->forward(cache.seg_hidden);
        }
        out.tumors = pool_and_classify(out.features, boxes, &cache);
        cache.features = out.features;
        return out;
    }

    /// Accumulates parameter gradients for the loss whose output gradients are `grad`.
    void backward(const Cache& cache, const NetOutputGrad<T>& grad) {
        Tensor<T> d_features(cache.features.batch, cache.features.channels, cache.features.spatial);
        if (seg_block_ && !grad.seg_logits.data.empty()) {
            Tensor<T> d_hidden = seg_out_->backward(cache.seg_hidden, grad.seg_logits);
            add_inplace(d_features, seg_block_->backward(cache.seg_block, d_hidden));
        }
        for (std::size_t n = 0; n < grad.tumor_logits.size(); ++n) {
            for (std::size_t i = 0; i < grad.tumor_logits[n].size(); ++i) {
                const auto& emb = cache.embeddings[n][i];
                std::vector<T> d_emb(emb.size(), T{});
                bool any = false;
                for (Task task : kClassificationTasks) {
                    const auto& g = grad.tumor_logits[n][i][classification_index(task)];
                    if (g.empty()) continue;
                    Linear<T>* h = head(task);
                    if (!h) throw Error("gradient for disabled task '" + std::string(to_string(task)) + "'");
                    const auto dx = h->backward(emb, g);
                    for (std::size_t c = 0; c < dx.size(); ++c) d_emb[c] += dx[c];
                    any = true;
                }
                if (!any) continue;
                const auto& where = cache.roi_argmax[n][i];
                for (int c = 0; c < d_features.channels; ++c) {
                    d_features.channel(static_cast<int>(n), c)[where[c]] += d_emb[c];
                }
            }
        }
        Tensor<T> dh = upsample_trilinear_backward(d_features, config_.down_up_factor);
        for (std::size_t i = blocks_.size(); i-- > 0;) dh = blocks_[i].backward(cache.blocks[i], dh);
        Tensor<T> d_stem2 = maxpool_backward(dh, cache.pool_argmax, cache.stem2.channels, cache.stem2.spatial);
        Tensor<T> d_act = stem2_.backward(cache.stem_act, d_stem2);
        Tensor<T> d_stem1 = stem_bn_.backward(cache.stem_bn, relu_backward(cache.stem_act, std::move(d_act)));
        stem1_.backward(cache.input, d_stem1, false);
    }

private:
    std::vector<std::vector<TumorOutput<T>>> pool_and_classify(const Tensor<T>& features,
                                                               const std::vector<std::vector<BBox>>& boxes,
                                                               Cache* cache) const {
        if (!boxes.empty() && static_cast<int>(boxes.size()) != features.batch) {
            throw ShapeError("box lists (" + std::to_string(boxes.size()) + ") do not match batch size (" +
                             std::to_string(features.batch) + ")");
        }
        std::vector<std::vector<TumorOutput<T>>> tumors(boxes.size());
        if (cache) {
            cache->roi_argmax.assign(boxes.size(), {});
            cache->embeddings.assign(boxes.size(), {});
        }
        for (std::size_t n = 0; n < boxes.size(); ++n) {
            for (const BBox& box : boxes[n]) {
                TumorOutput<T> t;
                std::vector<std::size_t> argmax;
                t.embedding = roipool(features, static_cast<int>(n), box, cache ? &argmax : nullptr);
                for (Task task : kClassificationTasks) {
                    if (const Linear<T>* h = head(task)) t.logits[classification_index(task)] = h->forward(t.embedding);
                }
                if (cache) {
                    cache->roi_argmax[n].push_back(std::move(argmax));
                    cache->embeddings[n].push_back(t.embedding);
                }
                tumors[n].push_back(std::move(t));
            }
        }
        return tumors;
    }

    ModelConfig config_;
    Conv3d<T> stem1_;
    BatchNorm3d<T> stem_bn_;
    Conv3d<T> stem2_;
    std::vector<ResBlock<T>> blocks_;
    std::optional<ResBlock<T>> seg_block_;
    std::optional<Conv3d<T>> seg_out_;
    std::array<std::optional<Linear<T>>, kClassificationTasks.size()> heads_;
    PassCounter passes_;
};

}  // namespace tumorsearch::model
