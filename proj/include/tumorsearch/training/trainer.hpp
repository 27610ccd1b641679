#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/model/checkpoint.hpp"
#include "tumorsearch/phantom/manifest.hpp"
#include "tumorsearch/training/loss.hpp"
#include "tumorsearch/training/optimizer.hpp"
#include "tumorsearch/training/sampler.hpp"
#include "tumorsearch/training/schedule.hpp"

namespace tumorsearch::training {

/// Raised when a loss term becomes NaN or infinite.
class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(int epoch, int batch, std::string term)
        : Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ", term " +
                term),
          epoch_(epoch), batch_(batch), term_(std::move(term)) {}

    int epoch() const { return epoch_; }
    int batch() const { return batch_; }
    const std::string& term() const { return term_; }

private:
    int epoch_, batch_;
    std::string term_;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown mean;  // per-batch average over the epoch
    double seconds = 0.0;
};

inline nlohmann::json breakdown_json(const LossBreakdown& b) {
    nlohmann::json terms = nlohmann::json::object(), omitted = nlohmann::json::object(),
                   present = nlohmann::json::object();
    for (Task t : kClassificationTasks) {
        const auto p = classification_index(t);
        terms[std::string(to_string(t))] = b.task_terms[p];
        omitted[std::string(to_string(t))] = b.omitted[p];
        present[std::string(to_string(t))] = b.present[p];
    }
    return {{"total", b.total}, {"segmentation", b.segmentation}, {"tasks", terms}, {"present", present}, {"omitted", omitted}};
}

inline nlohmann::json epoch_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"lr", r.lr}, {"loss", breakdown_json(r.mean)}, {"seconds", r.seconds}};
}

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::filesystem::path final_checkpoint;
    std::filesystem::path best_checkpoint;
    std::filesystem::path log_path;
    double final_loss = 0.0;
};

/// Volumes and masks of the training images, loaded once.
struct TrainingImages {
    std::vector<Volume> volumes;
    std::vector<Mask> masks;
    std::vector<std::vector<TumorRecord>> tumors;

    static TrainingImages load(const phantom::DatasetManifest& manifest) {
        bool any_train = false;
        for (const auto& image : manifest.images) any_train |= image.split == phantom::Split::train;
        TrainingImages out;
        for (const auto& image : manifest.images) {
            if (any_train && image.split != phantom::Split::train) continue;
            if (image.tumors.empty()) continue;
            out.volumes.push_back(manifest.load_volume(image));
            out.masks.push_back(manifest.load_mask(image));
            out.tumors.push_back(image.tumors);
        }
        if (out.volumes.empty()) throw Error("no training images with tumors in manifest");
        return out;
    }
};

template <typename T>
struct Batch {
    Tensor<T> input;
    Tensor<T> seg_target;
    std::vector<std::vector<BBox>> boxes;
    std::vector<std::vector<TaskTargets>> targets;
};

template <typename T>
Batch<T> make_batch(const std::vector<PatchSample>& samples) {
    Batch<T> b;
    const Shape3 s = samples.front().patch.shape;
    const int n = static_cast<int>(samples.size());
    b.input = Tensor<T>(n, 1, s);
    b.seg_target = Tensor<T>(n, 1, s);
    for (int i = 0; i < n; ++i) {
        const auto& sample = samples[i];
        std::copy(sample.patch.data.begin(), sample.patch.data.end(), b.input.channel(i, 0));
        std::transform(sample.mask.data.begin(), sample.mask.data.end(), b.seg_target.channel(i, 0),
                       [](std::uint8_t m) { return m ? T{1} : T{0}; });
        std::vector<BBox> boxes;
        std::vector<TaskTargets> targets;
        for (const auto& t : sample.tumors) {
            boxes.push_back(t.bbox);
            targets.push_back(targets_from(t.labels));
        }
        b.boxes.push_back(std::move(boxes));
        b.targets.push_back(std::move(targets));
    }
    return b;
}

inline bool finite_breakdown(const LossBreakdown& b, std::string* term) {
    if (!std::isfinite(b.segmentation)) {
        *term = "segmentation";
        return false;
    }
    for (Task t : kClassificationTasks) {
        if (!std::isfinite(b.task_terms[classification_index(t)])) {
            *term = std::string(to_string(t));
            return false;
        }
    }
    if (!std::isfinite(b.total)) {
        *term = "total";
        return false;
    }
    return true;
}

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
template <typename T>
double clip_gradient_norm(model::MultitaskNet<T>& net, double max_norm) {
    double sq = 0.0;
    net.visit([&](model::Parameter<T>& p, bool trainable) {
        if (!trainable) return;
        for (T g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        net.visit([&](model::Parameter<T>& p, bool trainable) {
            if (!trainable) return;
            for (T& g : p.grad) g *= scale;
        });
    }
    return norm;
}

/// Trains a network in place on patches drawn from `images`. The model's own
/// task list decides which heads exist; `config.enabled_tasks` (when set)
/// restricts the loss further.
template <typename T>
std::vector<EpochRecord> train_loop(model::MultitaskNet<T>& net, const TrainingImages& images, const TrainConfig& config,
                                    const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    config.validate();
    LossWeights weights = LossWeights::uniform(config.lambda_s, config.lambda_p);
    weights.restrict_to(config.enabled_tasks.empty() ? net.config().enabled_tasks : config.enabled_tasks);
    for (Task t : config.enabled_tasks) {
        if (!net.config().enabled(t)) throw ConfigError("enabled_tasks", "task '" + std::string(to_string(t)) + "' has no head");
    }

    Rng rng = Rng(config.seed).fork(0x5a3b1e);
    SgdMomentum<T> optimizer(config.momentum, config.nesterov);
    std::vector<EpochRecord> records;
    typename model::MultitaskNet<T>::Cache cache;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochRecord record;
        record.epoch = epoch;
        record.lr = lr_at(epoch, config);
        for (int batch = 0; batch < config.batches_per_epoch; ++batch) {
            std::vector<PatchSample> samples;
            for (int i = 0; i < config.batch_size; ++i) {
                const auto img = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(images.volumes.size()) - 1));
                samples.push_back(sample_patch(images.volumes[img], images.masks[img], images.tumors[img],
                                               config.patch_size, rng));
            }
            const Batch<T> b = make_batch<T>(samples);
            net.zero_grad();
            const auto out = net.forward_train(b.input, b.boxes, cache);
            const auto loss = multitask_loss(out, b.seg_target, b.targets, weights);
            std::string term;
            if (!finite_breakdown(loss.breakdown, &term)) throw NonFiniteLoss(epoch, batch, term);
            net.backward(cache, loss.grad);
            if (config.clip_grad_norm > 0.0) clip_gradient_norm(net, config.clip_grad_norm);
            optimizer.step(net, record.lr);

            auto& m = record.mean;
            const double w = 1.0 / config.batches_per_epoch;
            m.total += loss.breakdown.total * w;
            m.segmentation += loss.breakdown.segmentation * w;
            for (std::size_t p = 0; p < kNumClassTasks; ++p) {
                m.task_terms[p] += loss.breakdown.task_terms[p] * w;
                m.present[p] += loss.breakdown.present[p];
                m.omitted[p] += loss.breakdown.omitted[p];
            }
        }
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        records.push_back(record);
        if (on_epoch) on_epoch(record);
    }
    return records;
}

/// Full training run: writes train_log.jsonl, best.ckpt and final.ckpt to `out_dir`.
inline TrainReport train(const phantom::DatasetManifest& manifest, const model::ModelConfig& model_config,
                         const TrainConfig& train_config, const std::filesystem::path& out_dir,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    train_config.validate();
    model::MultitaskNet<float> net(model_config);
    const TrainingImages images = TrainingImages::load(manifest);

    std::filesystem::create_directories(out_dir);
    TrainReport report;
    report.log_path = out_dir / "train_log.jsonl";
    report.best_checkpoint = out_dir / "best.ckpt";
    report.final_checkpoint = out_dir / "final.ckpt";
    const nlohmann::json metadata{{"train_config", train_config}};
    std::string log;
    double best = std::numeric_limits<double>::infinity();
    report.epochs = train_loop(net, images, train_config, [&](const EpochRecord& r) {
        log += epoch_json(r).dump() + "\n";
        io::write_text(report.log_path, log);
        if (r.mean.total < best) {
            best = r.mean.total;
            auto meta = metadata;
            meta["epoch"] = r.epoch;
            model::save_checkpoint(net, report.best_checkpoint, meta);
        }
        if (on_epoch) on_epoch(r);
    });
    auto meta = metadata;
    meta["epoch"] = train_config.epochs - 1;
    model::save_checkpoint(net, report.final_checkpoint, meta);
    report.final_loss = report.epochs.back().mean.total;
    return report;
}

}  // namespace tumorsearch::training
