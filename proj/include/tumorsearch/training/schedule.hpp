#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/tasks.hpp"
#include "tumorsearch/model/config.hpp"

namespace tumorsearch::training {

struct TrainConfig {
    int epochs = 10;
    int batches_per_epoch = 50;
    int batch_size = 2;
    std::array<int, 3> patch_size{32, 32, 32};
    double lr_initial = 0.1;
    std::vector<int> lr_drop_epochs{7, 9};
    double lr_drop_factor = 10.0;
    double momentum = 0.9;
    bool nesterov = true;
    double lambda_s = 1.0;
    double lambda_p = 1e-3;
    /// Global L2 bound on the gradient before each step; 0 disables.
    double clip_grad_norm = 5.0;
    /// Overrides the model's task list when non-empty.
    std::vector<Task> enabled_tasks;
    std::uint64_t seed = 0;

    /// The schedule used for the published experiments.
    static TrainConfig paper() {
        TrainConfig c;
        c.epochs = 120;
        c.batches_per_epoch = 200;
        c.batch_size = 2;
        c.patch_size = {120, 120, 120};
        c.lr_drop_epochs = {90, 105};
        return c;
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs", "must be positive");
        if (batches_per_epoch < 1) throw ConfigError("batches_per_epoch", "must be positive");
        if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
        for (int s : patch_size) {
            if (s < 4 || s % 4 != 0) throw ConfigError("patch_size", "sides must be positive multiples of 4");
        }
        for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
            if (lr_drop_epochs[i] < 0 || lr_drop_epochs[i] >= epochs) {
                throw ConfigError("lr_drop_epochs", "must lie in [0, epochs)");
            }
            if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
                throw ConfigError("lr_drop_epochs", "must be strictly increasing");
            }
        }
        if (!(lr_initial > 0.0)) throw ConfigError("lr_initial", "must be positive");
        if (!(lr_drop_factor > 0.0)) throw ConfigError("lr_drop_factor", "must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum", "must lie in [0, 1)");
        if (lambda_s < 0.0) throw ConfigError("lambda_s", "must be non-negative");
        if (lambda_p < 0.0) throw ConfigError("lambda_p", "must be non-negative");
        if (!(clip_grad_norm >= 0.0)) throw ConfigError("clip_grad_norm", "must be non-negative");
    }
};

/// Piecewise-constant learning rate: divided by the drop factor at every
/// listed epoch (inclusive).
inline double lr_at(int epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) {
        throw Error("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
    }
    double lr = config.lr_initial;
    for (int drop : config.lr_drop_epochs) {
        if (epoch >= drop) lr /= config.lr_drop_factor;
    }
    return lr;
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batches_per_epoch", c.batches_per_epoch},
                       {"batch_size", c.batch_size},
                       {"patch_size", c.patch_size},
                       {"lr_initial", c.lr_initial},
                       {"lr_drop_epochs", c.lr_drop_epochs},
                       {"lr_drop_factor", c.lr_drop_factor},
                       {"momentum", c.momentum},
                       {"nesterov", c.nesterov},
                       {"lambda_s", c.lambda_s},
                       {"lambda_p", c.lambda_p},
                       {"clip_grad_norm", c.clip_grad_norm},
                       {"enabled_tasks", model::tasks_to_json(c.enabled_tasks)},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    for (const auto& [key, value] : j.items()) {
        if (key == "epochs") c.epochs = value.get<int>();
        else if (key == "batches_per_epoch") c.batches_per_epoch = value.get<int>();
        else if (key == "batch_size") c.batch_size = value.get<int>();
        else if (key == "patch_size") {
            if (value.is_number()) c.patch_size.fill(value.get<int>());
            else c.patch_size = value.get<std::array<int, 3>>();
        } else if (key == "lr_initial") c.lr_initial = value.get<double>();
        else if (key == "lr_drop_epochs") c.lr_drop_epochs = value.get<std::vector<int>>();
        else if (key == "lr_drop_factor") c.lr_drop_factor = value.get<double>();
        else if (key == "momentum") c.momentum = value.get<double>();
        else if (key == "nesterov") c.nesterov = value.get<bool>();
        else if (key == "lambda_s") c.lambda_s = value.get<double>();
        else if (key == "lambda_p") c.lambda_p = value.get<double>();
        else if (key == "clip_grad_norm") c.clip_grad_norm = value.get<double>();
        else if (key == "enabled_tasks") c.enabled_tasks = model::tasks_from_json(value);
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else throw ConfigError(key, "unknown train config field");
    }
}

}  // namespace tumorsearch::training
