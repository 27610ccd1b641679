#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/training/trainer.hpp"

namespace tumorsearch::training {

using TaskSubset = std::vector<Task>;

/// "segmentation+type", in canonical task order.
inline std::string subset_name(TaskSubset subset) {
    std::sort(subset.begin(), subset.end());
    if (subset.size() == kAllTasks.size()) return "all";
    std::string name;
    for (Task t : subset) {
        if (!name.empty()) name += "+";
        name += to_string(t);
    }
    return name;
}

/// Accepts an array of subsets, each either "all" or an array of task names.
inline std::vector<TaskSubset> subsets_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ConfigError("subsets", "expected an array");
    std::vector<TaskSubset> out;
    for (const auto& s : j) {
        if (s.is_string() && s.get<std::string>() == "all") {
            out.emplace_back(kAllTasks.begin(), kAllTasks.end());
        } else {
            out.push_back(model::tasks_from_json(s));
        }
    }
    return out;
}

struct AblationRow {
    std::string name;
    TaskSubset tasks;
    std::filesystem::path checkpoint;
    double final_loss = 0.0;
    /// Downstream metrics supplied by the caller, keyed by column name.
    std::map<std::string, double> metrics;
};

struct AblationReport {
    std::vector<AblationRow> rows;

    const AblationRow& row(const std::string& name) const {
        for (const auto& r : rows) {
            if (r.name == name) return r;
        }
        throw Error("no ablation row '" + name + "'");
    }
};

inline nlohmann::json to_json(const AblationReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"name", row.name},
                        {"tasks", model::tasks_to_json(row.tasks)},
                        {"checkpoint", row.checkpoint.string()},
                        {"final_loss", row.final_loss},
                        {"metrics", row.metrics}});
    }
    return {{"rows", rows}};
}

using MetricsFn = std::function<std::map<std::string, double>(const std::filesystem::path& checkpoint)>;

/// One training run per task subset, all sharing the same seeds and model
/// (heads for every task; the loss is restricted to the subset).
inline AblationReport ablation_suite(const phantom::DatasetManifest& manifest, const model::ModelConfig& model_config,
                                     const TrainConfig& train_config, const std::vector<TaskSubset>& subsets,
                                     const std::filesystem::path& out_dir, const MetricsFn& metrics = {},
                                     const std::function<void(const std::string&, const EpochRecord&)>& on_epoch = {}) {
    if (subsets.empty()) throw ConfigError("subsets", "need at least one ablation entry");
    std::set<std::string> seen;
    for (const auto& s : subsets) {
        if (s.empty()) throw ConfigError("subsets", "ablation entries must be nonempty");
        if (!seen.insert(subset_name(s)).second) throw ConfigError("subsets", "duplicate ablation entry '" + subset_name(s) + "'");
        for (Task t : s) {
            if (!model_config.enabled(t)) throw ConfigError("subsets", "task '" + std::string(to_string(t)) + "' has no head");
        }
    }
    AblationReport report;
    for (const auto& s : subsets) {
        AblationRow row;
        row.name = subset_name(s);
        row.tasks = s;
        TrainConfig cfg = train_config;
        cfg.enabled_tasks = s;
        const auto run = train(manifest, model_config, cfg, out_dir / row.name,
                               [&](const EpochRecord& e) {
                                   if (on_epoch) on_epoch(row.name, e);
                               });
        row.checkpoint = run.final_checkpoint;
        row.final_loss = run.final_loss;
        if (metrics) row.metrics = metrics(row.checkpoint);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace tumorsearch::training
