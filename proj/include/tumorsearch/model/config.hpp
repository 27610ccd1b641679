#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/error.hpp"
#include "tumorsearch/core/tasks.hpp"

namespace tumorsearch::model {

struct ModelConfig {
    int channels = 64;
    int n_resblocks = 4;
    int down_up_factor = 4;
    int n_types = kNumTumorTypes;
    int n_regions = 11;
    std::vector<Task> enabled_tasks{kAllTasks.begin(), kAllTasks.end()};
    std::uint64_t seed = 0;

    bool enabled(Task task) const {
        return std::find(enabled_tasks.begin(), enabled_tasks.end(), task) != enabled_tasks.end();
    }

    int num_classes(Task task) const {
        switch (task) {
            case Task::type: return n_types;
            case Task::region: return n_regions;
            case Task::left_right:
            case Task::front_rear:
            case Task::upper_lower: return 2;
            case Task::segmentation: return 1;
        }
        throw Error("unknown task");
    }

    /// Width of the first stem convolution.
    int stem_channels() const { return std::max(1, channels / 2); }

    void validate() const {
        if (channels < 1) throw ConfigError("channels", "must be at least 1");
        if (n_resblocks < 0) throw ConfigError("n_resblocks", "must be non-negative");
        if (down_up_factor != 4) throw ConfigError("down_up_factor", "is fixed at 4");
        if (n_types != kNumTumorTypes) throw ConfigError("n_types", "must be 3");
        if (n_regions < 2) throw ConfigError("n_regions", "must be at least 2");
        if (enabled_tasks.empty()) throw ConfigError("enabled_tasks", "must not be empty");
        for (std::size_t i = 0; i < enabled_tasks.size(); ++i) {
            for (std::size_t j = i + 1; j < enabled_tasks.size(); ++j) {
                if (enabled_tasks[i] == enabled_tasks[j]) throw ConfigError("enabled_tasks", "duplicate task");
            }
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json tasks_to_json(const std::vector<Task>& tasks) {
    nlohmann::json j = nlohmann::json::array();
    for (Task t : tasks) j.push_back(std::string(to_string(t)));
    return j;
}

inline std::vector<Task> tasks_from_json(const nlohmann::json& j) {
    std::vector<Task> tasks;
    for (const auto& name : j) tasks.push_back(task_from_string(name.get<std::string>()));
    return tasks;
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"channels", c.channels},
                       {"n_resblocks", c.n_resblocks},
                       {"down_up_factor", c.down_up_factor},
                       {"n_types", c.n_types},
                       {"n_regions", c.n_regions},
                       {"enabled_tasks", tasks_to_json(c.enabled_tasks)},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    for (const auto& [key, value] : j.items()) {
        if (key == "channels") c.channels = value.get<int>();
        else if (key == "n_resblocks") c.n_resblocks = value.get<int>();
        else if (key == "down_up_factor") c.down_up_factor = value.get<int>();
        else if (key == "n_types") c.n_types = value.get<int>();
        else if (key == "n_regions") c.n_regions = value.get<int>();
        else if (key == "enabled_tasks") c.enabled_tasks = tasks_from_json(value);
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else throw ConfigError(key, "unknown model config field");
    }
}

}  // namespace tumorsearch::model
