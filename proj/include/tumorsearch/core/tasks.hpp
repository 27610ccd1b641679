#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tumorsearch/core/error.hpp"

namespace tumorsearch {

enum class TumorType : int { metastasis = 0, meningioma = 1, schwannoma = 2 };

inline constexpr int kNumTumorTypes = 3;

inline constexpr std::array<std::string_view, kNumTumorTypes> kTumorTypeNames{"metastasis", "meningioma",
                                                                              "schwannoma"};

inline std::string_view to_string(TumorType type) { return kTumorTypeNames[static_cast<int>(type)]; }

inline TumorType tumor_type_from_string(std::string_view name) {
    for (int i = 0; i < kNumTumorTypes; ++i) {
        if (kTumorTypeNames[i] == name) return static_cast<TumorType>(i);
    }
    throw Error("unknown tumor type '" + std::string(name) + "'");
}

/// Supervised tasks the network can be trained on.
enum class Task : int { segmentation = 0, type, region, left_right, front_rear, upper_lower };

inline constexpr std::array<Task, 6> kAllTasks{Task::segmentation, Task::type,       Task::region,
                                               Task::left_right,   Task::front_rear, Task::upper_lower};

/// The per-tumor classification tasks, in canonical order.
inline constexpr std::array<Task, 5> kClassificationTasks{Task::type, Task::region, Task::left_right,
                                                          Task::front_rear, Task::upper_lower};

inline constexpr std::array<std::string_view, 6> kTaskNames{"segmentation", "type",       "region",
                                                            "left_right",   "front_rear", "upper_lower"};

inline std::string_view to_string(Task task) { return kTaskNames[static_cast<int>(task)]; }

inline Task task_from_string(std::string_view name) {
    for (Task t : kAllTasks) {
        if (to_string(t) == name) return t;
    }
    throw Error("unknown task '" + std::string(name) + "'");
}

inline constexpr bool is_classification(Task task) { return task != Task::segmentation; }

/// Index into kClassificationTasks; `task` must be a classification task.
inline constexpr std::size_t classification_index(Task task) { return static_cast<std::size_t>(task) - 1; }

/// Heterogeneous per-tumor labels. Any label except type may be absent.
struct TumorLabels {
    TumorType type = TumorType::metastasis;
    std::optional<int> region;
    std::optional<int> left_right;
    std::optional<int> front_rear;
    std::optional<int> upper_lower;
    double linear_size_mm = 0.0;

    std::optional<int> get(Task task) const {
        switch (task) {
            case Task::type: return static_cast<int>(type);
            case Task::region: return region;
            case Task::left_right: return left_right;
            case Task::front_rear: return front_rear;
            case Task::upper_lower: return upper_lower;
            case Task::segmentation: break;
        }
        throw Error("segmentation has no per-tumor label");
    }

    void set(Task task, std::optional<int> value) {
        switch (task) {
            case Task::type:
                if (!value) throw Error("type label cannot be absent");
                type = static_cast<TumorType>(*value);
                return;
            case Task::region: region = value; return;
            case Task::left_right: left_right = value; return;
            case Task::front_rear: front_rear = value; return;
            case Task::upper_lower: upper_lower = value; return;
            case Task::segmentation: break;
        }
        throw Error("segmentation has no per-tumor label");
    }

    bool operator==(const TumorLabels&) const = default;
};

}  // namespace tumorsearch
