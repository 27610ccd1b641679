#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/retrieval/index.hpp"

namespace tumorsearch::retrieval {

struct TaskMetrics {
    Task task = Task::type;
    double accuracy = 0.0;
    int evaluated = 0;
    int correct = 0;
};

/// One test tumor's predictions; a task is absent when the label is missing.
struct QueryPrediction {
    std::string tumor_id;
    std::vector<std::pair<Task, std::pair<int, int>>> labels;  // task -> (truth, predicted)
    double size_true = 0.0;
    double size_predicted = 0.0;
};

struct KnnEvalReport {
    int k = 5;
    std::vector<TaskMetrics> tasks;
    double size_rmse_mm = 0.0;
    /// RMSE of always predicting the candidate set's mean size.
    double size_rmse_mean_baseline_mm = 0.0;
    int size_evaluated = 0;
    /// Every candidate distance was identical for some query.
    bool degenerate_distances = false;
    std::vector<QueryPrediction> predictions;

    const TaskMetrics* metrics(Task task) const {
        for (const auto& m : tasks) {
            if (m.task == task) return &m;
        }
        return nullptr;
    }

    double accuracy(Task task) const {
        const auto* m = metrics(task);
        if (!m) throw Error("report has no metrics for task '" + std::string(to_string(task)) + "'");
        return m->accuracy;
    }
};

struct EvalOptions {
    /// Drop candidates from the query's own image.
    bool exclude_same_image = true;
    IndexOptions index;
};

inline std::vector<Task> default_eval_tasks() { return {kClassificationTasks.begin(), kClassificationTasks.end()}; }

/// KNN evaluation: test rows query the train rows.
inline KnnEvalReport eval_knn(const EmbeddingTable& train, const EmbeddingTable& test, int k,
                              const std::vector<Task>& tasks = default_eval_tasks(), const EvalOptions& options = {}) {
    if (train.fingerprint != test.fingerprint) {
        throw Error("fingerprint mismatch: '" + train.fingerprint + "' vs '" + test.fingerprint + "'");
    }
    if (train.channels != test.channels) throw Error("tables differ in embedding width");
    if (k < 1) throw Error("K must be at least 1");
    for (Task t : tasks) {
        if (!is_classification(t)) throw Error("cannot KNN-evaluate task '" + std::string(to_string(t)) + "'");
    }
    const RetrievalIndex index(train, options.index);
    KnnEvalReport report;
    report.k = k;
    for (Task t : tasks) report.tasks.push_back({t, 0.0, 0, 0});

    double mean_size = 0.0;
    for (const auto& row : train.rows) mean_size += row.labels.linear_size_mm;
    mean_size /= static_cast<double>(std::max<std::size_t>(1, train.rows.size()));

    double sq = 0.0, sq_base = 0.0;
    const auto kk = static_cast<std::size_t>(k);
    for (const auto& q : test.rows) {
        const std::optional<std::string> exclude =
            options.exclude_same_image ? std::optional<std::string>(q.image_id) : std::nullopt;
        QueryPrediction pred;
        pred.tumor_id = q.tumor_id;
        for (auto& m : report.tasks) {
            const auto truth = q.labels.get(m.task);
            if (!truth) continue;
            const int guess = index.knn_classify(q.embedding, kk, m.task, exclude);
            ++m.evaluated;
            if (guess == *truth) ++m.correct;
            pred.labels.push_back({m.task, {*truth, guess}});
        }
        const auto all = index.query(q.embedding, index.size(), exclude);
        if (all.neighbors.size() > 1 && all.neighbors.front().distance == all.neighbors.back().distance) {
            report.degenerate_distances = true;
        }
        pred.size_true = q.labels.linear_size_mm;
        pred.size_predicted = index.knn_regress(q.embedding, kk, exclude);
        sq += (pred.size_predicted - pred.size_true) * (pred.size_predicted - pred.size_true);
        sq_base += (mean_size - pred.size_true) * (mean_size - pred.size_true);
        ++report.size_evaluated;
        report.predictions.push_back(std::move(pred));
    }
    for (auto& m : report.tasks) m.accuracy = m.evaluated ? static_cast<double>(m.correct) / m.evaluated : 0.0;
    if (report.size_evaluated) {
        report.size_rmse_mm = std::sqrt(sq / report.size_evaluated);
        report.size_rmse_mean_baseline_mm = std::sqrt(sq_base / report.size_evaluated);
    }
    return report;
}

inline std::vector<KnnEvalReport> sweep_k(const EmbeddingTable& train, const EmbeddingTable& test,
                                          const std::vector<int>& k_values,
                                          const std::vector<Task>& tasks = default_eval_tasks(),
                                          const EvalOptions& options = {}) {
    if (k_values.empty()) throw Error("K sweep needs at least one value");
    std::set<int> seen;
    for (int k : k_values) {
        if (k < 1) throw Error("K must be at least 1");
        if (!seen.insert(k).second) throw Error("duplicate K " + std::to_string(k));
    }
    std::vector<KnnEvalReport> reports;
    for (int k : k_values) reports.push_back(eval_knn(train, test, k, tasks, options));
    return reports;
}

inline nlohmann::json to_json(const KnnEvalReport& r, bool with_predictions = true) {
    nlohmann::json tasks = nlohmann::json::object();
    for (const auto& m : r.tasks) {
        tasks[std::string(to_string(m.task))] = {{"accuracy", m.accuracy}, {"evaluated", m.evaluated}, {"correct", m.correct}};
    }
    nlohmann::json j{{"k", r.k},
                     {"tasks", tasks},
                     {"size_rmse_mm", r.size_rmse_mm},
                     {"size_rmse_mean_baseline_mm", r.size_rmse_mean_baseline_mm},
                     {"size_evaluated", r.size_evaluated},
                     {"degenerate_distances", r.degenerate_distances}};
    if (with_predictions) {
        nlohmann::json log = nlohmann::json::array();
        for (const auto& p : r.predictions) {
            nlohmann::json labels = nlohmann::json::object();
            for (const auto& [task, tp] : p.labels) labels[std::string(to_string(task))] = {{"true", tp.first}, {"predicted", tp.second}};
            log.push_back({{"tumor_id", p.tumor_id},
                           {"labels", labels},
                           {"size_true_mm", p.size_true},
                           {"size_predicted_mm", p.size_predicted}});
        }
        j["predictions"] = std::move(log);
    }
    return j;
}

inline KnnEvalReport report_from_json(const nlohmann::json& j) {
    KnnEvalReport r;
    r.k = j.at("k").get<int>();
    for (const auto& [name, m] : j.at("tasks").items()) {
        r.tasks.push_back({task_from_string(name), m.at("accuracy").get<double>(), m.at("evaluated").get<int>(),
                           m.at("correct").get<int>()});
    }
    std::sort(r.tasks.begin(), r.tasks.end(), [](const auto& a, const auto& b) { return a.task < b.task; });
    r.size_rmse_mm = j.at("size_rmse_mm").get<double>();
    r.size_rmse_mean_baseline_mm = j.value("size_rmse_mean_baseline_mm", 0.0);
    r.size_evaluated = j.value("size_evaluated", 0);
    r.degenerate_distances = j.value("degenerate_distances", false);
    if (j.contains("predictions")) {
        for (const auto& p : j.at("predictions")) {
            QueryPrediction q;
            q.tumor_id = p.at("tumor_id").get<std::string>();
            for (const auto& [name, tp] : p.at("labels").items()) {
                q.labels.push_back({task_from_string(name), {tp.at("true").get<int>(), tp.at("predicted").get<int>()}});
            }
            q.size_true = p.at("size_true_mm").get<double>();
            q.size_predicted = p.at("size_predicted_mm").get<double>();
            r.predictions.push_back(std::move(q));
        }
    }
    return r;
}

}  // namespace tumorsearch::retrieval
