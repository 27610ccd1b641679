#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/lab/pipeline.hpp"
#include "tumorsearch/training/ablation.hpp"

namespace tumorsearch::lab {

/// Column names shared by the comparison tables.
inline std::vector<std::string> knn_columns() {
    std::vector<std::string> cols;
    for (Task t : kClassificationTasks) cols.push_back("accuracy_" + std::string(to_string(t)));
    cols.push_back("size_rmse_mm");
    return cols;
}

inline std::vector<double> knn_values(const retrieval::KnnEvalReport& r) {
    std::vector<double> v;
    for (const auto& c : knn_columns()) v.push_back(viz::report_metric(r, c));
    return v;
}

inline std::map<std::string, double> knn_metric_map(const retrieval::KnnEvalReport& r) {
    std::map<std::string, double> m;
    for (const auto& c : knn_columns()) m[c] = viz::report_metric(r, c);
    return m;
}

struct ChannelSweepRow {
    int channels = 0;
    fs::path root;
    retrieval::KnnEvalReport knn;
};

struct ChannelSweepReport {
    std::vector<ChannelSweepRow> rows;
    fs::path table_csv;
};

/// One pipeline (through eval_knn) per channel count, each in its own
/// subdirectory and with identical seeds.
inline ChannelSweepReport channel_sweep(const ExperimentConfig& base, const std::vector<int>& channels,
                                        PipelineOptions options = {}) {
    if (channels.empty()) throw ConfigError("channels", "channel list must not be empty");
    std::set<int> seen;
    for (int c : channels) {
        if (c < 2) throw ConfigError("channels", "channel counts must be >= 2");
        if (!seen.insert(c).second) throw ConfigError("channels", "duplicate channel count " + std::to_string(c));
    }
    ChannelSweepReport report;
    std::vector<std::pair<std::string, std::vector<double>>> table;
    for (int c : channels) {
        ExperimentConfig cfg = base;
        cfg.model.channels = c;
        cfg.output_root = base.output_root / "channels" / ("C" + std::to_string(c));
        options.stop_after = "eval_knn";
        auto run = run_pipeline(cfg, options);
        if (!run.knn) throw Error("channel sweep entry C=" + std::to_string(c) + " produced no KNN report");
        table.push_back({std::to_string(c), knn_values(*run.knn)});
        report.rows.push_back({c, cfg.output_root, *run.knn});
    }
    report.table_csv = base.output_root / "channels" / "comparison.csv";
    viz::emit_comparison_table(knn_columns(), table, report.table_csv);
    return report;
}

/// Task-subset ablation on the experiment's dataset, scored by KNN on the
/// test split.
inline training::AblationReport ablation(const ExperimentConfig& base, const std::vector<training::TaskSubset>& subsets,
                                         PipelineOptions options = {}) {
    options.stop_after = "split";
    ExperimentConfig data_cfg = base;
    data_cfg.output_root = base.output_root / "ablation";
    Pipeline data(data_cfg, options);
    data.run();
    const auto manifest = phantom::load_manifest(data.layout().split_manifest());
    const auto out_dir = data_cfg.output_root / "runs";
    const auto& r = base.retrieval;
    auto metrics = [&](const fs::path& checkpoint) {
        const auto ck = model::load_checkpoint<float>(checkpoint);
        const retrieval::ExtractOptions opts{r.inference_patch};
        const auto train = retrieval::embed_dataset(ck.net, ck.fingerprint, manifest, "train", opts);
        const auto test = retrieval::embed_dataset(ck.net, ck.fingerprint, manifest, "test", opts);
        retrieval::save_table(train, checkpoint.parent_path() / "train.tbl");
        retrieval::save_table(test, checkpoint.parent_path() / "test.tbl");
        retrieval::EvalOptions eval;
        eval.index.l2_normalize = r.l2_normalize;
        const auto report = retrieval::eval_knn(train, test, r.k, retrieval::default_eval_tasks(), eval);
        io::write_text(checkpoint.parent_path() / ("knn_k" + std::to_string(r.k) + ".json"),
                       retrieval::to_json(report).dump(2) + "\n");
        return knn_metric_map(report);
    };
    const auto report = training::ablation_suite(
        manifest, base.model, base.train, subsets, out_dir, metrics,
        [&](const std::string& name, const training::EpochRecord& e) {
            if (options.log) options.log("[ablate " + name + "] epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.mean.total));
        });
    std::vector<std::pair<std::string, std::vector<double>>> table;
    for (const auto& row : report.rows) {
        std::vector<double> values;
        for (const auto& c : knn_columns()) values.push_back(row.metrics.at(c));
        table.push_back({row.name, values});
    }
    viz::emit_comparison_table(knn_columns(), table, data_cfg.output_root / "comparison.csv");
    io::write_text(data_cfg.output_root / "ablation.json", training::to_json(report).dump(2) + "\n");
    return report;
}

}  // namespace tumorsearch::lab
