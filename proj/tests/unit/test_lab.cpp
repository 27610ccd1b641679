#include <gtest/gtest.h>

#include <cstdlib>

#include "support.hpp"
#include "tumorsearch/lab/experiment.hpp"
#include "tumorsearch/lab/sweeps.hpp"

using namespace tumorsearch;
using namespace tumorsearch::lab;

namespace {

/// Whole pipeline in a few seconds: ten small images, a 4-channel model and
/// one short epoch.
ExperimentConfig tiny_experiment(const fs::path& root) {
    ExperimentConfig c = ExperimentConfig::desk();
    c.seed = 11;
    c.propagate_seed();
    c.phantom.volume_shape = Shape3{{32, 32, 32}};
    c.phantom.n_images = 10;
    c.phantom.min_size_mm = 4.0;
    c.phantom.max_size_mm = 8.0;
    c.model.channels = 4;
    c.model.n_resblocks = 1;
    c.train.epochs = 1;
    c.train.batches_per_epoch = 2;
    c.train.patch_size = {16, 16, 16};
    c.train.lr_drop_epochs = {};
    c.retrieval.k_sweep = {1, 2, 3};
    c.viz.projection.n_iterations = 250;
    c.viz.tsne_split = "all";
    c.output_root = root;
    return c;
}

PipelineOptions quiet() {
    PipelineOptions o;
    o.log = nullptr;
    return o;
}

std::map<std::string, std::string> statuses(const PipelineResult& r) {
    std::map<std::string, std::string> m;
    for (const auto& s : r.stages) m[s.name] = s.status;
    return m;
}

}  // namespace

TEST(ExperimentConfig, JsonRoundTrip) {
    ExperimentConfig c = ExperimentConfig::desk();
    c.seed = 3;
    c.propagate_seed();
    c.retrieval.k = 7;
    c.viz.panel_queries = {"img0001_t0"};
    const nlohmann::json j = c;
    EXPECT_EQ(nlohmann::json(experiment_from_json(j)), j);
    EXPECT_EQ(ExperimentConfig::desk().model.channels, 16);
}

TEST(ExperimentConfig, RejectsUnknownKeysByName) {
    auto field_of = [](const nlohmann::json& j) -> std::string {
        try {
            experiment_from_json(j);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return "";
    };
    EXPECT_EQ(field_of({{"sede", 1}}), "sede");
    EXPECT_EQ(field_of({{"retrieval", {{"kk", 5}}}}), "retrieval.kk");
    EXPECT_EQ(field_of({{"viz", {{"perplexity", 5}}}}), "viz.perplexity");
    EXPECT_EQ(field_of({{"retrieval", {{"k", 0}}}}), "retrieval.k");
    EXPECT_EQ(field_of({{"model", {{"n_regions", 5}}}}), "model.n_regions");
    EXPECT_THROW(experiment_from_json({{"train", {{"epochs", 0}}}}), ConfigError);
}

TEST(ExperimentConfig, GlobalSeedReachesEveryModuleUnlessOverridden) {
    const auto c = experiment_from_json({{"seed", 42}});
    EXPECT_EQ(c.phantom.seed, 42u);
    EXPECT_EQ(c.model.seed, 42u);
    EXPECT_EQ(c.train.seed, 42u);
    EXPECT_EQ(c.retrieval.split_seed, 42u);
    EXPECT_EQ(c.retrieval.distortion.seed, 42u);
    EXPECT_EQ(c.viz.projection.seed, 42u);

    const auto o = experiment_from_json({{"seed", 42}, {"model", {{"seed", 7}}}, {"phantom", {{"n_images", 20}}}});
    EXPECT_EQ(o.model.seed, 7u);
    EXPECT_EQ(o.phantom.seed, 42u);
    EXPECT_EQ(o.phantom.n_images, 20);
    EXPECT_EQ(o.train.seed, 42u);
}

TEST(ExperimentConfig, EnvironmentOverridesOutputRoot) {
    ExperimentConfig c;
    c.output_root = "configured";
    ::unsetenv(kOutputRootEnv);
    apply_environment(c);
    EXPECT_EQ(c.output_root, fs::path("configured"));
    ::setenv(kOutputRootEnv, "/tmp/elsewhere", 1);
    apply_environment(c);
    EXPECT_EQ(c.output_root, fs::path("/tmp/elsewhere"));
    ::unsetenv(kOutputRootEnv);
}

TEST(Pipeline, RunsNineStagesAndResumesFromStamps) {
    tstest::TempDir dir("pipeline");
    const auto cfg = tiny_experiment(dir / "exp");
    const auto first = run_pipeline(cfg, quiet());
    ASSERT_EQ(first.stages.size(), 9u);
    for (const auto& s : first.stages) EXPECT_EQ(s.status, "completed") << s.name;
    const auto summary = nlohmann::json::parse(io::read_text(dir / "exp" / "summary.json"));
    EXPECT_EQ(summary["completed_stages"], 9);
    EXPECT_EQ(nlohmann::json::parse(io::read_text(dir / "exp" / "config.json")), nlohmann::json(cfg));
    for (const auto& [stage, outputs] : summary["artifacts"].items()) {
        for (const auto& o : outputs) EXPECT_TRUE(fs::exists(dir / "exp" / o.get<std::string>())) << o;
    }
    ASSERT_TRUE(first.knn);
    ASSERT_TRUE(summary["metrics"].contains("distortion_deltas"));
    ASSERT_TRUE(first.distortion);
    EXPECT_EQ(first.distortion->deltas.size(), first.distortion->clean.tasks.size());
    EXPECT_EQ(retrieval::to_json(*first.distortion).dump(),
              nlohmann::json::parse(io::read_text(dir / "exp" / "reports" / "distortion.json")).dump());

    // nothing changed: every stage is cached
    for (const auto& [name, status] : statuses(run_pipeline(cfg, quiet()))) EXPECT_EQ(status, "cached") << name;

    // viz outputs deleted: only the viz stages rerun
    fs::remove_all(dir / "exp" / "viz");
    const auto again = statuses(run_pipeline(cfg, quiet()));
    for (const auto& s : stage_names()) {
        const bool viz_stage = s == "tsne" || s == "panels";
        EXPECT_EQ(again.at(s), viz_stage ? "completed" : "cached") << s;
    }

    // a changed distortion seed invalidates only the distortion stage
    auto edited = cfg;
    edited.retrieval.distortion.seed = 99;
    const auto third = statuses(run_pipeline(edited, quiet()));
    for (const auto& s : stage_names()) EXPECT_EQ(third.at(s), s == "eval_distortion" ? "completed" : "cached") << s;
}

TEST(Pipeline, EqualSeedsGiveEqualReports) {
    tstest::TempDir dir("pipeline_seed");
    auto a = tiny_experiment(dir / "a");
    auto b = tiny_experiment(dir / "b");
    auto opts = quiet();
    opts.stop_after = "eval_knn";
    const auto ra = run_pipeline(a, opts), rb = run_pipeline(b, opts);
    ASSERT_EQ(ra.stages.size(), 5u);
    EXPECT_EQ(retrieval::to_json(*ra.knn), retrieval::to_json(*rb.knn));
    EXPECT_EQ(io::hash_file(dir / "a" / "train" / "final.ckpt"), io::hash_file(dir / "b" / "train" / "final.ckpt"));
}

TEST(Pipeline, FailureNamesTheStageAndKeepsEarlierOutputs) {
    tstest::TempDir dir("pipeline_fail");
    auto cfg = tiny_experiment(dir / "exp");
    cfg.viz.panel_queries = {"no_such_tumor"};
    try {
        run_pipeline(cfg, quiet());
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "panels");
    }
    EXPECT_TRUE(fs::exists(dir / "exp" / "stamps" / "tsne.json"));
    EXPECT_TRUE(fs::exists(dir / "exp" / "train" / "final.ckpt"));
    EXPECT_FALSE(fs::exists(dir / "exp" / "stamps" / "panels.json"));
}

TEST(ChannelSweep, RowsPerValueAndValidation) {
    tstest::TempDir dir("channels");
    const auto cfg = tiny_experiment(dir / "exp");
    EXPECT_THROW(channel_sweep(cfg, {}, quiet()), ConfigError);
    EXPECT_THROW(channel_sweep(cfg, {4, 4}, quiet()), ConfigError);

    const auto report = channel_sweep(cfg, {4, 6}, quiet());
    ASSERT_EQ(report.rows.size(), 2u);
    EXPECT_EQ(report.rows[0].channels, 4);
    EXPECT_EQ(report.rows[1].channels, 6);
    const std::string csv = io::read_text(report.table_csv);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);

    // a single value reproduces the plain pipeline's metrics
    auto opts = quiet();
    opts.stop_after = "eval_knn";
    auto plain = cfg;
    plain.output_root = dir / "plain";
    EXPECT_EQ(retrieval::to_json(*run_pipeline(plain, opts).knn), retrieval::to_json(report.rows[0].knn));
}

TEST(LabAblation, ComparisonTableHasOneRowPerSubset) {
    tstest::TempDir dir("lab_ablate");
    const auto cfg = tiny_experiment(dir / "exp");
    const auto report = ablation(cfg, {{Task::segmentation}, {kAllTasks.begin(), kAllTasks.end()}}, quiet());
    ASSERT_EQ(report.rows.size(), 2u);
    EXPECT_EQ(report.rows[0].name, "segmentation");
    EXPECT_EQ(report.rows[1].name, "all");
    for (const auto& row : report.rows) EXPECT_TRUE(row.metrics.count("accuracy_type"));
    const std::string csv = io::read_text(dir / "exp" / "ablation" / "comparison.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "row,accuracy_type,accuracy_region,accuracy_left_right,accuracy_front_rear,accuracy_upper_lower,size_rmse_mm");
}
