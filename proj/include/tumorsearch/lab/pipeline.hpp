#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/lab/experiment.hpp"
#include "tumorsearch/phantom/generator.hpp"
#include "tumorsearch/phantom/split.hpp"
#include "tumorsearch/retrieval/extract.hpp"
#include "tumorsearch/training/trainer.hpp"
#include "tumorsearch/viz/emit.hpp"

namespace tumorsearch::lab {

namespace fs = std::filesystem;

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"generate", "split",           "train", "embed", "eval_knn",
                                                "sweep_k",  "eval_distortion", "tsne",  "panels"};
    return names;
}

/// A pipeline stage failed; partial outputs are left in place.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error("stage '" + stage + "' failed: " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct StageResult {
    std::string name;
    /// "completed" when run now, "cached" when skipped via its stamp.
    std::string status;
    std::string input_hash;
    std::vector<std::string> outputs;  // relative to the experiment root
    double seconds = 0.0;
};

struct PipelineOptions {
    /// Last stage to run; empty runs everything.
    std::string stop_after;
    std::function<void(const std::string&)> log = [](const std::string& line) { std::clog << line << std::endl; };
};

struct PipelineResult {
    fs::path root;
    std::vector<StageResult> stages;
    nlohmann::json summary;
    std::optional<retrieval::KnnEvalReport> knn;
    std::optional<retrieval::DistortionReport> distortion;
};

/// Fixed locations of every artifact inside an experiment directory.
struct Layout {
    fs::path root;
    fs::path data() const { return root / "data"; }
    fs::path raw_manifest() const { return data() / "manifest.json"; }
    fs::path split_manifest() const { return data() / "split.json"; }
    fs::path train_dir() const { return root / "train"; }
    fs::path checkpoint() const { return train_dir() / "final.ckpt"; }
    fs::path train_table() const { return root / "tables" / "train.tbl"; }
    fs::path test_table() const { return root / "tables" / "test.tbl"; }
    fs::path knn_report(int k) const { return root / "reports" / ("knn_k" + std::to_string(k) + ".json"); }
    fs::path sweep_dir() const { return root / "reports" / "sweep"; }
    fs::path sweep_plot() const { return root / "reports" / "k_sweep"; }
    fs::path distortion_report() const { return root / "reports" / "distortion.json"; }
    fs::path tsne() const { return root / "viz" / "tsne"; }
    fs::path panel(const std::string& id) const { return root / "viz" / ("panel_" + id); }
    fs::path stamp(const std::string& stage) const { return root / "stamps" / (stage + ".json"); }
    fs::path config() const { return root / "config.json"; }
    fs::path summary() const { return root / "summary.json"; }
};

/// Runs (or resumes) the full experiment. Each stage's stamp holds a hash of
/// its configuration and its upstream stamps; a stage is skipped when the
/// hash matches and all of its outputs still exist.
class Pipeline {
public:
    Pipeline(ExperimentConfig config, PipelineOptions options = {})
        : config_(std::move(config)), options_(std::move(options)), layout_{config_.output_root} {
        config_.validate();
    }

    const Layout& layout() const { return layout_; }

    PipelineResult run() {
        fs::create_directories(layout_.root);
        io::write_text(layout_.config(), nlohmann::json(config_).dump(2) + "\n");
        result_ = {};
        result_.root = layout_.root;
        hashes_.clear();
        stopped_ = false;

        const auto& r = config_.retrieval;
        step("generate", {{"phantom", config_.phantom}}, {}, [&] {
            phantom::generate_dataset(config_.phantom, layout_.data());
            return std::vector<fs::path>{layout_.raw_manifest()};
        });
        step("split", {{"test_fraction", r.test_fraction}, {"seed", r.split_seed}}, {"generate"}, [&] {
            auto m = phantom::split_dataset(phantom::load_manifest(layout_.raw_manifest()), r.test_fraction, r.split_seed);
            phantom::save_manifest(m, layout_.split_manifest());
            return std::vector<fs::path>{layout_.split_manifest()};
        });
        step("train", {{"model", config_.model}, {"train", config_.train}}, {"split"}, [&] {
            const auto run = training::train(manifest(), config_.model, config_.train, layout_.train_dir(),
                                             [&](const training::EpochRecord& e) {
                                                 log("train epoch " + std::to_string(e.epoch) + " loss " +
                                                     std::to_string(e.mean.total) + " (" +
                                                     std::to_string(e.seconds) + " s)");
                                             });
            return std::vector<fs::path>{run.final_checkpoint, run.best_checkpoint, run.log_path};
        });
        step("embed", {{"inference_patch", r.inference_patch}}, {"train"}, [&] {
            const auto ck = model::load_checkpoint<float>(layout_.checkpoint());
            const retrieval::ExtractOptions opts{r.inference_patch};
            retrieval::save_table(retrieval::embed_dataset(ck.net, ck.fingerprint, manifest(), "train", opts),
                                  layout_.train_table());
            retrieval::save_table(retrieval::embed_dataset(ck.net, ck.fingerprint, manifest(), "test", opts),
                                  layout_.test_table());
            return std::vector<fs::path>{layout_.train_table(), layout_.test_table()};
        });
        step("eval_knn", {{"k", r.k}, {"l2_normalize", r.l2_normalize}}, {"embed"}, [&] {
            const auto report = retrieval::eval_knn(train_table(), test_table(), r.k,
                                                    retrieval::default_eval_tasks(), eval_options());
            io::write_text(layout_.knn_report(r.k), retrieval::to_json(report).dump(2) + "\n");
            return std::vector<fs::path>{layout_.knn_report(r.k)};
        });
        step("sweep_k", {{"k_sweep", r.k_sweep}, {"l2_normalize", r.l2_normalize}}, {"embed"}, [&] {
            const auto reports = retrieval::sweep_k(train_table(), test_table(), r.k_sweep,
                                                    retrieval::default_eval_tasks(), eval_options());
            std::vector<fs::path> out;
            for (const auto& rep : reports) {
                const auto path = layout_.sweep_dir() / ("k" + std::to_string(rep.k) + ".json");
                io::write_text(path, retrieval::to_json(rep).dump(2) + "\n");
                out.push_back(path);
            }
            if (reports.size() >= 2) {
                out.push_back(viz::emit_k_sweep(reports, layout_.sweep_plot()));
                out.push_back(viz::with_ext(layout_.sweep_plot(), ".png"));
            }
            return out;
        });
        step("eval_distortion",
             {{"k", r.k}, {"distortion", r.distortion}, {"l2_normalize", r.l2_normalize}, {"inference_patch", r.inference_patch}},
             {"embed"}, [&] {
                 const auto ck = model::load_checkpoint<float>(layout_.checkpoint());
                 const auto report = retrieval::eval_distortion(ck.net, ck.fingerprint, manifest(), r.distortion, r.k,
                                                                train_table(), test_table(),
                                                                retrieval::ExtractOptions{r.inference_patch}, eval_options());
                 io::write_text(layout_.distortion_report(), retrieval::to_json(report).dump(2) + "\n");
                 return std::vector<fs::path>{layout_.distortion_report()};
             });
        step("tsne", {{"projection", config_.viz.projection}, {"split", config_.viz.tsne_split},
                      {"clamp", config_.viz.clamp_perplexity}},
             {"embed"}, [&] {
                 auto table = test_table();
                 if (config_.viz.tsne_split == "all") {
                     auto all = train_table();
                     all.rows.insert(all.rows.end(), table.rows.begin(), table.rows.end());
                     table = std::move(all);
                 }
                 auto projection = config_.viz.projection;
                 if (config_.viz.clamp_perplexity) {
                     projection.perplexity = viz::ProjectionConfig::clamp_perplexity(projection.perplexity, table.rows.size());
                 }
                 const auto coords = viz::project_2d(viz::to_points(embeddings(table)), projection);
                 const auto csv = viz::emit_scatter(coords, table, layout_.tsne());
                 return std::vector<fs::path>{csv, viz::with_ext(layout_.tsne(), ".png")};
             });
        step("panels", {{"k", config_.viz.panel_k}, {"queries", config_.viz.panel_queries}}, {"embed"}, [&] {
            const auto table = test_table();
            std::vector<std::string> queries = config_.viz.panel_queries;
            if (queries.empty()) queries = default_panel_queries(table);
            std::vector<fs::path> out;
            const auto m = manifest();
            for (const auto& id : queries) {
                out.push_back(viz::emit_retrieval_panel(m, table, id, config_.viz.panel_k, layout_.panel(id)));
                out.push_back(viz::with_ext(layout_.panel(id), ".png"));
            }
            return out;
        });
        write_summary();
        return result_;
    }

    static std::vector<std::string> default_panel_queries(const retrieval::EmbeddingTable& table) {
        std::vector<std::string> ids;
        for (TumorType t : {TumorType::schwannoma, TumorType::metastasis}) {
            for (const auto& row : table.rows) {
                if (row.labels.type == t) {
                    ids.push_back(row.tumor_id);
                    break;
                }
            }
        }
        return ids;
    }

private:
    void log(const std::string& line) const {
        if (options_.log) options_.log(line);
    }

    template <typename Fn>
    void step(const std::string& name, const nlohmann::json& inputs, const std::vector<std::string>& upstream, Fn&& body) {
        if (stopped_) return;
        nlohmann::json key{{"stage", name}, {"inputs", inputs}};
        for (const auto& u : upstream) key["upstream"][u] = hashes_.at(u);
        const std::string hash = io::hash_hex(key.dump());
        hashes_[name] = hash;

        StageResult res{name, "completed", hash, {}, 0.0};
        const fs::path stamp = layout_.stamp(name);
        if (fs::exists(stamp)) {
            try {
                const auto j = nlohmann::json::parse(io::read_text(stamp));
                bool intact = j.at("input_hash").get<std::string>() == hash;
                std::vector<std::string> outputs = j.at("outputs").get<std::vector<std::string>>();
                for (const auto& o : outputs) intact = intact && fs::exists(layout_.root / o);
                if (intact) {
                    res.status = "cached";
                    res.outputs = std::move(outputs);
                    log("[" + name + "] up to date");
                    result_.stages.push_back(std::move(res));
                    stopped_ = name == options_.stop_after;
                    return;
                }
            } catch (const std::exception&) {
                // unreadable stamp: rerun the stage
            }
        }
        log("[" + name + "] running");
        const auto started = std::chrono::steady_clock::now();
        try {
            fs::remove(stamp);
            for (const auto& p : body()) res.outputs.push_back(fs::relative(p, layout_.root).generic_string());
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        io::write_text(stamp, nlohmann::json{{"stage", name}, {"input_hash", hash}, {"outputs", res.outputs}}.dump(2) + "\n");
        log("[" + name + "] done in " + std::to_string(res.seconds) + " s");
        result_.stages.push_back(std::move(res));
        stopped_ = name == options_.stop_after;
    }

    phantom::DatasetManifest manifest() const { return phantom::load_manifest(layout_.split_manifest()); }
    retrieval::EmbeddingTable train_table() const { return retrieval::load_table(layout_.train_table()); }
    retrieval::EmbeddingTable test_table() const { return retrieval::load_table(layout_.test_table()); }

    retrieval::EvalOptions eval_options() const {
        retrieval::EvalOptions o;
        o.index.l2_normalize = config_.retrieval.l2_normalize;
        return o;
    }

    static std::vector<std::vector<float>> embeddings(const retrieval::EmbeddingTable& table) {
        std::vector<std::vector<float>> out;
        for (const auto& row : table.rows) out.push_back(row.embedding);
        return out;
    }

    void write_summary() {
        nlohmann::json stages = nlohmann::json::array();
        nlohmann::json artifacts = nlohmann::json::object();
        for (const auto& s : result_.stages) {
            stages.push_back({{"name", s.name},
                              {"status", s.status},
                              {"input_hash", s.input_hash},
                              {"seconds", s.seconds},
                              {"outputs", s.outputs}});
            artifacts[s.name] = s.outputs;
        }
        nlohmann::json metrics = nlohmann::json::object();
        const int k = config_.retrieval.k;
        if (fs::exists(layout_.knn_report(k)) && hashes_.count("eval_knn")) {
            const auto report = retrieval::report_from_json(nlohmann::json::parse(io::read_text(layout_.knn_report(k))));
            metrics["knn"] = retrieval::to_json(report, false);
            result_.knn = report;
        }
        if (fs::exists(layout_.distortion_report()) && hashes_.count("eval_distortion")) {
            const auto j = nlohmann::json::parse(io::read_text(layout_.distortion_report()));
            metrics["distortion_deltas"] = j.at("deltas");
            result_.distortion = retrieval::distortion_report_from_json(j);
        }
        result_.summary = {{"config", "config.json"},
                           {"seed", config_.seed},
                           {"stages", stages},
                           {"completed_stages", result_.stages.size()},
                           {"artifacts", artifacts},
                           {"metrics", metrics}};
        io::write_text(layout_.summary(), result_.summary.dump(2) + "\n");
    }

    ExperimentConfig config_;
    PipelineOptions options_;
    Layout layout_;
    PipelineResult result_;
    std::map<std::string, std::string> hashes_;
    bool stopped_ = false;
};

inline PipelineResult run_pipeline(const ExperimentConfig& config, PipelineOptions options = {}) {
    return Pipeline(config, std::move(options)).run();
}

}  // namespace tumorsearch::lab
