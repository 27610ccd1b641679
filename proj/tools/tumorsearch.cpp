// Command-line front end: phantom data, training, retrieval, figures and
// end-to-end experiments.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tumorsearch/lab/sweeps.hpp"
#include "tumorsearch/retrieval/server.hpp"

namespace fs = std::filesystem;
using namespace tumorsearch;

namespace {

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(io::read_text(path)); }

void write_json(const fs::path& path, const nlohmann::json& j) { io::write_text(path, j.dump(2) + "\n"); }

/// "1:10" -> 1..10; "1,3,5" -> {1, 3, 5}.
std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    const auto colon = text.find(':');
    if (colon != std::string::npos) {
        const int lo = std::stoi(text.substr(0, colon));
        const int hi = std::stoi(text.substr(colon + 1));
        if (hi < lo) throw ConfigError("range", "empty range '" + text + "'");
        for (int k = lo; k <= hi; ++k) out.push_back(k);
        return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

template <typename T>
T load_config(const std::string& path) {
    if (path.empty()) return T{};
    return read_json(path).get<T>();
}

lab::ExperimentConfig experiment(const std::string& path, const std::optional<std::uint64_t>& seed) {
    lab::ExperimentConfig cfg = lab::load_experiment(path);
    if (seed) {
        cfg.seed = *seed;
        cfg.propagate_seed();
    }
    lab::apply_environment(cfg);
    cfg.validate();
    return cfg;
}

retrieval::NeighborServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tumor retrieval toolkit"};
    app.require_subcommand(1);

    // phantom
    auto* phantom_cmd = app.add_subcommand("phantom", "Synthetic dataset tools");
    phantom_cmd->require_subcommand(1);
    std::string ph_config, ph_out, split_manifest, split_out;
    double split_fraction = 0.2;
    std::uint64_t split_seed = 0;
    auto* gen = phantom_cmd->add_subcommand("generate", "Generate a phantom suite");
    gen->add_option("--config", ph_config, "Phantom config JSON (defaults if omitted)");
    gen->add_option("--out", ph_out, "Output directory")->required();
    auto* split = phantom_cmd->add_subcommand("split", "Assign train/test splits");
    split->add_option("--manifest", split_manifest, "Manifest to split")->required()->check(CLI::ExistingFile);
    split->add_option("--test-fraction", split_fraction, "Fraction of images in the test split");
    split->add_option("--seed", split_seed, "Shuffle seed");
    split->add_option("--out", split_out, "Output manifest (default: overwrite --manifest)");

    // train / ablate
    std::string manifest_path, model_cfg_path, train_cfg_path, out_dir, subsets_path;
    int ablate_k = 5;
    auto* train_cmd = app.add_subcommand("train", "Train a multitask network");
    train_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--model-config", model_cfg_path, "Model config JSON");
    train_cmd->add_option("--train-config", train_cfg_path, "Train config JSON");
    train_cmd->add_option("--out", out_dir)->required();
    auto* ablate_cmd = app.add_subcommand("ablate", "Train one network per task subset");
    ablate_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    ablate_cmd->add_option("--model-config", model_cfg_path);
    ablate_cmd->add_option("--train-config", train_cfg_path);
    ablate_cmd->add_option("--subsets", subsets_path, "JSON array of task subsets")->required()->check(CLI::ExistingFile);
    ablate_cmd->add_option("--k", ablate_k, "K for the KNN columns");
    ablate_cmd->add_option("--out", out_dir)->required();

    // retrieval
    std::string checkpoint, split_name = "all", out_path, train_table, test_table, ks_text = "1:10", table_path,
                                addr = "127.0.0.1:8080";
    int k = 5, patch = 32;
    bool l2 = false;
    retrieval::DistortionParams distortion;
    auto* embed = app.add_subcommand("embed", "Embed the tumors of a split");
    embed->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    embed->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    embed->add_option("--split", split_name, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    embed->add_option("--patch", patch, "Minimum inference crop side");
    embed->add_option("--out", out_path, "Output table file")->required();
    auto* eval_cmd = app.add_subcommand("eval-knn", "KNN evaluation of a test table against a train table");
    eval_cmd->add_option("--train-table", train_table)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--test-table", test_table)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--k", k);
    eval_cmd->add_flag("--l2-normalize", l2, "Unit-normalize embeddings first");
    eval_cmd->add_option("--out", out_path, "Report JSON (default: stdout)");
    auto* sweep_cmd = app.add_subcommand("sweep-k", "KNN evaluation over several K");
    sweep_cmd->add_option("--train-table", train_table)->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--test-table", test_table)->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--ks", ks_text, "Range lo:hi or comma list");
    sweep_cmd->add_flag("--l2-normalize", l2);
    sweep_cmd->add_option("--out", out_dir, "Directory for one report per K")->required();
    auto* distort_cmd = app.add_subcommand("eval-distort", "Clean vs distorted-box evaluation");
    distort_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    distort_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    distort_cmd->add_option("--sigma-scale", distortion.sigma_log2_scale, "Std of log2 scale");
    distort_cmd->add_option("--sigma-trans", distortion.sigma_translation_fraction, "Std of shift / side");
    distort_cmd->add_option("--seed", distortion.seed);
    distort_cmd->add_option("--k", k);
    distort_cmd->add_option("--patch", patch);
    distort_cmd->add_option("--out", out_path, "Report JSON (default: stdout)");
    auto* serve_cmd = app.add_subcommand("serve", "Serve neighbor queries over HTTP");
    serve_cmd->add_option("--table", table_path)->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--addr", addr, "host:port");

    // viz
    auto* viz_cmd = app.add_subcommand("viz", "Figures");
    viz_cmd->require_subcommand(1);
    std::string reports_dir, tumor_id;
    viz::ProjectionConfig projection;
    std::string method = "tsne";
    auto* tsne = viz_cmd->add_subcommand("tsne", "2D projection scatter of a table");
    tsne->add_option("--table", table_path)->required()->check(CLI::ExistingFile);
    tsne->add_option("--out", out_path, "Output path stem (.png and .csv)")->required();
    tsne->add_option("--perplexity", projection.perplexity);
    tsne->add_option("--iterations", projection.n_iterations);
    tsne->add_option("--seed", projection.seed);
    tsne->add_option("--method", method)->check(CLI::IsMember({"tsne", "pca-fallback"}));
    auto* ksweep = viz_cmd->add_subcommand("ksweep", "Metric curves over K");
    ksweep->add_option("--reports-dir", reports_dir)->required()->check(CLI::ExistingDirectory);
    ksweep->add_option("--out", out_path)->required();
    auto* panel = viz_cmd->add_subcommand("panel", "Query and neighbor slice montage");
    panel->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    panel->add_option("--table", table_path)->required()->check(CLI::ExistingFile);
    panel->add_option("--tumor-id", tumor_id)->required();
    panel->add_option("--k", k = 2);
    panel->add_option("--out", out_path)->required();

    // lab
    auto* lab_cmd = app.add_subcommand("lab", "End-to-end experiments");
    lab_cmd->require_subcommand(1);
    std::string exp_path, channels_text;
    std::optional<std::uint64_t> seed_override;
    auto* run = lab_cmd->add_subcommand("run", "Run or resume the full pipeline");
    auto* sweep_ch = lab_cmd->add_subcommand("sweep-channels", "One pipeline per channel count");
    auto* lab_ablate = lab_cmd->add_subcommand("ablate", "Task-subset ablation");
    for (auto* c : {run, sweep_ch, lab_ablate}) {
        c->add_option("--config", exp_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
        c->add_option("--seed", seed_override, "Override the global seed");
    }
    sweep_ch->add_option("--channels", channels_text, "Comma-separated channel counts")->required();
    lab_ablate->add_option("--subsets", subsets_path)->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = load_config<phantom::PhantomConfig>(ph_config);
            cfg.validate();
            const auto m = phantom::generate_dataset(cfg, ph_out);
            std::clog << "generated " << m.images.size() << " images, " << m.tumor_count() << " tumors in " << ph_out << "\n";
        } else if (split->parsed()) {
            const auto m = phantom::split_dataset(phantom::load_manifest(split_manifest), split_fraction, split_seed);
            phantom::save_manifest(m, split_out.empty() ? split_manifest : split_out);
        } else if (train_cmd->parsed()) {
            const auto report = training::train(phantom::load_manifest(manifest_path), load_config<model::ModelConfig>(model_cfg_path),
                                                load_config<training::TrainConfig>(train_cfg_path), out_dir,
                                                [](const training::EpochRecord& e) {
                                                    std::cout << training::epoch_json(e).dump() << std::endl;
                                                });
            std::clog << "final loss " << report.final_loss << ", checkpoint " << report.final_checkpoint << "\n";
        } else if (ablate_cmd->parsed()) {
            const auto manifest = phantom::load_manifest(manifest_path);
            bool has_test = false;
            for (const auto& image : manifest.images) has_test |= image.split == phantom::Split::test;
            training::MetricsFn metrics;
            if (has_test) {
                metrics = [&](const fs::path& ck_path) {
                    const auto ck = model::load_checkpoint<float>(ck_path);
                    const auto tr = retrieval::embed_dataset(ck.net, ck.fingerprint, manifest, "train");
                    const auto te = retrieval::embed_dataset(ck.net, ck.fingerprint, manifest, "test");
                    return lab::knn_metric_map(retrieval::eval_knn(tr, te, ablate_k));
                };
            }
            const auto report = training::ablation_suite(
                manifest, load_config<model::ModelConfig>(model_cfg_path), load_config<training::TrainConfig>(train_cfg_path),
                training::subsets_from_json(read_json(subsets_path)), out_dir, metrics,
                [](const std::string& name, const training::EpochRecord& e) {
                    std::clog << "[" << name << "] epoch " << e.epoch << " loss " << e.mean.total << "\n";
                });
            write_json(fs::path(out_dir) / "ablation.json", training::to_json(report));
            std::cout << training::to_json(report).dump(2) << std::endl;
        } else if (embed->parsed()) {
            const auto table = retrieval::embed_dataset(checkpoint, phantom::load_manifest(manifest_path), split_name,
                                                        retrieval::ExtractOptions{patch});
            retrieval::save_table(table, out_path);
            std::clog << "embedded " << table.rows.size() << " tumors\n";
        } else if (eval_cmd->parsed()) {
            retrieval::EvalOptions opts;
            opts.index.l2_normalize = l2;
            const auto report = retrieval::eval_knn(retrieval::load_table(train_table), retrieval::load_table(test_table), k,
                                                    retrieval::default_eval_tasks(), opts);
            if (out_path.empty()) {
                std::cout << retrieval::to_json(report).dump(2) << std::endl;
            } else {
                write_json(out_path, retrieval::to_json(report));
            }
        } else if (sweep_cmd->parsed()) {
            retrieval::EvalOptions opts;
            opts.index.l2_normalize = l2;
            const auto reports = retrieval::sweep_k(retrieval::load_table(train_table), retrieval::load_table(test_table),
                                                    parse_int_list(ks_text), retrieval::default_eval_tasks(), opts);
            for (const auto& r : reports) write_json(fs::path(out_dir) / ("k" + std::to_string(r.k) + ".json"), retrieval::to_json(r));
            std::clog << "wrote " << reports.size() << " reports to " << out_dir << "\n";
        } else if (distort_cmd->parsed()) {
            distortion.validate();
            const auto report = retrieval::eval_distortion(checkpoint, phantom::load_manifest(manifest_path), distortion, k,
                                                           retrieval::ExtractOptions{patch});
            if (out_path.empty()) {
                std::cout << retrieval::to_json(report).dump(2) << std::endl;
            } else {
                write_json(out_path, retrieval::to_json(report));
            }
        } else if (serve_cmd->parsed()) {
            const auto [host, port] = retrieval::parse_address(addr);
            retrieval::NeighborServer server(retrieval::load_table(table_path));
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            if (server.bind(host, port) < 0) throw IoError("cannot bind " + addr);
            std::clog << "serving " << server.index().size() << " tumors on " << host << ":" << server.port() << "\n";
            server.serve();
            g_server = nullptr;
        } else if (tsne->parsed()) {
            projection.method = viz::projection_method_from_string(method);
            const auto table = retrieval::load_table(table_path);
            std::vector<std::vector<float>> rows;
            for (const auto& r : table.rows) rows.push_back(r.embedding);
            viz::emit_scatter(viz::project_2d(viz::to_points(rows), projection), table, out_path);
        } else if (ksweep->parsed()) {
            std::vector<retrieval::KnnEvalReport> reports;
            for (const auto& entry : fs::directory_iterator(reports_dir)) {
                if (entry.path().extension() == ".json") reports.push_back(retrieval::report_from_json(read_json(entry.path())));
            }
            viz::emit_k_sweep(reports, out_path);
        } else if (panel->parsed()) {
            viz::emit_retrieval_panel(phantom::load_manifest(manifest_path), retrieval::load_table(table_path), tumor_id, k, out_path);
        } else if (run->parsed()) {
            const auto result = lab::run_pipeline(experiment(exp_path, seed_override));
            std::cout << result.summary.dump(2) << std::endl;
        } else if (sweep_ch->parsed()) {
            const auto report = lab::channel_sweep(experiment(exp_path, seed_override), parse_int_list(channels_text));
            std::cout << io::read_text(report.table_csv);
        } else if (lab_ablate->parsed()) {
            const auto report = lab::ablation(experiment(exp_path, seed_override),
                                              training::subsets_from_json(read_json(subsets_path)));
            std::cout << training::to_json(report).dump(2) << std::endl;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
