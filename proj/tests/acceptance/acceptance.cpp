// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "tumorsearch/lab/sweeps.hpp"
#include "tumorsearch/model/roipool.hpp"
#include "tumorsearch/retrieval/server.hpp"
#include "tumorsearch/training/gradcheck.hpp"

// after Eigen: <resolv.h> defines a _res macro that collides with Eigen internals
#include <httplib.h>

using namespace tumorsearch;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

// ---- 1 ------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    auto g = tstest::tiny_grad_case(0);
    const auto r = training::gradient_check(g.net, g.batch, training::LossWeights::uniform(1.0, 1e-3), 1e-5);
    const double secs = seconds_since(t0);
    const bool all = r.checked == g.net.parameter_count();
    return {r.max_relative_error <= 1e-3 && secs <= 120.0 && all,
            "max rel err " + fmt(r.max_relative_error) + " over " + std::to_string(r.checked) + " params (worst " +
                r.worst_parameter + "), " + fmt(secs, 3) + " s"};
}

// ---- 2 ------------------------------------------------------------------

Outcome roipool_oracle() {
    Rng rng(2);
    int exact = 0, monotone = 0;
    for (int i = 0; i < 100; ++i) {
        const Shape3 s{{static_cast<int>(rng.uniform_int(1, 12)), static_cast<int>(rng.uniform_int(1, 12)),
                        static_cast<int>(rng.uniform_int(1, 12))}};
        const int channels = static_cast<int>(rng.uniform_int(1, 8));
        const auto f = tstest::random_tensor<float>(rng, 2, channels, s, -5.0, 5.0);
        const BBox b = tstest::random_box(rng, s);
        const int n = static_cast<int>(rng.uniform_int(0, 1));
        exact += model::roipool(f, n, b) == tstest::scan_max(f, n, b);
    }
    for (int i = 0; i < 100; ++i) {
        const Shape3 s{{10, 9, 11}};
        const auto f = tstest::random_tensor<float>(rng, 1, 4, s, -5.0, 5.0);
        const BBox inner = tstest::random_box(rng, s);
        BBox outer = inner;
        for (std::size_t a = 0; a < 3; ++a) {
            outer.start[a] = static_cast<int>(rng.uniform_int(0, inner.start[a]));
            outer.stop[a] = static_cast<int>(rng.uniform_int(inner.stop[a], s[a]));
        }
        const auto pi = model::roipool(f, 0, inner), po = model::roipool(f, 0, outer);
        bool ok = true;
        for (std::size_t c = 0; c < pi.size(); ++c) ok = ok && po[c] >= pi[c];
        monotone += ok;
    }
    return {exact == 100 && monotone == 100,
            std::to_string(exact) + "/100 exact, " + std::to_string(monotone) + "/100 monotone"};
}

// ---- 3 ------------------------------------------------------------------

Outcome loss_omission() {
    double worst_total = 0.0, worst_grad = 0.0;
    int cases = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto g = tstest::tiny_grad_case(seed);
        Rng rng(seed + 77);
        for (auto& t : g.batch.targets[0]) {
            for (std::size_t p = 1; p < training::kNumClassTasks; ++p) {
                if (rng.uniform() < 0.3) t[p] = std::nullopt;
            }
        }
        const std::size_t task = 1 + static_cast<std::size_t>(rng.uniform_int(0, training::kNumClassTasks - 2));
        auto omitted = g.batch;
        for (auto& t : omitted.targets[0]) t[task] = std::nullopt;
        const auto w = training::LossWeights::uniform(1.0, 1e-3);
        auto zeroed = w;
        zeroed.lambda_task[task] = 0.0;

        auto run = [&](const training::Batch<double>& b, const training::LossWeights& lw) {
            model::MultitaskNet<double> net = g.net;
            model::MultitaskNet<double>::Cache cache;
            net.zero_grad();
            const auto out = net.forward_train(b.input, b.boxes, cache);
            const auto loss = training::multitask_loss(out, b.seg_target, b.targets, lw);
            net.backward(cache, loss.grad);
            std::vector<double> grads;
            net.visit([&](model::Parameter<double>& p, bool) { grads.insert(grads.end(), p.grad.begin(), p.grad.end()); });
            return std::make_pair(loss.breakdown.total, grads);
        };
        const auto [ta, ga] = run(omitted, w);
        const auto [tb, gb] = run(g.batch, zeroed);
        worst_total = std::max(worst_total, std::abs(ta - tb));
        for (std::size_t i = 0; i < ga.size(); ++i) worst_grad = std::max(worst_grad, std::abs(ga[i] - gb[i]));
        ++cases;
    }
    return {worst_total <= 1e-9 && worst_grad <= 1e-9,
            std::to_string(cases) + " masks, max |dtotal| " + fmt(worst_total) + ", max |dgrad| " + fmt(worst_grad)};
}

// ---- 4 ------------------------------------------------------------------

Outcome schedule() {
    const auto c = training::TrainConfig::paper();
    const double a = training::lr_at(0, c), b = training::lr_at(90, c), d = training::lr_at(105, c);
    const bool ok = std::abs(a - 0.1) <= 1e-12 && std::abs(b - 0.01) <= 1e-12 && std::abs(d - 0.001) <= 1e-12;
    return {ok, "lr(0)=" + fmt(a) + " lr(90)=" + fmt(b) + " lr(105)=" + fmt(d)};
}

// ---- 5 ------------------------------------------------------------------

Outcome distortion_sampler() {
    Rng rng(5);
    const Shape3 vol{{512, 512, 512}};
    const BBox box{{200, 200, 200}, {240, 250, 230}};
    const retrieval::DistortionParams p;
    double sg = 0, sgg = 0, sh = 0, shh = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        retrieval::DistortionDraw d;
        retrieval::distort_bbox(box, vol, p, rng, &d);
        for (std::size_t a = 0; a < 3; ++a) {
            sg += d.log2_scale[a];
            sgg += d.log2_scale[a] * d.log2_scale[a];
            sh += d.shift_fraction[a];
            shh += d.shift_fraction[a] * d.shift_fraction[a];
        }
    }
    const double m = 3.0 * n;
    const double sd_g = std::sqrt(sgg / m - (sg / m) * (sg / m));
    const double sd_h = std::sqrt(shh / m - (sh / m) * (sh / m));
    const bool ok = std::abs(sd_g - 1.0 / 3.0) <= 0.01 / 3.0 && std::abs(sd_h - 0.1) <= 0.001;
    return {ok, "std log2 scale " + fmt(sd_g, 5) + " (1/3 +-1%), std shift/side " + fmt(sd_h, 5) + " (0.1 +-1%)"};
}

// ---- 6 ------------------------------------------------------------------

Outcome knn_parity() {
    Rng rng(6);
    int matched = 0, violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int rows = static_cast<int>(rng.uniform_int(5, 200));
        const int channels = static_cast<int>(rng.uniform_int(1, 6));
        const auto table = tstest::random_table(rng, rows, channels, static_cast<int>(rng.uniform_int(2, 30)));
        const retrieval::RetrievalIndex index(table);
        std::vector<float> q;
        for (int c = 0; c < channels; ++c) q.push_back(static_cast<float>(rng.uniform_int(0, 3)));
        const auto k = static_cast<std::size_t>(rng.uniform_int(1, 12));
        std::optional<std::string> exclude;
        if (rng.uniform() < 0.7) exclude = table.rows[static_cast<std::size_t>(rng.uniform_int(0, rows - 1))].image_id;

        const auto got = index.query(q, k, exclude);
        const auto want = tstest::brute_neighbors(table, q, k, exclude);
        bool ok = got.neighbors == want && index.knn_regress(q, k, exclude) == tstest::brute_mean_size(table, want);
        for (const auto& nb : got.neighbors) violations += exclude && table.rows[nb.row].image_id == *exclude;
        for (Task task : kClassificationTasks) {
            const auto labeled = tstest::brute_neighbors(table, q, k, exclude, task);
            if (labeled.empty()) continue;
            ok = ok && index.knn_classify(q, k, task, exclude) == tstest::brute_vote(table, labeled, task);
            for (const auto& nb : labeled) violations += exclude && table.rows[nb.row].image_id == *exclude;
        }
        matched += ok;
    }
    return {matched == 1000 && violations == 0,
            std::to_string(matched) + "/1000 instances match, " + std::to_string(violations) + " exclusion violations"};
}

// ---- 7, 8, 10: one desk pipeline run -------------------------------------

struct DeskRun {
    lab::PipelineResult result;
    lab::ExperimentConfig config;
    double seconds = 0.0;
};

lab::PipelineOptions logging_options() {
    lab::PipelineOptions o;
    o.log = [](const std::string& line) { std::clog << "  " << line << std::endl; };
    return o;
}

DeskRun desk_run(const fs::path& work) {
    DeskRun run;
    run.config = lab::ExperimentConfig::desk();
    run.config.output_root = work / "desk";
    const auto t0 = Clock::now();
    run.result = lab::run_pipeline(run.config, logging_options());
    run.seconds = seconds_since(t0);
    return run;
}

Outcome end_to_end(const DeskRun& run) {
    const auto& c = run.config;
    const bool config_ok = c.phantom.n_images == 120 && c.phantom.volume_shape == Shape3{{64, 64, 64}} &&
                           c.phantom.voxel_spacing_mm == std::array<double, 3>{1.0, 1.0, 1.0} && c.model.channels == 16 &&
                           c.train.epochs == 10 && c.train.batches_per_epoch == 50 && c.train.batch_size == 2 &&
                           c.train.patch_size == std::array<int, 3>{32, 32, 32} &&
                           c.train.lr_drop_epochs == std::vector<int>{7, 9} && c.retrieval.k == 5;
    const auto& r = *run.result.knn;
    const double type = r.accuracy(Task::type), lr = r.accuracy(Task::left_right);
    const double ratio = r.size_rmse_mm / r.size_rmse_mean_baseline_mm;
    const bool ok = config_ok && run.seconds <= 1800.0 && type >= 0.85 && lr >= 0.90 && ratio <= 0.5;
    return {ok, "K=5 type " + fmt(type, 3) + " (>=0.85), left/right " + fmt(lr, 3) + " (>=0.90), size RMSE " +
                    fmt(r.size_rmse_mm, 3) + " mm = " + fmt(ratio, 3) + " x mean baseline (<=0.5), " +
                    fmt(run.seconds, 4) + " s (<=1800)"};
}

Outcome distortion_robustness(const DeskRun& run) {
    if (!run.result.distortion) return {false, "pipeline returned no distortion report"};
    const auto& d = *run.result.distortion;
    const auto j = nlohmann::json::parse(io::read_text(run.config.output_root / "reports" / "distortion.json"));
    bool paired = j.contains("clean") && j.contains("distorted");
    for (Task t : kClassificationTasks) paired = paired && j.at("deltas").contains(std::string(to_string(t)));
    const double drop = -d.delta(Task::type);
    return {paired && drop <= 0.20, "type accuracy clean " + fmt(d.clean.accuracy(Task::type), 3) + " -> distorted " +
                                        fmt(d.distorted.accuracy(Task::type), 3) + " (drop " + fmt(drop, 3) +
                                        " <= 0.20); paired report with per-task deltas " + (paired ? "present" : "MISSING")};
}

/// Median over points of the distance to the nearest other point.
double median_nn_distance(const viz::Points& p) {
    std::vector<double> nn;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < p.rows(); ++j) {
            if (j != i) best = std::min(best, (p.row(i) - p.row(j)).norm());
        }
        nn.push_back(best);
    }
    std::nth_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2), nn.end());
    return nn[nn.size() / 2];
}

Outcome tsne_artifact(const DeskRun& run) {
    const auto root = run.config.output_root;
    const auto csv = root / "viz" / "tsne.csv";
    if (!fs::exists(csv)) return {false, "scatter CSV missing"};
    if (run.config.viz.tsne_split != "test") return {false, "desk config projects the test split"};
    const auto rows = viz::read_scatter_csv(csv);
    viz::Points all(static_cast<Eigen::Index>(rows.size()), 2);
    std::vector<Eigen::Index> schwannoma;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        all(static_cast<Eigen::Index>(i), 0) = rows[i].x;
        all(static_cast<Eigen::Index>(i), 1) = rows[i].y;
        if (rows[i].type == "schwannoma") schwannoma.push_back(static_cast<Eigen::Index>(i));
    }
    viz::Points sch(static_cast<Eigen::Index>(schwannoma.size()), 2);
    for (std::size_t i = 0; i < schwannoma.size(); ++i) sch.row(static_cast<Eigen::Index>(i)) = all.row(schwannoma[i]);
    // pinned cut: 2.5 x the median nearest-neighbor distance of the whole scatter
    const double cut = 2.5 * median_nn_distance(all);
    const int groups = viz::single_linkage_groups(sch, cut, 2);

    // determinism: recompute the projection with the same seed and compare to the CSV
    const auto table = retrieval::load_table(root / "tables" / "test.tbl");
    auto projection = run.config.viz.projection;
    if (run.config.viz.clamp_perplexity) {
        projection.perplexity = viz::ProjectionConfig::clamp_perplexity(projection.perplexity, table.rows.size());
    }
    std::vector<std::vector<float>> emb;
    for (const auto& r : table.rows) emb.push_back(r.embedding);
    const auto again = viz::project_2d(viz::to_points(emb), projection);
    bool same = again.rows() == all.rows();
    for (Eigen::Index i = 0; same && i < all.rows(); ++i) same = again(i, 0) == all(i, 0) && again(i, 1) == all(i, 1);

    return {rows.size() == table.rows.size() && groups >= 2 && same,
            std::to_string(rows.size()) + " rows, " + std::to_string(schwannoma.size()) + " schwannomas in " +
                std::to_string(groups) + " groups of >=2 at cut " + fmt(cut, 3) + " (need >=2); rerun " +
                (same ? "identical" : "DIFFERS")};
}

// ---- 9 ------------------------------------------------------------------

Outcome ablation_harness(const fs::path& work) {
    auto cfg = lab::ExperimentConfig::desk();
    cfg.output_root = work / "ablation";
    const std::vector<training::TaskSubset> subsets{{Task::segmentation}, {Task::type}, {kAllTasks.begin(), kAllTasks.end()}};
    const auto report = lab::ablation(cfg, subsets, logging_options());
    const auto csv = io::read_text(cfg.output_root / "ablation" / "comparison.csv");
    const auto lines = std::count(csv.begin(), csv.end(), '\n');
    const double seg = report.row("segmentation").metrics.at("accuracy_type");
    const double type_only = report.row("type").metrics.at("accuracy_type");
    const double all = report.row("all").metrics.at("accuracy_type");
    return {report.rows.size() == 3 && lines == 4 && all >= seg,
            "type accuracy: segmentation-only " + fmt(seg, 3) + ", type-only " + fmt(type_only, 3) + ", all-tasks " +
                fmt(all, 3) + " (all >= segmentation-only); table rows " + std::to_string(lines - 1)};
}

// ---- 11 -----------------------------------------------------------------

Outcome serving_parity(const retrieval::EmbeddingTable& table) {
    retrieval::NeighborServer server(table);
    const int port = server.bind("127.0.0.1", 0);
    if (port <= 0) return {false, "could not bind a port"};
    std::thread th([&] { server.serve(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    const retrieval::RetrievalIndex offline(table);
    Rng rng(11);
    int equal = 0;
    for (int i = 0; i < 50; ++i) {
        const auto& row = table.rows[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(table.rows.size()) - 1))];
        const int k = static_cast<int>(rng.uniform_int(1, 10));
        const auto res = client.Get("/neighbors?tumor_id=" + row.tumor_id + "&k=" + std::to_string(k));
        if (!res || res->status != 200) continue;
        const auto body = nlohmann::json::parse(res->body);
        const auto want = offline.query(row.embedding, static_cast<std::size_t>(k), row.image_id);
        bool ok = body == retrieval::neighbors_json(offline, row, k) && body["neighbors"].size() == want.neighbors.size();
        for (std::size_t j = 0; ok && j < want.neighbors.size(); ++j) {
            ok = body["neighbors"][j]["tumor_id"] == want.neighbors[j].tumor_id &&
                 body["neighbors"][j]["distance"].get<double>() == want.neighbors[j].distance;
        }
        equal += ok;
    }
    auto status = [&](const std::string& path) {
        const auto r = client.Get(path);
        return r ? r->status : -1;
    };
    const int s404 = status("/neighbors?tumor_id=__missing__&k=3");
    const int s400 = status("/neighbors?tumor_id=" + table.rows.front().tumor_id + "&k=abc");
    const int s400b = status("/neighbors?tumor_id=" + table.rows.front().tumor_id + "&k=0");
    server.stop();
    th.join();
    return {equal == 50 && s404 == 404 && s400 == 400 && s400b == 400,
            std::to_string(equal) + "/50 responses equal offline query(); unknown id -> " + std::to_string(s404) +
                ", malformed k -> " + std::to_string(s400) + "/" + std::to_string(s400b)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    fs::path work = "acceptance_runs";
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory, cleared at start");
    app.add_option("--only", only, "run just these criteria (1-11)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    std::error_code ec;
    fs::remove_all(work, ec);
    fs::create_directories(work);

    auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
    int failures = 0;
    auto report = [&](int n, const std::string& name, const std::function<Outcome()>& fn) {
        if (!wanted(n)) return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail << std::endl;
    };

    report(1, "gradient correctness", gradient_correctness);
    report(2, "RoiPool oracle", roipool_oracle);
    report(3, "loss omission", loss_omission);
    report(4, "learning-rate schedule", schedule);
    report(5, "distortion sampler", distortion_sampler);
    report(6, "KNN parity", knn_parity);

    std::optional<DeskRun> desk;
    std::string desk_error;
    if (wanted(7) || wanted(8) || wanted(10) || wanted(11)) {
        try {
            desk = desk_run(work);
        } catch (const std::exception& e) {
            desk_error = e.what();
        }
    }
    auto needs_desk = [&](const std::function<Outcome(const DeskRun&)>& fn) {
        return [&, fn]() -> Outcome {
            if (!desk) return {false, "desk run failed: " + desk_error};
            return fn(*desk);
        };
    };
    report(7, "end-to-end desk run", needs_desk(end_to_end));
    report(8, "distortion robustness", needs_desk(distortion_robustness));
    report(9, "ablation harness", [&] { return ablation_harness(work); });
    report(10, "t-SNE artifact", needs_desk(tsne_artifact));
    report(11, "serving parity", needs_desk([](const DeskRun& run) {
               return serving_parity(retrieval::load_table(run.config.output_root / "tables" / "train.tbl"));
           }));

    std::cout << (failures ? "FAILED " : "ALL PASSED ") << "(" << failures << " failing)" << std::endl;
    return failures ? 1 : 0;
}
