#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/model/config.hpp"
#include "tumorsearch/phantom/config.hpp"
#include "tumorsearch/retrieval/distortion.hpp"
#include "tumorsearch/training/schedule.hpp"
#include "tumorsearch/viz/projection.hpp"

namespace tumorsearch::lab {

/// Overrides the configured output root when set.
inline constexpr const char* kOutputRootEnv = "TUMORSEARCH_OUTPUT_ROOT";

struct RetrievalSettings {
    int k = 5;
    std::vector<int> k_sweep{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    double test_fraction = 0.2;
    std::uint64_t split_seed = 0;
    int inference_patch = 32;
    bool l2_normalize = false;
    retrieval::DistortionParams distortion;
};

struct VizSettings {
    viz::ProjectionConfig projection;
    /// Which table the scatter projects: "test" or "all".
    std::string tsne_split = "test";
    /// Lower the perplexity when the table is too small for it.
    bool clamp_perplexity = true;
    int panel_k = 2;
    /// Empty: the first test schwannoma and the first test metastasis.
    std::vector<std::string> panel_queries;
};

struct ExperimentConfig {
    phantom::PhantomConfig phantom;
    model::ModelConfig model;
    training::TrainConfig train;
    RetrievalSettings retrieval;
    VizSettings viz;
    std::filesystem::path output_root = "runs/desk";
    std::uint64_t seed = 0;

    /// Desk-scale defaults: C=16 on the default phantom suite.
    static ExperimentConfig desk() {
        ExperimentConfig c;
        c.model.channels = 16;
        return c;
    }

    /// Copies the global seed into every module.
    void propagate_seed() {
        phantom.seed = model.seed = train.seed = seed;
        retrieval.split_seed = retrieval.distortion.seed = viz.projection.seed = seed;
    }

    void validate() const {
        phantom.validate();
        model.validate();
        train.validate();
        retrieval.distortion.validate();
        if (model.n_regions != phantom.n_regions) throw ConfigError("model.n_regions", "must equal phantom.n_regions");
        if (retrieval.k < 1) throw ConfigError("retrieval.k", "must be >= 1");
        if (retrieval.k_sweep.empty()) throw ConfigError("retrieval.k_sweep", "must not be empty");
        if (!(retrieval.test_fraction > 0.0 && retrieval.test_fraction < 1.0)) {
            throw ConfigError("retrieval.test_fraction", "must be in (0, 1)");
        }
        if (retrieval.inference_patch < 1) throw ConfigError("retrieval.inference_patch", "must be positive");
        if (viz.tsne_split != "test" && viz.tsne_split != "all") throw ConfigError("viz.tsne_split", "must be test or all");
        if (viz.panel_k < 1) throw ConfigError("viz.panel_k", "must be >= 1");
        if (output_root.empty()) throw ConfigError("output_root", "must not be empty");
    }
};

inline void to_json(nlohmann::json& j, const RetrievalSettings& r) {
    j = {{"k", r.k},
         {"k_sweep", r.k_sweep},
         {"test_fraction", r.test_fraction},
         {"split_seed", r.split_seed},
         {"inference_patch", r.inference_patch},
         {"l2_normalize", r.l2_normalize},
         {"distortion", r.distortion}};
}

inline void to_json(nlohmann::json& j, const VizSettings& v) {
    j = {{"projection", v.projection},
         {"tsne_split", v.tsne_split},
         {"clamp_perplexity", v.clamp_perplexity},
         {"panel_k", v.panel_k},
         {"panel_queries", v.panel_queries}};
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"seed", c.seed},
         {"output_root", c.output_root.string()},
         {"phantom", c.phantom},
         {"model", c.model},
         {"train", c.train},
         {"retrieval", c.retrieval},
         {"viz", c.viz}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(where + key, "unknown key");
        }
    }
}

}  // namespace detail

/// Sub-configs that omit "seed" inherit the global seed.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"seed", "output_root", "phantom", "model", "train", "retrieval", "viz"}, "");
    ExperimentConfig c = ExperimentConfig::desk();
    c.seed = j.value("seed", std::uint64_t{0});
    c.propagate_seed();
    if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
    if (j.contains("phantom")) {
        auto sub = j.at("phantom");
        if (!sub.contains("seed")) sub["seed"] = c.seed;
        c.phantom = sub.get<phantom::PhantomConfig>();
    }
    if (j.contains("model")) {
        nlohmann::json sub = c.model;
        sub.update(j.at("model"));
        c.model = sub.get<model::ModelConfig>();
    }
    if (j.contains("train")) {
        nlohmann::json sub = c.train;
        sub.update(j.at("train"));
        c.train = sub.get<training::TrainConfig>();
    }
    if (j.contains("retrieval")) {
        const auto& r = j.at("retrieval");
        detail::reject_unknown(r, {"k", "k_sweep", "test_fraction", "split_seed", "inference_patch", "l2_normalize", "distortion"},
                               "retrieval.");
        c.retrieval.k = r.value("k", c.retrieval.k);
        c.retrieval.k_sweep = r.value("k_sweep", c.retrieval.k_sweep);
        c.retrieval.test_fraction = r.value("test_fraction", c.retrieval.test_fraction);
        c.retrieval.split_seed = r.value("split_seed", c.retrieval.split_seed);
        c.retrieval.inference_patch = r.value("inference_patch", c.retrieval.inference_patch);
        c.retrieval.l2_normalize = r.value("l2_normalize", c.retrieval.l2_normalize);
        if (r.contains("distortion")) {
            nlohmann::json sub = c.retrieval.distortion;
            sub.update(r.at("distortion"));
            c.retrieval.distortion = sub.get<retrieval::DistortionParams>();
        }
    }
    if (j.contains("viz")) {
        const auto& v = j.at("viz");
        detail::reject_unknown(v, {"projection", "tsne_split", "clamp_perplexity", "panel_k", "panel_queries"}, "viz.");
        if (v.contains("projection")) {
            nlohmann::json sub = c.viz.projection;
            sub.update(v.at("projection"));
            c.viz.projection = sub.get<viz::ProjectionConfig>();
        }
        c.viz.tsne_split = v.value("tsne_split", c.viz.tsne_split);
        c.viz.clamp_perplexity = v.value("clamp_perplexity", c.viz.clamp_perplexity);
        c.viz.panel_k = v.value("panel_k", c.viz.panel_k);
        c.viz.panel_queries = v.value("panel_queries", c.viz.panel_queries);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return experiment_from_json(nlohmann::json::parse(io::read_text(path)));
}

/// Applies the environment override of the output root, if any.
inline void apply_environment(ExperimentConfig& c) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) c.output_root = root;
}

}  // namespace tumorsearch::lab
