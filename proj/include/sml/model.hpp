#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sml/classifier.hpp"
#include "sml/errors.hpp"
#include "sml/screening.hpp"
#include "sml/selection.hpp"

namespace sml {

struct Preprocessing {
    int resize_to = 0;       // 0 = slices must already share the trained side
    bool normalized = true;  // intensities min-max normalized per stack
};

// Everything needed to score a new scan: the tree ensemble, the pixel mask,
// the chosen quantile levels, and preprocessing parameters.
struct TrainedModel {
    EnsembleModel ensemble;
    PixelMask mask;
    AlphaSelection selection;
    Preprocessing preprocessing;
};

inline constexpr const char* kModelFormatVersion = "sml-model-v1";

inline double predict_proba(const TrainedModel& model, std::span<const double> x) {
    if (x.size() != model.mask.count(PixelSet::A3))
        throw InvalidArgument("predict: feature length must equal |A3|");
    return predict_proba(model.ensemble, x);
}

namespace detail {

inline nlohmann::json config_to_json(const EnsembleConfig& cfg) {
    return {
        {"n_trees", cfg.n_trees},
        {"features_per_tree", cfg.features_per_tree},
        {"max_depth", cfg.max_depth},
        {"learning_rate", cfg.learning_rate},
        {"mode", cfg.mode == EnsembleMode::gbrf ? "gbrf" : "rf"},
        {"seed", cfg.seed},
        {"feature_sampling",
         cfg.feature_sampling == FeatureSampling::per_tree ? "per_tree" : "per_split"},
    };
}

inline nlohmann::json mask_to_json(const PixelMask& mask) {
    std::string assignment;
    assignment.reserve(mask.assignment.size());
    for (PixelSet s : mask.assignment)
        assignment.push_back(static_cast<char>('0' + static_cast<int>(s)));
    return {
        {"p", mask.p}, {"n", mask.n}, {"t1", mask.t1}, {"t2", mask.t2},
        {"assignment", std::move(assignment)},
    };
}

inline nlohmann::json selection_to_json(const AlphaSelection& sel) {
    return {
        {"ell", sel.ell},
        {"alphas", sel.alphas},
        {"grid", sel.grid},
        {"errors_ell1", sel.errors_ell1},
        {"errors_ell2", sel.errors_ell2},
        {"alpha_star", sel.alpha_star},
        {"min_error", sel.min_error},
    };
}

}  // namespace detail

inline std::string model_to_json(const TrainedModel& model) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : model.ensemble.trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& n : tree) {
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"left", n.left},
                             {"right", n.right},
                             {"leaf_value", n.leaf_value}});
        }
        trees.push_back(std::move(nodes));
    }
    nlohmann::json j = {
        {"format_version", kModelFormatVersion},
        {"config", detail::config_to_json(model.ensemble.config)},
        {"mask", detail::mask_to_json(model.mask)},
        {"selection", detail::selection_to_json(model.selection)},
        {"preprocessing",
         {{"resize_to", model.preprocessing.resize_to},
          {"normalized", model.preprocessing.normalized}}},
        {"base_score", model.ensemble.base_score},
        {"trees", std::move(trees)},
    };
    return j.dump();
}

inline TrainedModel model_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(DataErrorKind::bad_model, std::string("model parse error: ") + e.what());
    }
    try {
        std::string version = j.at("format_version").get<std::string>();
        if (version != kModelFormatVersion)
            throw DataError(DataErrorKind::bad_model, "unsupported format_version '" + version + "'");

        TrainedModel model;
        const auto& jc = j.at("config");
        EnsembleConfig& cfg = model.ensemble.config;
        cfg.n_trees = jc.at("n_trees").get<int>();
        cfg.features_per_tree = jc.at("features_per_tree").get<int>();
        cfg.max_depth = jc.at("max_depth").get<int>();
        cfg.learning_rate = jc.at("learning_rate").get<double>();
        std::string mode = jc.at("mode").get<std::string>();
        if (mode != "gbrf" && mode != "rf")
            throw DataError(DataErrorKind::bad_model, "unknown mode '" + mode + "'");
        cfg.mode = mode == "gbrf" ? EnsembleMode::gbrf : EnsembleMode::rf;
        cfg.seed = jc.at("seed").get<std::uint64_t>();
        std::string sampling = jc.at("feature_sampling").get<std::string>();
        if (sampling != "per_tree" && sampling != "per_split")
            throw DataError(DataErrorKind::bad_model, "unknown feature_sampling '" + sampling + "'");
        cfg.feature_sampling =
            sampling == "per_tree" ? FeatureSampling::per_tree : FeatureSampling::per_split;

        const auto& jm = j.at("mask");
        model.mask.p = jm.at("p").get<int>();
        model.mask.n = jm.at("n").get<int>();
        model.mask.t1 = jm.at("t1").get<double>();
        model.mask.t2 = jm.at("t2").get<double>();
        std::string assignment = jm.at("assignment").get<std::string>();
        if (model.mask.p < 1 ||
            assignment.size() != static_cast<std::size_t>(model.mask.p) * model.mask.p)
            throw DataError(DataErrorKind::bad_model, "mask assignment length mismatch");
        model.mask.assignment.reserve(assignment.size());
        for (char c : assignment) {
            if (c < '1' || c > '3')
                throw DataError(DataErrorKind::bad_model, "mask assignment must use digits 1-3");
            model.mask.assignment.push_back(static_cast<PixelSet>(c - '0'));
        }

        const auto& js = j.at("selection");
        model.selection.ell = js.at("ell").get<int>();
        if (model.selection.ell != 1 && model.selection.ell != 2)
            throw DataError(DataErrorKind::bad_model, "selection ell must be 1 or 2");
        model.selection.alphas = js.at("alphas").get<std::vector<double>>();
        model.selection.grid = js.at("grid").get<std::vector<double>>();
        model.selection.errors_ell1 = js.at("errors_ell1").get<std::vector<double>>();
        model.selection.errors_ell2 = js.at("errors_ell2").get<std::vector<double>>();
        model.selection.alpha_star = js.at("alpha_star").get<double>();
        model.selection.min_error = js.at("min_error").get<double>();
        if (model.selection.alphas.empty())
            throw DataError(DataErrorKind::bad_model, "selection has no quantile levels");
        for (double a : model.selection.alphas)
            if (a < 0.0 || a > 1.0)
                throw DataError(DataErrorKind::bad_model, "quantile level outside [0, 1]");

        const auto& jp = j.at("preprocessing");
        model.preprocessing.resize_to = jp.at("resize_to").get<int>();
        model.preprocessing.normalized = jp.at("normalized").get<bool>();

        model.ensemble.base_score = j.at("base_score").get<double>();
        model.ensemble.feature_dim = model.mask.count(PixelSet::A3);

        for (const auto& jt : j.at("trees")) {
            Tree tree;
            for (const auto& jn : jt) {
                TreeNode n;
                n.feature = jn.at("feature").get<int>();
                n.threshold = jn.at("threshold").get<double>();
                n.left = jn.at("left").get<int>();
                n.right = jn.at("right").get<int>();
                n.leaf_value = jn.at("leaf_value").get<double>();
                tree.push_back(n);
            }
            if (tree.empty()) throw DataError(DataErrorKind::bad_model, "empty tree");
            int size = static_cast<int>(tree.size());
            for (const auto& n : tree) {
                if (n.feature >= 0) {
                    if (n.feature >= static_cast<int>(model.ensemble.feature_dim))
                        throw DataError(DataErrorKind::bad_model, "split feature out of range");
                    if (n.left < 0 || n.left >= size || n.right < 0 || n.right >= size)
                        throw DataError(DataErrorKind::bad_model, "tree child index out of range");
                }
            }
            model.ensemble.trees.push_back(std::move(tree));
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(DataErrorKind::bad_model, std::string("model schema error: ") + e.what());
    }
}

inline void save_model(const TrainedModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    std::string text = model_to_json(model);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f << '\n';
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

inline TrainedModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return model_from_json(text);
}

}  // namespace sml
