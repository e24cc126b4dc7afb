#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "sml/errors.hpp"
#include "sml/matrix.hpp"
#include "sml/parallel.hpp"
#include "sml/rng.hpp"
#include "sml/spectral.hpp"
#include "sml/stack.hpp"

namespace sml {

enum class EnsembleMode { gbrf, rf };
enum class FeatureSampling { per_tree, per_split };

struct EnsembleConfig {
    int n_trees = 1000;
    int features_per_tree = 20;
    int max_depth = 3;
    double learning_rate = 0.1;
    EnsembleMode mode = EnsembleMode::gbrf;
    std::uint64_t seed = 0;
    FeatureSampling feature_sampling = FeatureSampling::per_tree;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double leaf_value = 0.0;
};
using Tree = std::vector<TreeNode>;

// Fitted ensemble. In gbrf mode leaf values already include shrinkage, so a
// prediction is just base_score plus the leaf sum through the logistic; in rf
// mode leaves hold class votes and the score is the vote fraction.
struct EnsembleModel {
    EnsembleConfig config;
    double base_score = 0.0;
    std::size_t feature_dim = 0;
    std::vector<Tree> trees;
};

struct FitDiagnostics {
    std::vector<double> train_logloss;              // mean logistic loss per stage
    std::vector<std::vector<int>> feature_subsets;  // per tree, per_tree sampling only
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Numerically stable mean logistic loss of margins against 0/1 labels.
inline double mean_logloss(const std::vector<double>& margin, const std::vector<int>& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < margin.size(); ++i) {
        double m = margin[i];
        double softplus = m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
        acc += softplus - y[i] * m;
    }
    return acc / static_cast<double>(margin.size());
}

inline std::vector<int> sample_features(Rng& rng, std::size_t dim, int count) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        int f = static_cast<int>(rng.next_below(dim));
        if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline int tree_leaf(const Tree& tree, std::span<const double> x) {
    int node = 0;
    while (tree[node].feature >= 0)
        node = x[static_cast<std::size_t>(tree[node].feature)] <= tree[node].threshold
                   ? tree[node].left
                   : tree[node].right;
    return node;
}

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = -std::numeric_limits<double>::infinity();
};

// Exact scan over midpoints of sorted distinct values. Features are visited in
// ascending index order and thresholds ascending, with strictly-greater gain
// comparison, so ties resolve to the lower feature index and lower threshold.
template <typename GainAt>
SplitChoice best_split(const FeatureMatrix& x, const std::vector<int>& idx,
                       const std::vector<int>& features, GainAt&& gain_of_partition) {
    SplitChoice best;
    std::vector<std::pair<double, int>> vals(idx.size());
    for (int f : features) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
            int row = idx[i];
            vals[i] = {x.at(static_cast<std::size_t>(row), static_cast<std::size_t>(f)), row};
        }
        std::sort(vals.begin(), vals.end());
        for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
            if (vals[i].first == vals[i + 1].first) continue;
            double gain = gain_of_partition(vals, i);
            if (!best.found || gain > best.gain) {
                best.found = true;
                best.feature = f;
                best.threshold = vals[i].first + 0.5 * (vals[i + 1].first - vals[i].first);
                best.gain = gain;
            }
        }
    }
    return best;
}

struct GradientTreeBuilder {
    const FeatureMatrix& x;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    int max_depth;
    FeatureSampling sampling;
    int features_per_split;
    Rng* rng = nullptr;  // per_split sampling only

    static constexpr double kHessFloor = 1e-12;

    Tree tree;

    int build(const std::vector<int>& idx, const std::vector<int>& features, int depth) {
        double g = 0.0, h = 0.0;
        for (int i : idx) {
            g += grad[static_cast<std::size_t>(i)];
            h += hess[static_cast<std::size_t>(i)];
        }
        auto score = [](double gs, double hs) { return gs * gs / std::max(hs, kHessFloor); };

        // a gradient-impure node may split even at zero first-order gain;
        // the XOR pattern has exactly-zero root gain yet needs the split
        double gmin = grad[static_cast<std::size_t>(idx.front())], gmax = gmin;
        for (int i : idx) {
            gmin = std::min(gmin, grad[static_cast<std::size_t>(i)]);
            gmax = std::max(gmax, grad[static_cast<std::size_t>(i)]);
        }
        SplitChoice split;
        if (depth < max_depth && idx.size() >= 2 && gmax > gmin) {
            const std::vector<int>& use =
                sampling == FeatureSampling::per_split ? *new_subset() : features;
            split = best_split(x, idx, use,
                               [&](const std::vector<std::pair<double, int>>& vals, std::size_t cut) {
                                   double gl = 0.0, hl = 0.0;
                                   for (std::size_t i = 0; i <= cut; ++i) {
                                       gl += grad[static_cast<std::size_t>(vals[i].second)];
                                       hl += hess[static_cast<std::size_t>(vals[i].second)];
                                   }
                                   return score(gl, hl) + score(g - gl, h - hl) - score(g, h);
                               });
        }
        int node = static_cast<int>(tree.size());
        tree.emplace_back();
        if (!split.found || split.gain < 0.0) {
            tree[node].leaf_value = g / std::max(h, kHessFloor);  // Newton step
            return node;
        }
        std::vector<int> left, right;
        for (int i : idx) {
            double v = x.at(static_cast<std::size_t>(i), static_cast<std::size_t>(split.feature));
            (v <= split.threshold ? left : right).push_back(i);
        }
        tree[node].feature = split.feature;
        tree[node].threshold = split.threshold;
        tree[node].left = build(left, features, depth + 1);
        tree[node].right = build(right, features, depth + 1);
        return node;
    }

    std::vector<int> subset_storage_;
    const std::vector<int>* new_subset() {
        subset_storage_ = sample_features(*rng, x.cols, features_per_split);
        return &subset_storage_;
    }
};

struct GiniTreeBuilder {
    const FeatureMatrix& x;
    const std::vector<int>& y;
    int max_depth;

    Tree tree;

    int build(const std::vector<int>& idx, const std::vector<int>& features, int depth) {
        std::size_t c1 = 0;
        for (int i : idx) c1 += static_cast<std::size_t>(y[static_cast<std::size_t>(i)]);
        const std::size_t total = idx.size();
        auto gini = [](double ones, double count) {
            if (count <= 0.0) return 0.0;
            double p1 = ones / count;
            return 2.0 * p1 * (1.0 - p1);
        };
        SplitChoice split;
        if (depth < max_depth && total >= 2 && c1 != 0 && c1 != total) {
            double parent = gini(static_cast<double>(c1), static_cast<double>(total));
            split = best_split(x, idx, features,
                               [&](const std::vector<std::pair<double, int>>& vals, std::size_t cut) {
                                   double left_ones = 0.0;
                                   for (std::size_t i = 0; i <= cut; ++i)
                                       left_ones += y[static_cast<std::size_t>(vals[i].second)];
                                   double nl = static_cast<double>(cut + 1);
                                   double nr = static_cast<double>(total) - nl;
                                   double weighted = (nl * gini(left_ones, nl) +
                                                      nr * gini(static_cast<double>(c1) - left_ones, nr)) /
                                                     static_cast<double>(total);
                                   return parent - weighted;
                               });
        }
        int node = static_cast<int>(tree.size());
        tree.emplace_back();
        if (!split.found || split.gain < 0.0) {
            tree[node].leaf_value = 2 * c1 > total ? 1.0 : 0.0;  // majority vote, ties to 0
            return node;
        }
        std::vector<int> left, right;
        for (int i : idx) {
            double v = x.at(static_cast<std::size_t>(i), static_cast<std::size_t>(split.feature));
            (v <= split.threshold ? left : right).push_back(i);
        }
        tree[node].feature = split.feature;
        tree[node].threshold = split.threshold;
        tree[node].left = build(left, features, depth + 1);
        tree[node].right = build(right, features, depth + 1);
        return node;
    }
};

}  // namespace detail

inline void validate_config(const EnsembleConfig& cfg, std::size_t feature_dim) {
    if (cfg.n_trees < 1) throw InvalidArgument("fit: n_trees must be >= 1");
    if (cfg.features_per_tree < 1 ||
        static_cast<std::size_t>(cfg.features_per_tree) > feature_dim)
        throw InvalidArgument("fit: features_per_tree must lie in [1, feature dimension]");
    if (cfg.max_depth < 1) throw InvalidArgument("fit: max_depth must be >= 1");
    if (!(cfg.learning_rate > 0.0) || cfg.learning_rate > 1.0)
        throw InvalidArgument("fit: learning_rate must lie in (0, 1]");
}

// Gradient boosting on logistic loss where every stage's tree sees a fresh
// uniform feature subset (gbrf mode), or bagged majority-vote trees (rf mode).
// Deterministic for a fixed (data, config, seed) at any thread count.
inline EnsembleModel fit(const FeatureMatrix& x, const std::vector<int>& y,
                         const EnsembleConfig& cfg, FitDiagnostics* diag = nullptr,
                         int threads = 1) {
    const std::size_t n = x.rows;
    if (n < 2) throw InvalidArgument("fit: need at least 2 samples");
    if (y.size() != n) throw InvalidArgument("fit: label count mismatch");
    std::size_t ones = 0;
    for (int v : y) {
        if (v != 0 && v != 1) throw InvalidArgument("fit: labels must be 0/1");
        ones += static_cast<std::size_t>(v);
    }
    if (ones == 0 || ones == n) throw InvalidArgument("fit: both classes required");
    validate_config(cfg, x.cols);

    EnsembleModel model;
    model.config = cfg;
    model.feature_dim = x.cols;
    model.trees.reserve(static_cast<std::size_t>(cfg.n_trees));

    std::vector<int> all_idx(n);
    std::iota(all_idx.begin(), all_idx.end(), 0);

    if (cfg.mode == EnsembleMode::rf) {
        model.base_score = 0.0;
        model.trees.resize(static_cast<std::size_t>(cfg.n_trees));
        if (diag) diag->feature_subsets.resize(model.trees.size());
        parallel_for(model.trees.size(), threads, [&](std::size_t t) {
            Rng rng(derive_seed(cfg.seed, t));
            auto features = detail::sample_features(rng, x.cols, cfg.features_per_tree);
            std::vector<int> boot(n);
            for (auto& b : boot) b = static_cast<int>(rng.next_below(n));
            detail::GiniTreeBuilder builder{x, y, cfg.max_depth};
            builder.build(boot, features, 0);
            model.trees[t] = std::move(builder.tree);
            if (diag) diag->feature_subsets[t] = features;
        });
        return model;
    }

    const double prior = static_cast<double>(ones) / static_cast<double>(n);
    model.base_score = std::log(prior / (1.0 - prior));
    std::vector<double> margin(n, model.base_score);
    std::vector<double> grad(n), hess(n);
    double loss = detail::mean_logloss(margin, y);

    for (int t = 0; t < cfg.n_trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            double p = detail::sigmoid(margin[i]);
            grad[i] = y[i] - p;  // negative gradient of the loss
            hess[i] = p * (1.0 - p);
        }
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
        auto features = detail::sample_features(rng, x.cols, cfg.features_per_tree);
        detail::GradientTreeBuilder builder{x, grad, hess, cfg.max_depth, cfg.feature_sampling,
                                            cfg.features_per_tree, &rng};
        builder.build(all_idx, features, 0);
        Tree tree = std::move(builder.tree);

        // shrink, and keep halving on the rare overshoot so the training loss
        // never increases stage over stage
        std::vector<int> leaf_of(n);
        for (std::size_t i = 0; i < n; ++i) leaf_of[i] = detail::tree_leaf(tree, x.row(i));
        double scale = cfg.learning_rate;
        std::vector<double> candidate(n);
        double new_loss = loss;
        for (int halving = 0; halving < 60; ++halving) {
            for (std::size_t i = 0; i < n; ++i)
                candidate[i] = margin[i] + scale * tree[static_cast<std::size_t>(leaf_of[i])].leaf_value;
            new_loss = detail::mean_logloss(candidate, y);
            if (new_loss <= loss) break;
            scale *= 0.5;
        }
        if (new_loss > loss) {
            scale = 0.0;
            candidate = margin;
            new_loss = loss;
        }
        for (auto& node : tree)
            if (node.feature < 0) node.leaf_value *= scale;
        margin.swap(candidate);
        loss = new_loss;
        model.trees.push_back(std::move(tree));
        if (diag) {
            diag->train_logloss.push_back(loss);
            diag->feature_subsets.push_back(features);
        }
    }
    return model;
}

inline double predict_margin(const EnsembleModel& model, std::span<const double> x) {
    if (x.size() != model.feature_dim) throw InvalidArgument("predict: dimension mismatch");
    double acc = model.base_score;
    for (const auto& tree : model.trees)
        acc += tree[static_cast<std::size_t>(detail::tree_leaf(tree, x))].leaf_value;
    return acc;
}

// gbrf: logistic of the summed leaf scores; rf: vote fraction.
inline double predict_proba(const EnsembleModel& model, std::span<const double> x) {
    if (x.size() != model.feature_dim) throw InvalidArgument("predict: dimension mismatch");
    if (model.config.mode == EnsembleMode::rf) {
        if (model.trees.empty()) throw InvalidArgument("predict: empty rf ensemble");
        double votes = 0.0;
        for (const auto& tree : model.trees)
            votes += tree[static_cast<std::size_t>(detail::tree_leaf(tree, x))].leaf_value;
        return votes / static_cast<double>(model.trees.size());
    }
    return detail::sigmoid(predict_margin(model, x));
}

// ROC curve over a threshold sweep of the unique scores (ties share a step),
// with trapezoid AUC. Positive class is label 1.
struct RocCurve {
    std::vector<double> thresholds;  // leading +inf sentinel, then descending
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;
};

inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw InvalidArgument("roc_curve: length mismatch");
    std::size_t pos = 0, neg = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw InvalidArgument("roc_curve: labels must be 0/1");
        (l == 1 ? pos : neg)++;
    }
    if (pos == 0 || neg == 0) throw InvalidArgument("roc_curve: both classes required");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.thresholds.push_back(std::numeric_limits<double>::infinity());
    roc.fpr.push_back(0.0);
    roc.tpr.push_back(0.0);
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < order.size()) {
        double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        roc.thresholds.push_back(t);
        roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
        roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    }
    for (std::size_t k = 1; k < roc.fpr.size(); ++k)
        roc.auc += (roc.fpr[k] - roc.fpr[k - 1]) * 0.5 * (roc.tpr[k] + roc.tpr[k - 1]);
    return roc;
}

enum class BaselineKind { random_image, mean_image };

// Comparison features: one uniformly drawn slice, or the mean of all slices.
inline DoubleImage baseline_features(const ImageStack& stack, BaselineKind kind,
                                     std::uint64_t seed) {
    if (stack.m < 1) throw InvalidArgument("baseline_features: empty stack");
    if (kind == BaselineKind::mean_image) return mean_of_stack(stack);
    Rng rng(seed);
    int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(stack.m)));
    return to_double(stack.slice_image(j));
}

}  // namespace sml
