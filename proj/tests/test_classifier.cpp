#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "sml/classifier.hpp"
#include "sml/model.hpp"
#include "sml/rng.hpp"

using namespace sml;

namespace {

// every depth-2 path over thresholds at 0.5 on both axes; confirms XOR is
// realizable by one depth-2 tree before asking the ensemble to learn it
bool xor_is_depth2_realizable() {
    const double xs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    const int ys[4] = {0, 1, 1, 0};
    for (int root = 0; root < 2; ++root) {
        for (int left_feat = 0; left_feat < 2; ++left_feat) {
            for (int right_feat = 0; right_feat < 2; ++right_feat) {
                // leaves get the majority label of the points they receive
                int leaf_vote[4] = {0, 0, 0, 0};
                int leaf_count[4][2] = {{0, 0}, {0, 0}, {0, 0}, {0, 0}};
                for (int i = 0; i < 4; ++i) {
                    bool go_right = xs[i][root] > 0.5;
                    int feat = go_right ? right_feat : left_feat;
                    int leaf = (go_right ? 2 : 0) + (xs[i][feat] > 0.5 ? 1 : 0);
                    leaf_count[leaf][ys[i]]++;
                }
                for (int l = 0; l < 4; ++l) leaf_vote[l] = leaf_count[l][1] > leaf_count[l][0];
                bool all_correct = true;
                for (int i = 0; i < 4; ++i) {
                    bool go_right = xs[i][root] > 0.5;
                    int feat = go_right ? right_feat : left_feat;
                    int leaf = (go_right ? 2 : 0) + (xs[i][feat] > 0.5 ? 1 : 0);
                    if (leaf_vote[leaf] != ys[i]) all_correct = false;
                }
                if (all_correct) return true;
            }
        }
    }
    return false;
}

FeatureMatrix xor_features() {
    FeatureMatrix x(4, 2);
    x.at(0, 0) = 0;
    x.at(0, 1) = 0;
    x.at(1, 0) = 0;
    x.at(1, 1) = 1;
    x.at(2, 0) = 1;
    x.at(2, 1) = 0;
    x.at(3, 0) = 1;
    x.at(3, 1) = 1;
    return x;
}

}  // namespace

TEST_CASE("a single stump solves 1-D separable data") {
    FeatureMatrix x(8, 1);
    std::vector<int> y(8);
    for (int i = 0; i < 8; ++i) {
        x.at(i, 0) = i < 4 ? -1.0 - i : 1.0 + i;
        y[i] = i < 4 ? 0 : 1;
    }
    EnsembleConfig cfg;
    cfg.n_trees = 1;
    cfg.features_per_tree = 1;
    cfg.max_depth = 1;
    EnsembleModel model = fit(x, y, cfg);
    for (int i = 0; i < 8; ++i) {
        double proba = predict_proba(model, x.row(i));
        CHECK((proba > 0.5) == (y[i] == 1));
    }
}

TEST_CASE("gbrf reaches 100% training accuracy on XOR within 50 stages") {
    REQUIRE(xor_is_depth2_realizable());
    FeatureMatrix x = xor_features();
    std::vector<int> y = {0, 1, 1, 0};
    EnsembleConfig cfg;
    cfg.n_trees = 50;
    cfg.features_per_tree = 2;
    cfg.max_depth = 2;
    cfg.seed = 1;
    EnsembleModel model = fit(x, y, cfg);
    for (int i = 0; i < 4; ++i) {
        double proba = predict_proba(model, x.row(i));
        CHECK((proba > 0.5) == (y[i] == 1));
    }
}

TEST_CASE("training log-loss never increases across stages") {
    Rng seeds(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 20 + seeds.next_below(40);
        std::size_t q = 3 + seeds.next_below(8);
        FeatureMatrix x(n, q);
        std::vector<int> y(n);
        Rng rng(seeds.next_u64());
        for (double& v : x.data) v = rng.next_normal();
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(rng.next_u64() & 1);
            (y[i] ? has1 : has0) = true;
        }
        if (!has0) y[0] = 0;
        if (!has1) y[1] = 1;
        EnsembleConfig cfg;
        cfg.n_trees = 40;
        cfg.features_per_tree = static_cast<int>(std::min<std::size_t>(3, q));
        cfg.max_depth = 3;
        cfg.seed = seeds.next_u64();
        FitDiagnostics diag;
        fit(x, y, cfg, &diag);
        REQUIRE(diag.train_logloss.size() == 40);
        for (std::size_t t = 1; t < diag.train_logloss.size(); ++t)
            CHECK(diag.train_logloss[t] <= diag.train_logloss[t - 1] + 1e-15);
    }
}

TEST_CASE("no tree references a feature outside its sampled subset") {
    Rng rng(9);
    FeatureMatrix x(30, 12);
    std::vector<int> y(30);
    for (double& v : x.data) v = rng.next_normal();
    for (std::size_t i = 0; i < 30; ++i) y[i] = i % 2;
    EnsembleConfig cfg;
    cfg.n_trees = 25;
    cfg.features_per_tree = 4;
    cfg.seed = 77;
    FitDiagnostics diag;
    EnsembleModel model = fit(x, y, cfg, &diag);
    REQUIRE(diag.feature_subsets.size() == model.trees.size());
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
        std::set<int> allowed(diag.feature_subsets[t].begin(), diag.feature_subsets[t].end());
        CHECK(allowed.size() == 4);
        for (const auto& node : model.trees[t])
            if (node.feature >= 0) CHECK(allowed.count(node.feature) == 1);
    }
}

TEST_CASE("fit is deterministic: identical serialized models") {
    Rng rng(5);
    FeatureMatrix x(24, 6);
    std::vector<int> y(24);
    for (double& v : x.data) v = rng.next_normal();
    for (std::size_t i = 0; i < 24; ++i) y[i] = i % 2;
    EnsembleConfig cfg;
    cfg.n_trees = 15;
    cfg.features_per_tree = 3;
    cfg.seed = 4242;

    auto serialize = [&](const EnsembleModel& m) {
        TrainedModel tm;
        tm.ensemble = m;
        tm.mask.p = 3;  // placeholder mask covering the 6 synthetic features
        tm.mask.n = 24;
        tm.mask.assignment.assign(9, PixelSet::A1);
        for (int i = 0; i < 6; ++i) tm.mask.assignment[static_cast<std::size_t>(i)] = PixelSet::A3;
        tm.selection.alphas = {0.0};
        return model_to_json(tm);
    };
    EnsembleModel a = fit(x, y, cfg);
    EnsembleModel b = fit(x, y, cfg);
    CHECK(serialize(a) == serialize(b));
    // rf mode determinism is independent of the thread count
    cfg.mode = EnsembleMode::rf;
    EnsembleModel r1 = fit(x, y, cfg, nullptr, 1);
    EnsembleModel r8 = fit(x, y, cfg, nullptr, 8);
    CHECK(serialize(r1) == serialize(r8));
}

TEST_CASE("fit rejects bad inputs") {
    FeatureMatrix x(4, 3);
    std::vector<int> one_class = {1, 1, 1, 1};
    EnsembleConfig cfg;
    cfg.features_per_tree = 2;
    CHECK_THROWS_AS(fit(x, one_class, cfg), InvalidArgument);
    std::vector<int> y = {0, 1, 0, 1};
    cfg.features_per_tree = 5;  // more than the feature dimension
    CHECK_THROWS_AS(fit(x, y, cfg), InvalidArgument);
    cfg.features_per_tree = 2;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(fit(x, y, cfg), InvalidArgument);
}

TEST_CASE("an empty ensemble predicts the logistic of the base score") {
    EnsembleModel model;
    model.base_score = 0.8472978603872034;  // log(0.7 / 0.3)
    model.feature_dim = 3;
    std::vector<double> x = {1.0, -2.0, 0.5};
    CHECK(predict_proba(model, x) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("probabilities stay in [0,1] and the label is the half threshold") {
    Rng rng(8);
    FeatureMatrix x(40, 5);
    std::vector<int> y(40);
    for (double& v : x.data) v = rng.next_normal();
    for (std::size_t i = 0; i < 40; ++i) y[i] = static_cast<int>(rng.next_u64() & 1);
    y[0] = 0;
    y[1] = 1;
    EnsembleConfig cfg;
    cfg.n_trees = 30;
    cfg.features_per_tree = 3;
    EnsembleModel model = fit(x, y, cfg);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> probe(5);
        for (double& v : probe) v = rng.next_normal() * 3;
        double proba = predict_proba(model, probe);
        CHECK(proba >= 0.0);
        CHECK(proba <= 1.0);
        CHECK(((proba > 0.5) ? 1 : 0) == ((predict_margin(model, probe) > 0.0) ? 1 : 0));
    }
    std::vector<double> wrong_dim(4);
    CHECK_THROWS_AS(predict_proba(model, wrong_dim), InvalidArgument);
}

TEST_CASE("rf mode votes and separates simple data") {
    FeatureMatrix x(20, 2);
    std::vector<int> y(20);
    Rng rng(15);
    for (int i = 0; i < 20; ++i) {
        y[i] = i < 10 ? 0 : 1;
        x.at(i, 0) = (y[i] ? 3.0 : -3.0) + rng.next_normal() * 0.1;
        x.at(i, 1) = rng.next_normal();
    }
    EnsembleConfig cfg;
    cfg.mode = EnsembleMode::rf;
    cfg.n_trees = 51;
    cfg.features_per_tree = 2;
    cfg.max_depth = 2;
    EnsembleModel model = fit(x, y, cfg);
    for (int i = 0; i < 20; ++i) {
        double vote = predict_proba(model, x.row(i));
        CHECK(vote >= 0.0);
        CHECK(vote <= 1.0);
        CHECK((vote > 0.5) == (y[i] == 1));
    }
}

TEST_CASE("roc hand examples") {
    RocCurve perfect = roc_curve({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
    CHECK(perfect.auc == doctest::Approx(1.0).epsilon(1e-15));

    RocCurve flat = roc_curve({0.4, 0.4, 0.4, 0.4}, {0, 0, 1, 1});
    CHECK(flat.auc == doctest::Approx(0.5).epsilon(1e-15));

    RocCurve hand = roc_curve({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    CHECK(hand.auc == doctest::Approx(0.75).epsilon(1e-15));

    CHECK_THROWS_AS(roc_curve({0.1, 0.2}, {1, 1}), InvalidArgument);
}

TEST_CASE("roc is a monotone staircase from (0,0) to (1,1)") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t n = 5 + rng.next_below(60);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::round(rng.next_double() * 8) / 8;  // force ties
            labels[i] = static_cast<int>(rng.next_u64() & 1);
        }
        labels[0] = 0;
        labels[1] = 1;
        RocCurve roc = roc_curve(scores, labels);
        CHECK(roc.fpr.front() == 0.0);
        CHECK(roc.tpr.front() == 0.0);
        CHECK(roc.fpr.back() == 1.0);
        CHECK(roc.tpr.back() == 1.0);
        for (std::size_t i = 1; i < roc.fpr.size(); ++i) {
            CHECK(roc.fpr[i] >= roc.fpr[i - 1]);
            CHECK(roc.tpr[i] >= roc.tpr[i - 1]);
        }
    }
}

TEST_CASE("trapezoid AUC equals the pair-counting oracle") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 10 + rng.next_below(190);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::round(rng.next_double() * 16) / 16;
            labels[i] = static_cast<int>(rng.next_u64() & 1);
        }
        labels[0] = 0;
        labels[1] = 1;
        RocCurve roc = roc_curve(scores, labels);
        double oracle = oracles::auc_pairs(scores, labels);
        CHECK(std::abs(roc.auc - oracle) <= 1e-12);
    }
}

TEST_CASE("flipping labels maps AUC to its complement") {
    Rng rng(44);
    std::vector<double> scores(60);
    std::vector<int> labels(60), flipped(60);
    for (std::size_t i = 0; i < 60; ++i) {
        scores[i] = rng.next_double();
        labels[i] = static_cast<int>(rng.next_u64() & 1);
        flipped[i] = 1 - labels[i];
    }
    labels[0] = 0;
    labels[1] = 1;
    flipped[0] = 1;
    flipped[1] = 0;
    double a = roc_curve(scores, labels).auc;
    double b = roc_curve(scores, flipped).auc;
    CHECK(a + b == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("baseline features: singleton stack and constants") {
    ImageStack one;
    one.m = 1;
    one.p = 2;
    one.data = {0.1f, 0.2f, 0.3f, 0.4f};
    DoubleImage r = baseline_features(one, BaselineKind::random_image, 5);
    DoubleImage m = baseline_features(one, BaselineKind::mean_image, 5);
    for (int i = 0; i < 4; ++i) {
        CHECK(r.v[i] == doctest::Approx(one.data[static_cast<std::size_t>(i)]).epsilon(1e-9));
        CHECK(m.v[i] == doctest::Approx(one.data[static_cast<std::size_t>(i)]).epsilon(1e-9));
    }

    ImageStack constant;
    constant.m = 4;
    constant.p = 2;
    constant.data.assign(16, 0.3f);
    DoubleImage cm = baseline_features(constant, BaselineKind::mean_image, 0);
    for (double v : cm.v) CHECK(v == doctest::Approx(0.3).epsilon(1e-7));
}

TEST_CASE("random baseline is seeded and uniform over slices") {
    ImageStack s;
    s.m = 5;
    s.p = 1;
    s.data = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};  // slice j has value j/4
    DoubleImage a = baseline_features(s, BaselineKind::random_image, 123);
    DoubleImage b = baseline_features(s, BaselineKind::random_image, 123);
    CHECK(a.v == b.v);

    std::vector<int> counts(5, 0);
    const int draws = 1000;
    for (int seed = 0; seed < draws; ++seed) {
        DoubleImage img = baseline_features(s, BaselineKind::random_image, static_cast<std::uint64_t>(seed));
        counts[static_cast<std::size_t>(std::lround(img.v[0] * 4))]++;
    }
    // each slice frequency within 3 sigma of 1/m
    double expect = draws / 5.0;
    double sigma = std::sqrt(draws * 0.2 * 0.8);
    for (int c : counts) {
        CHECK(c > expect - 3 * sigma);
        CHECK(c < expect + 3 * sigma);
    }
}
