#include <doctest.h>

#include <cmath>

#include "sml/rng.hpp"
#include "sml/screening.hpp"

using namespace sml;

namespace {

// Planted three-way partition at the quantile-image level: fractions of
// constant coordinates, equal-mean two-point noise, and group-shifted signal.
struct Plant {
    FeatureMatrix z;
    std::vector<int> labels;
    std::vector<PixelSet> truth;
};

Plant make_plant(std::uint64_t seed, std::size_t n, int p, double frac_const, double frac_noise,
                 double noise_w, double signal_delta, double signal_w) {
    const std::size_t q = static_cast<std::size_t>(p) * p;
    Plant plant;
    plant.z = FeatureMatrix(n, q);
    plant.labels.resize(n);
    for (std::size_t k = 0; k < n; ++k) plant.labels[k] = k < n / 2 ? 0 : 1;
    plant.truth.resize(q);

    Rng rng(seed);
    for (std::size_t c = 0; c < q; ++c) {
        double u = static_cast<double>(c) / static_cast<double>(q);
        if (u < frac_const) {
            plant.truth[c] = PixelSet::A1;
            double value = 0.2 + 0.6 * rng.next_double();
            for (std::size_t k = 0; k < n; ++k) plant.z.at(k, c) = value;
        } else if (u < frac_const + frac_noise) {
            plant.truth[c] = PixelSet::A2;
            for (std::size_t k = 0; k < n; ++k)
                plant.z.at(k, c) = 0.5 + (rng.next_u64() & 1 ? noise_w : -noise_w);
        } else {
            plant.truth[c] = PixelSet::A3;
            for (std::size_t k = 0; k < n; ++k) {
                double center = plant.labels[k] == 0 ? 0.5 - signal_delta / 2 : 0.5 + signal_delta / 2;
                plant.z.at(k, c) = center + (rng.next_u64() & 1 ? signal_w : -signal_w);
            }
        }
    }
    return plant;
}

double f1_of(const std::vector<PixelSet>& truth, const std::vector<PixelSet>& pred, PixelSet s) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == s && pred[i] == s) tp += 1;
        if (truth[i] != s && pred[i] == s) fp += 1;
        if (truth[i] == s && pred[i] != s) fn += 1;
    }
    if (tp == 0) return 0.0;
    double precision = tp / (tp + fp);
    double recall = tp / (tp + fn);
    return 2 * precision * recall / (precision + recall);
}

}  // namespace

TEST_CASE("estimate_A1 hand thresholds") {
    // constant column inside A1, alternating 0/1 column outside: at n = 30 the
    // threshold is 1/(2 ln 30) ~ 0.147 and the alternating variance is 0.25
    FeatureMatrix z(30, 2);
    for (std::size_t k = 0; k < 30; ++k) {
        z.at(k, 0) = 0.7;
        z.at(k, 1) = k % 2 ? 1.0 : 0.0;
    }
    auto a1 = estimate_A1(z);
    REQUIRE(a1.size() == 1);
    CHECK(a1[0] == 0);

    // n = 250: t1 ~ 0.09057; an alternating 0/1 column has variance 0.25
    FeatureMatrix big(250, 1);
    for (std::size_t k = 0; k < 250; ++k) big.at(k, 0) = k % 2 ? 1.0 : 0.0;
    CHECK(estimate_A1(big).empty());

    // n = 2 with values {0, 1}: variance 0.25 < t1 = 1/(2 ln 2) ~ 0.7213
    FeatureMatrix tiny(2, 1);
    tiny.at(0, 0) = 0.0;
    tiny.at(1, 0) = 1.0;
    CHECK(estimate_A1(tiny).size() == 1);
}

TEST_CASE("mean_diff_stat hand pooled variance") {
    FeatureMatrix z(4, 1);
    z.at(0, 0) = 0.0;
    z.at(1, 0) = 2.0;
    z.at(2, 0) = 3.0;
    z.at(3, 0) = 5.0;
    std::vector<int> labels = {0, 0, 1, 1};
    auto d = mean_diff_stat(z, labels);
    CHECK(d[0] == doctest::Approx(4.5).epsilon(1e-15));
}

TEST_CASE("mean_diff_stat degenerate conventions") {
    // both groups the same constant: zero numerator, zero variance -> d = 0
    FeatureMatrix same(4, 1);
    for (std::size_t k = 0; k < 4; ++k) same.at(k, 0) = 0.3;
    std::vector<int> labels = {0, 0, 1, 1};
    CHECK(mean_diff_stat(same, labels)[0] == 0.0);

    // deterministic separation: zero variance, different means -> +inf, lands
    // in A3 (n = 8 keeps the 0/1 mixture variance 0.25 above t1 ~ 0.24)
    FeatureMatrix split(8, 1);
    std::vector<int> groups(8);
    for (std::size_t k = 0; k < 8; ++k) {
        groups[k] = k < 4 ? 0 : 1;
        split.at(k, 0) = k < 4 ? 0.0 : 1.0;
    }
    auto d = mean_diff_stat(split, groups);
    CHECK(std::isinf(d[0]));
    PixelMask mask = estimate_mask(split, groups, 1);
    CHECK(mask.assignment[0] == PixelSet::A3);
}

TEST_CASE("a group smaller than 2 is rejected") {
    FeatureMatrix z(3, 1);
    std::vector<int> labels = {0, 1, 1};
    CHECK_THROWS_AS(mean_diff_stat(z, labels), InvalidArgument);
}

TEST_CASE("all-constant images collapse into A1") {
    FeatureMatrix z(6, 4);
    for (std::size_t k = 0; k < 6; ++k)
        for (std::size_t c = 0; c < 4; ++c) z.at(k, c) = 0.4;
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    PixelMask mask = estimate_mask(z, labels, 2);
    CHECK(mask.count(PixelSet::A1) == 4);
    CHECK(mask.count(PixelSet::A2) == 0);
    CHECK(mask.count(PixelSet::A3) == 0);
}

TEST_CASE("planted partition is recovered") {
    Plant plant = make_plant(101, 200, 12, 0.2, 0.4, 0.35, 0.32, 0.33);
    PixelMask mask = estimate_mask(plant.z, plant.labels, 12);
    CHECK(f1_of(plant.truth, mask.assignment, PixelSet::A1) >= 0.95);
    CHECK(f1_of(plant.truth, mask.assignment, PixelSet::A2) >= 0.95);
    CHECK(f1_of(plant.truth, mask.assignment, PixelSet::A3) >= 0.95);
}

TEST_CASE("assignment is always an exact partition") {
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        std::size_t n = 4 + rng.next_below(30);
        int p = 2 + static_cast<int>(rng.next_below(5));
        FeatureMatrix z(n, static_cast<std::size_t>(p) * p);
        for (double& v : z.data) v = rng.next_double();
        std::vector<int> labels(n);
        for (std::size_t k = 0; k < n; ++k) labels[k] = k % 2;
        PixelMask mask = estimate_mask(z, labels, p);
        CHECK(mask.assignment.size() == static_cast<std::size_t>(p) * p);
        CHECK(mask.count(PixelSet::A1) + mask.count(PixelSet::A2) + mask.count(PixelSet::A3) ==
              mask.assignment.size());
        // A1 never leaks into A3: every below-threshold-variance coordinate is A1
        auto a1 = estimate_A1(z);
        for (int c : a1) CHECK(mask.assignment[static_cast<std::size_t>(c)] == PixelSet::A1);
    }
}

TEST_CASE("added equal-mean noise columns almost never reach A3") {
    std::size_t hits = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Plant plant = make_plant(1000 + seed, 100, 8, 0.2, 0.3, 0.35, 0.4, 0.33);
        // extend with 36 pure noise columns -> 10x10 grid
        const std::size_t q_old = plant.z.cols;
        FeatureMatrix wide(plant.z.rows, 100);
        Rng rng(seed * 31 + 7);
        for (std::size_t k = 0; k < plant.z.rows; ++k) {
            for (std::size_t c = 0; c < q_old; ++c) wide.at(k, c) = plant.z.at(k, c);
            for (std::size_t c = q_old; c < 100; ++c)
                wide.at(k, c) = 0.5 + (rng.next_u64() & 1 ? 0.35 : -0.35);
        }
        PixelMask mask = estimate_mask(wide, plant.labels, 10);
        for (std::size_t c = q_old; c < 100; ++c) {
            ++total;
            hits += mask.assignment[c] == PixelSet::A3;
        }
    }
    CHECK(static_cast<double>(total - hits) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("label permutation drives planted signal back to the null rate") {
    std::size_t kept_true = 0, kept_null = 0, signal_total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Plant plant = make_plant(2000 + seed, 200, 10, 0.2, 0.4, 0.35, 0.32, 0.33);
        PixelMask mask = estimate_mask(plant.z, plant.labels, 10);

        std::vector<int> shuffled = plant.labels;
        Rng rng(seed);
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[rng.next_below(i)]);
        PixelMask null_mask = estimate_mask(plant.z, shuffled, 10);

        for (std::size_t c = 0; c < plant.truth.size(); ++c) {
            if (plant.truth[c] != PixelSet::A3) continue;
            ++signal_total;
            kept_true += mask.assignment[c] == PixelSet::A3;
            kept_null += null_mask.assignment[c] == PixelSet::A3;
        }
    }
    CHECK(static_cast<double>(kept_true) / static_cast<double>(signal_total) >= 0.95);
    CHECK(static_cast<double>(kept_null) / static_cast<double>(signal_total) <= 0.05);
}

TEST_CASE("apply_mask follows column-major coordinates") {
    // 2x2 image [[a,b],[c,d]]; column-major coordinates 1..4 are (a, c, b, d)
    DoubleImage img(2);
    img.at(0, 0) = 1.0;  // a
    img.at(0, 1) = 2.0;  // b
    img.at(1, 0) = 3.0;  // c
    img.at(1, 1) = 4.0;  // d
    PixelMask mask;
    mask.p = 2;
    mask.assignment = {PixelSet::A3, PixelSet::A1, PixelSet::A1, PixelSet::A3};  // {1, 4} 1-based
    auto features = apply_mask(img, mask);
    REQUIRE(features.size() == 2);
    CHECK(features[0] == 1.0);  // a
    CHECK(features[1] == 4.0);  // d
}

TEST_CASE("apply_mask edge cases") {
    DoubleImage img(2);
    img.v = {1, 2, 3, 4};
    PixelMask empty;
    empty.p = 2;
    empty.assignment.assign(4, PixelSet::A1);
    CHECK(apply_mask(img, empty).empty());

    PixelMask all;
    all.p = 2;
    all.assignment.assign(4, PixelSet::A3);
    auto features = apply_mask(img, all);
    CHECK(features.size() == 4);
    // column-major vectorization of [[1,2],[3,4]] is (1, 3, 2, 4)
    CHECK(features == std::vector<double>{1, 3, 2, 4});

    PixelMask wrong;
    wrong.p = 3;
    wrong.assignment.assign(9, PixelSet::A3);
    CHECK_THROWS_AS(apply_mask(img, wrong), InvalidArgument);
}
