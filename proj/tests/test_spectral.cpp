#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sml/classifier.hpp"
#include "sml/rng.hpp"
#include "sml/spectral.hpp"
#include "sml/synth.hpp"

using namespace sml;

namespace {

ImageStack stack_from(std::vector<std::vector<float>> slices, int p) {
    ImageStack s;
    s.m = static_cast<int>(slices.size());
    s.p = p;
    for (auto& sl : slices) s.data.insert(s.data.end(), sl.begin(), sl.end());
    return s;
}

std::vector<double> random_vector(std::uint64_t seed, std::size_t m) {
    Rng rng(seed);
    std::vector<double> v(m);
    for (double& x : v) x = rng.next_double() * 2.0 - 1.0;
    return v;
}

}  // namespace

TEST_CASE("gram of hand slices") {
    ImageStack s = stack_from({{1, 0, 0, 1}, {0, 1, 1, 0}}, 2);
    SymMatrix g = gram_matrix(s);
    CHECK(g.at(0, 0) == 2.0);
    CHECK(g.at(0, 1) == 0.0);
    CHECK(g.at(1, 0) == 0.0);
    CHECK(g.at(1, 1) == 2.0);
}

TEST_CASE("gram is exactly symmetric and duplicates rows for duplicate slices") {
    Rng rng(9);
    ImageStack s;
    s.m = 5;
    s.p = 4;
    s.data.resize(5 * 16);
    for (float& v : s.data) v = static_cast<float>(rng.next_double());
    // duplicate slice 1 into slice 3
    std::copy_n(s.data.begin() + 16, 16, s.data.begin() + 3 * 16);
    SymMatrix g = gram_matrix(s);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(g.at(i, j) == g.at(j, i));
    for (int j = 0; j < 5; ++j) CHECK(g.at(1, j) == g.at(3, j));
}

TEST_CASE("normalize_sign worked example") {
    std::vector<double> v = {0.9, 0.1, 0.2};
    SignResult r = normalize_sign(v);
    CHECK(r.auc == doctest::Approx(0.28125).epsilon(1e-15));
    CHECK(r.auc == doctest::Approx(oracles::rescaled_polyline_area(v)).epsilon(1e-15));
    CHECK(r.sign == -1);
    CHECK(r.v[0] == -0.9);
    CHECK(r.v[1] == -0.1);
    CHECK(r.v[2] == -0.2);
}

TEST_CASE("normalize_sign is bit-exact under negation") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::size_t m = 2 + seed % 17;
        std::vector<double> v = random_vector(seed + 1, m);
        std::vector<double> neg(m);
        for (std::size_t i = 0; i < m; ++i) neg[i] = -v[i];
        SignResult a = normalize_sign(v);
        SignResult b = normalize_sign(neg);
        CHECK(a.v == b.v);
        CHECK(a.sign == -b.sign);
    }
}

TEST_CASE("strictly increasing ramp sits on the AUC boundary and flips") {
    std::vector<double> ramp = {1.0, 2.0, 3.0, 4.0, 5.0};
    SignResult r = normalize_sign(ramp);
    CHECK(r.auc == 0.5);
    CHECK(r.sign == -1);
    CHECK(r.v[0] == -1.0);
    // and the negated ramp returns the identical vector
    std::vector<double> neg = {-1.0, -2.0, -3.0, -4.0, -5.0};
    CHECK(normalize_sign(neg).v == r.v);
}

TEST_CASE("normalize_sign rejects constant vectors") {
    std::vector<double> v = {0.3, 0.3, 0.3};
    CHECK_THROWS_AS(normalize_sign(v), DegenerateVector);
}

TEST_CASE("two-cluster noiseless scan shows a sorted-eigenvector gap") {
    SynthParams sp;
    sp.n_normal = 1;
    sp.n_abnormal = 0;
    sp.m_min = 10;
    sp.m_max = 10;
    sp.p = 8;
    sp.noise_sd = 1e-9;
    sp.mean_shift = 0.4;
    sp.cluster_fraction = 0.3;
    Cohort cohort = synth_cohort(sp, 17);
    const ImageStack& stack = cohort.patients[0].stack;
    SpikeBasis basis = spike_basis(stack);

    bool gap_found = false;
    for (int ell = 1; ell <= 2; ++ell) {
        const auto& v = basis.eigenvectors[ell - 1];
        const auto& order = basis.sort_orders[ell - 1];
        std::vector<double> sorted;
        for (int idx : order) sorted.push_back(v[static_cast<std::size_t>(idx)]);
        double largest = 0.0, second = 0.0;
        for (std::size_t i = 1; i < sorted.size(); ++i) {
            double step = sorted[i] - sorted[i - 1];
            if (step > largest) {
                second = largest;
                largest = step;
            } else if (step > second) {
                second = step;
            }
        }
        if (largest > 10.0 * second) gap_found = true;
    }
    CHECK(gap_found);
}

TEST_CASE("all-identical slices degrade gracefully") {
    ImageStack s;
    s.m = 4;
    s.p = 3;
    s.data.assign(4 * 9, 0.25f);
    SpikeBasis basis = spike_basis(s);
    CHECK(basis.second_degenerate);
    CHECK(basis.effective_ell(2) == 1);
    CHECK(basis.eigenvalues[1] <= 1e-12 * basis.eigenvalues[0]);
    // quantile selection still works, whole range
    CHECK_NOTHROW(quantile_index(basis, 2, 0.0));
    CHECK_NOTHROW(quantile_index(basis, 1, 1.0));
}

TEST_CASE("slice permutation permutes eigenvector entries and keeps the spectrum") {
    SynthParams sp;
    sp.n_normal = 1;
    sp.n_abnormal = 0;
    sp.m_min = 8;
    sp.m_max = 8;
    sp.p = 6;
    sp.noise_sd = 0.05;
    Cohort cohort = synth_cohort(sp, 23);
    const ImageStack& stack = cohort.patients[0].stack;

    std::vector<int> perm = {5, 2, 7, 0, 3, 6, 1, 4};
    ImageStack shuffled;
    shuffled.m = stack.m;
    shuffled.p = stack.p;
    for (int j : perm) {
        auto s = stack.slice(j);
        shuffled.data.insert(shuffled.data.end(), s.begin(), s.end());
    }

    SpikeBasis a = spike_basis(stack);
    SpikeBasis b = spike_basis(shuffled);
    for (int ell = 0; ell < 2; ++ell) {
        CHECK(a.eigenvalues[ell] == doctest::Approx(b.eigenvalues[ell]).epsilon(1e-9));
        std::vector<double> sa, sb;
        for (int idx : a.sort_orders[ell]) sa.push_back(a.eigenvectors[ell][idx]);
        for (int idx : b.sort_orders[ell]) sb.push_back(b.eigenvectors[ell][idx]);
        REQUIRE(sa.size() == sb.size());
        // eigenvector accuracy is residual over spectral gap, well looser
        // than the eigenvalue tolerance
        for (std::size_t i = 0; i < sa.size(); ++i)
            CHECK(std::abs(sa[i] - sb[i]) <= 1e-5);
    }
}

TEST_CASE("uniform intensity rescale by a power of two leaves the basis bit-identical") {
    SynthParams sp;
    sp.n_normal = 1;
    sp.n_abnormal = 0;
    sp.m_min = 7;
    sp.m_max = 7;
    sp.p = 6;
    Cohort cohort = synth_cohort(sp, 29);
    ImageStack stack = cohort.patients[0].stack;
    ImageStack half = stack;
    for (float& v : half.data) v *= 0.5f;

    SpikeBasis a = spike_basis(stack);
    SpikeBasis b = spike_basis(half);
    for (int ell = 0; ell < 2; ++ell) {
        CHECK(a.eigenvectors[ell] == b.eigenvectors[ell]);
        CHECK(a.sort_orders[ell] == b.sort_orders[ell]);
        CHECK(b.eigenvalues[ell] == doctest::Approx(0.25 * a.eigenvalues[ell]).epsilon(1e-14));
    }
}

TEST_CASE("basis invariants hold on random stacks") {
    Rng seeds(404);
    for (int trial = 0; trial < 10; ++trial) {
        ImageStack s;
        s.m = 3 + static_cast<int>(seeds.next_below(8));
        s.p = 2 + static_cast<int>(seeds.next_below(6));
        s.data.resize(static_cast<std::size_t>(s.m) * s.p * s.p);
        Rng rng(seeds.next_u64());
        for (float& v : s.data) v = static_cast<float>(rng.next_double());
        SpikeBasis basis = spike_basis(s);

        CHECK(basis.eigenvalues[0] >= basis.eigenvalues[1]);
        CHECK(basis.eigenvalues[1] >= -1e-9);
        double n0 = 0, n1 = 0, d01 = 0;
        for (int i = 0; i < s.m; ++i) {
            n0 += basis.eigenvectors[0][i] * basis.eigenvectors[0][i];
            n1 += basis.eigenvectors[1][i] * basis.eigenvectors[1][i];
            d01 += basis.eigenvectors[0][i] * basis.eigenvectors[1][i];
        }
        CHECK(std::abs(n0 - 1.0) <= 1e-9);
        CHECK(std::abs(n1 - 1.0) <= 1e-9);
        CHECK(std::abs(d01) <= 1e-8);
        // stored sign satisfies the AUC rule
        for (int ell = 0; ell < 2; ++ell) {
            if (basis.sign_degenerate[ell]) continue;
            double auc = oracles::rescaled_polyline_area(basis.eigenvectors[ell]);
            CHECK(auc >= 0.5);
        }
        // sorting by sort_orders yields a monotone sequence
        for (int ell = 0; ell < 2; ++ell) {
            const auto& v = basis.eigenvectors[ell];
            const auto& order = basis.sort_orders[ell];
            for (std::size_t i = 1; i < order.size(); ++i)
                CHECK(v[order[i - 1]] <= v[order[i]]);
        }
    }
}

TEST_CASE("quantile endpoints select the smallest and largest elements") {
    ImageStack s;
    s.m = 5;
    s.p = 2;
    Rng rng(55);
    s.data.resize(20);
    for (float& v : s.data) v = static_cast<float>(rng.next_double());
    SpikeBasis basis = spike_basis(s);
    for (int ell = 1; ell <= 2; ++ell) {
        const auto& v = basis.eigenvectors[ell - 1];
        int lo = quantile_index(basis, ell, 0.0);
        int hi = quantile_index(basis, ell, 1.0);
        CHECK(v[lo] == *std::min_element(v.begin(), v.end()));
        CHECK(v[hi] == *std::max_element(v.begin(), v.end()));
    }
}

TEST_CASE("nearest-rank quantile position") {
    CHECK(quantile_position(0.5, 5) == 3);   // 1 + round(0.5 * 4)
    CHECK(quantile_position(0.0, 5) == 1);
    CHECK(quantile_position(1.0, 5) == 5);
    CHECK(quantile_position(0.5, 2) == 2);   // 1 + round(0.5) rounds away from zero
    CHECK(quantile_position(0.02, 10) == 1); // 1 + round(0.18)
}

TEST_CASE("quantile_index is monotone in alpha along the sorted values") {
    ImageStack s;
    s.m = 9;
    s.p = 3;
    Rng rng(77);
    s.data.resize(81);
    for (float& v : s.data) v = static_cast<float>(rng.next_double());
    SpikeBasis basis = spike_basis(s);
    for (int ell = 1; ell <= 2; ++ell) {
        const auto& v = basis.eigenvectors[ell - 1];
        double prev = -1e300;
        for (int step = 0; step <= 100; ++step) {
            double alpha = step / 100.0;
            double value = v[quantile_index(basis, ell, alpha)];
            CHECK(value >= prev);
            prev = value;
        }
    }
}

TEST_CASE("quantile ties break to the smallest slice index") {
    SpikeBasis basis;
    basis.eigenvalues = {4.0, 1.0};
    basis.eigenvectors = {{0.5, 0.1, 0.5, 0.7}, {0.4, 0.3, 0.2, 0.1}};
    for (auto& vec : basis.eigenvectors) {
        std::vector<int> order(vec.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return vec[a] < vec[b]; });
        basis.sort_orders.push_back(order);
    }
    basis.signs = {1, 1};
    basis.sign_degenerate = {false, false};
    // alpha chosen so the quantile value is the duplicated 0.5
    int idx = quantile_index(basis, 1, 0.6);  // position 1 + round(1.8) = 3 -> value 0.5
    CHECK(idx == 0);
}

TEST_CASE("select_quantile_images keeps duplicates and alpha order") {
    ImageStack s;
    s.m = 2;
    s.p = 1;
    s.data = {0.2f, 0.8f};
    SpikeBasis basis = spike_basis(s);
    std::vector<double> alphas = {0.0, 0.5, 1.0};
    auto images = select_quantile_images(s, basis, 1, alphas);
    REQUIRE(images.size() == 3);
    // m = 2: position of alpha 0.5 rounds up to the max element
    CHECK(images[1].v[0] == images[2].v[0]);
    CHECK(images[0].v[0] != images[2].v[0]);

    std::vector<double> five = {0.0, 0.005, 0.01, 0.015, 0.02};
    CHECK(select_quantile_images(s, basis, 1, five).size() == 5);
    CHECK_THROWS_AS(select_quantile_images(s, basis, 1, std::vector<double>{}), InvalidArgument);
}

TEST_CASE("mean_image examples") {
    Image a(1);
    a.v = {0.0f};
    Image b(1);
    b.v = {1.0f};
    DoubleImage mid = mean_image({a, b});
    CHECK(mid.v[0] == 0.5);

    Image c(2);
    c.v = {0.1f, 0.2f, 0.3f, 0.4f};
    DoubleImage same = mean_image({c, c, c});
    for (int i = 0; i < 4; ++i) CHECK(same.v[i] == doctest::Approx(c.v[i]).epsilon(1e-9));

    CHECK_THROWS_AS(mean_image({}), InvalidArgument);
}

TEST_CASE("mean of all slices equals the mean-image baseline bit for bit") {
    SynthParams sp;
    sp.n_normal = 1;
    sp.n_abnormal = 0;
    sp.m_min = 6;
    sp.m_max = 6;
    sp.p = 5;
    Cohort cohort = synth_cohort(sp, 31);
    const ImageStack& stack = cohort.patients[0].stack;
    std::vector<Image> all;
    for (int j = 0; j < stack.m; ++j) all.push_back(stack.slice_image(j));
    DoubleImage via_list = mean_image(all);
    DoubleImage via_baseline = baseline_features(stack, BaselineKind::mean_image, 0);
    CHECK(via_list.v == via_baseline.v);
}
