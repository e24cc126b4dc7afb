#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sml/eigen.hpp"
#include "sml/errors.hpp"
#include "sml/matrix.hpp"
#include "sml/parallel.hpp"
#include "sml/rng.hpp"
#include "sml/screening.hpp"
#include "sml/spectral.hpp"

namespace sml {

// Chosen eigenvector index and quantile levels, with the misclustering error
// of every (alpha, ell) grid point that was evaluated.
struct AlphaSelection {
    int ell = 2;
    std::vector<double> alphas;
    std::vector<double> grid;
    std::vector<double> errors_ell1;
    std::vector<double> errors_ell2;
    double alpha_star = 0.0;
    double min_error = 0.5;
};

// Uncentered inner-product matrix across patients over the kept coordinates.
inline SymMatrix patient_gram(const FeatureMatrix& x) {
    if (x.cols < 1) throw InvalidArgument("patient_gram: empty feature vectors");
    const int n = static_cast<int>(x.rows);
    SymMatrix g(n);
    for (int i = 0; i < n; ++i) {
        auto a = x.row(static_cast<std::size_t>(i));
        for (int j = i; j < n; ++j) {
            auto b = x.row(static_cast<std::size_t>(j));
            double acc = 0.0;
            for (std::size_t k = 0; k < x.cols; ++k) acc += a[k] * b[k];
            g.at(i, j) = acc;
            g.at(j, i) = acc;
        }
    }
    return g;
}

// Lloyd's algorithm with k = 2: best of `restarts` seeded initializations by
// within-cluster sum of squares. Converges when centroid motion drops below
// 1e-9 or after 300 rounds; an emptied cluster is re-seeded from the point
// farthest from the surviving centroid.
inline std::vector<int> kmeans2(const std::vector<std::array<double, 2>>& pts, std::uint64_t seed,
                                int restarts) {
    const std::size_t n = pts.size();
    if (n < 2) throw InvalidArgument("kmeans2: need at least 2 points");
    if (restarts < 1) throw InvalidArgument("kmeans2: need at least 1 restart");

    auto dist2 = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
        double dx = a[0] - b[0], dy = a[1] - b[1];
        return dx * dx + dy * dy;
    };

    std::vector<int> best_labels;
    double best_wss = std::numeric_limits<double>::infinity();
    std::vector<int> labels(n, 0);

    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        std::size_t i0 = rng.next_below(n);
        std::size_t i1 = rng.next_below(n - 1);
        if (i1 >= i0) ++i1;
        std::array<std::array<double, 2>, 2> cent = {pts[i0], pts[i1]};

        for (int round = 0; round < 300; ++round) {
            for (std::size_t i = 0; i < n; ++i) {
                double d0 = dist2(pts[i], cent[0]);
                double d1 = dist2(pts[i], cent[1]);
                labels[i] = d1 < d0 ? 1 : 0;
            }
            std::array<std::array<double, 2>, 2> sum = {{{0, 0}, {0, 0}}};
            std::array<std::size_t, 2> count = {0, 0};
            for (std::size_t i = 0; i < n; ++i) {
                sum[labels[i]][0] += pts[i][0];
                sum[labels[i]][1] += pts[i][1];
                ++count[labels[i]];
            }
            for (int c = 0; c < 2; ++c) {
                if (count[c] == 0) {
                    // re-seed from the farthest point, smallest index on ties
                    int other = 1 - c;
                    std::size_t far = 0;
                    double far_d = -1.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        double d = dist2(pts[i], cent[other]);
                        if (d > far_d) {
                            far_d = d;
                            far = i;
                        }
                    }
                    sum[c] = pts[far];
                    count[c] = 1;
                    labels[far] = c;
                }
            }
            double motion = 0.0;
            for (int c = 0; c < 2; ++c) {
                std::array<double, 2> next = {sum[c][0] / static_cast<double>(count[c]),
                                              sum[c][1] / static_cast<double>(count[c])};
                motion = std::max(motion, std::sqrt(dist2(next, cent[c])));
                cent[c] = next;
            }
            if (motion < 1e-9) break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double d0 = dist2(pts[i], cent[0]);
            double d1 = dist2(pts[i], cent[1]);
            labels[i] = d1 < d0 ? 1 : 0;
        }
        double wss = 0.0;
        for (std::size_t i = 0; i < n; ++i) wss += dist2(pts[i], cent[labels[i]]);
        if (wss < best_wss) {
            best_wss = wss;
            best_labels = labels;
        }
    }
    return best_labels;
}

// Permutation-minimized mismatch fraction of two binary labelings; at most 0.5.
inline double misclustering_error(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw InvalidArgument("misclustering_error: length mismatch");
    if (pred.empty()) throw InvalidArgument("misclustering_error: empty labels");
    std::size_t mismatch = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) mismatch += (pred[i] != truth[i]);
    double e = static_cast<double>(mismatch) / static_cast<double>(pred.size());
    return std::min(e, 1.0 - e);
}

// alpha grid 0, step, 2*step, ..., 1 (51 points at the default step 0.02).
inline std::vector<double> make_grid(double step) {
    if (!(step > 0.0) || step > 1.0) throw InvalidArgument("grid step must be in (0, 1]");
    std::vector<double> grid;
    for (int i = 0;; ++i) {
        double a = std::min(1.0, i * step);
        grid.push_back(a);
        if (a >= 1.0) break;
    }
    return grid;
}

// The final quantile levels: `count` levels anchored at alpha_star, ascending
// with step 0.005 (5 levels) or 0.0025 (9 levels), clipped to [0, 1].
inline std::vector<double> quantile_levels(double alpha_star, int count) {
    if (count != 5 && count != 9) throw InvalidArgument("quantile count must be 5 or 9");
    const double step = count == 5 ? 0.005 : 0.0025;
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(std::min(1.0, alpha_star + i * step));
    return out;
}

// Grid evaluation shared by the in-memory and file-backed paths. fetch(k, ell,
// alpha) must return the vectorized (column-major) quantile image of patient k
// as doubles; it is called from worker threads and must be thread-safe.
template <typename Fetch>
AlphaSelection select_alphas_core(const std::vector<int>& labels, int p, Fetch&& fetch,
                                  const std::vector<double>& grid, int quantile_count,
                                  std::uint64_t seed, int threads,
                                  PixelSet gram_pixels = PixelSet::A3) {
    if (grid.empty()) throw InvalidArgument("select_alphas: empty grid");
    const std::size_t n = labels.size();
    const std::size_t g = grid.size();

    AlphaSelection sel;
    sel.grid = grid;
    sel.errors_ell1.assign(g, 0.5);
    sel.errors_ell2.assign(g, 0.5);

    parallel_for(2 * g, threads, [&](std::size_t idx) {
        const int ell = idx < g ? 1 : 2;
        const std::size_t gi = idx % g;
        FeatureMatrix z(n, static_cast<std::size_t>(p) * p);
        for (std::size_t k = 0; k < n; ++k)
            z.set_row(k, fetch(k, ell, grid[gi]));
        PixelMask mask = estimate_mask(z, labels, p);
        auto kept = mask.coords(gram_pixels);
        double error = 0.5;  // empty kept set scores as uninformative
        if (!kept.empty()) {
            FeatureMatrix x(n, kept.size());
            for (std::size_t k = 0; k < n; ++k) {
                auto row = z.row(k);
                for (std::size_t c = 0; c < kept.size(); ++c)
                    x.at(k, c) = row[static_cast<std::size_t>(kept[c])];
            }
            SymMatrix gram = patient_gram(x);
            EigenPairs pairs = top_eigenpairs(gram, 2);
            std::vector<std::array<double, 2>> pts(n);
            for (std::size_t k = 0; k < n; ++k)
                pts[k] = {pairs.vectors[0][k], pairs.vectors[1][k]};
            auto pred = kmeans2(pts, derive_seed(seed, static_cast<std::uint64_t>(ell), gi), 10);
            error = misclustering_error(pred, labels);
        }
        (ell == 1 ? sel.errors_ell1 : sel.errors_ell2)[gi] = error;
    });

    auto min1 = std::min_element(sel.errors_ell1.begin(), sel.errors_ell1.end());
    auto min2 = std::min_element(sel.errors_ell2.begin(), sel.errors_ell2.end());
    // ties prefer ell = 2, the empirically stronger direction
    if (*min2 <= *min1) {
        sel.ell = 2;
        sel.min_error = *min2;
        sel.alpha_star = grid[static_cast<std::size_t>(min2 - sel.errors_ell2.begin())];
    } else {
        sel.ell = 1;
        sel.min_error = *min1;
        sel.alpha_star = grid[static_cast<std::size_t>(min1 - sel.errors_ell1.begin())];
    }
    sel.alphas = quantile_levels(sel.alpha_star, quantile_count);
    return sel;
}

// In-memory variant over a cohort with precomputed per-patient bases.
inline AlphaSelection select_alphas(const Cohort& cohort, const std::vector<SpikeBasis>& bases,
                                    const std::vector<double>& grid, int quantile_count,
                                    std::uint64_t seed, int threads = 1,
                                    PixelSet gram_pixels = PixelSet::A3) {
    if (cohort.patients.size() != bases.size())
        throw InvalidArgument("select_alphas: basis count mismatch");
    if (cohort.patients.empty()) throw InvalidArgument("select_alphas: empty cohort");
    std::vector<int> labels;
    labels.reserve(cohort.patients.size());
    bool has0 = false, has1 = false;
    for (const auto& pt : cohort.patients) {
        labels.push_back(pt.label == Label::normal ? 0 : 1);
        (pt.label == Label::normal ? has0 : has1) = true;
    }
    if (!has0 || !has1) throw InvalidArgument("select_alphas: both labels required");
    const int p = cohort.patients[0].stack.p;
    auto fetch = [&](std::size_t k, int ell, double alpha) {
        int j = quantile_index(bases[k], ell, alpha);
        return vectorize_columns(cohort.patients[k].stack.slice_image(j));
    };
    return select_alphas_core(labels, p, fetch, grid, quantile_count, seed, threads, gram_pixels);
}

}  // namespace sml
