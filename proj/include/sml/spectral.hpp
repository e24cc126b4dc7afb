#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "sml/eigen.hpp"
#include "sml/errors.hpp"
#include "sml/image.hpp"
#include "sml/matrix.hpp"
#include "sml/stack.hpp"

namespace sml {

// Gram matrix of the vectorized slices, s_ij = <slice_i, slice_j>. Note this
// is deliberately uncentered (no mean subtraction), so for nonnegative
// intensities the leading eigenvector tracks overall slice energy.
inline SymMatrix gram_matrix(const ImageStack& stack) {
    if (stack.m < 2) throw InvalidArgument("gram_matrix: need at least 2 slices");
    const int m = stack.m;
    SymMatrix s(m);
    const std::size_t len = stack.slice_size();
    for (int i = 0; i < m; ++i) {
        const float* a = stack.data.data() + static_cast<std::size_t>(i) * len;
        for (int j = i; j < m; ++j) {
            const float* b = stack.data.data() + static_cast<std::size_t>(j) * len;
            double acc = 0.0;
            for (std::size_t k = 0; k < len; ++k)
                acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
            s.at(i, j) = acc;
            s.at(j, i) = acc;
        }
    }
    return s;
}

struct SignResult {
    std::vector<double> v;  // canonical orientation
    int sign = 1;           // +1 if the input already was canonical
    double auc = 0.0;       // rescaled-curve AUC of the *input* orientation
};

namespace detail {

// Trapezoid AUC of the min-max-rescaled polyline: indices map to x in [0, 1],
// values map to y in [0, 1].
inline double rescaled_auc(std::span<const double> v) {
    const std::size_t m = v.size();
    double lo = v[0], hi = v[0];
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double range = hi - lo;
    const double dx = 1.0 / static_cast<double>(m - 1);
    double auc = 0.0;
    double prev = (v[0] - lo) / range;
    for (std::size_t j = 1; j < m; ++j) {
        double cur = (v[j] - lo) / range;
        auc += dx * 0.5 * (prev + cur);
        prev = cur;
    }
    return auc;
}

}  // namespace detail

// Sign rule for the +-v ambiguity of eigenvectors: keep the orientation whose
// rescaled polyline has AUC above 0.5 (an AUC of exactly 0.5 maps to sign -1
// under the strict rule). Both orientations are scored, which makes
// normalize_sign(v) == normalize_sign(-v) bit-exact; the residual tie at
// AUC == 0.5 breaks on the first rescaled element.
inline SignResult normalize_sign(std::span<const double> v) {
    const std::size_t m = v.size();
    if (m < 2) throw InvalidArgument("normalize_sign: need at least 2 entries");
    double lo = v[0], hi = v[0];
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (lo == hi) throw DegenerateVector("normalize_sign: constant vector");

    std::vector<double> pos(v.begin(), v.end());
    std::vector<double> neg(m);
    for (std::size_t i = 0; i < m; ++i) neg[i] = -v[i];
    const double a_pos = detail::rescaled_auc(pos);
    const double a_neg = detail::rescaled_auc(neg);

    bool keep_pos;
    if (a_pos != a_neg) {
        keep_pos = a_pos > a_neg;
    } else {
        // exact tie: pick the orientation with the larger leading rescaled
        // value; identical leading values defer to the next index
        keep_pos = false;
        const double mid = 0.5 * (lo + hi);
        for (std::size_t i = 0; i < m; ++i) {
            if (v[i] > mid) {
                keep_pos = true;
                break;
            }
            if (v[i] < mid) break;
        }
    }
    SignResult out;
    out.auc = a_pos;
    out.sign = keep_pos ? 1 : -1;
    out.v = keep_pos ? std::move(pos) : std::move(neg);
    return out;
}

// Top spike eigenpairs of one scan's Gram matrix, sign-normalized, with the
// ascending sort order of each eigenvector.
struct SpikeBasis {
    std::vector<double> eigenvalues;               // descending
    std::vector<std::vector<double>> eigenvectors; // unit norm, canonical sign
    std::vector<std::vector<int>> sort_orders;     // ascending value order
    std::vector<int> signs;
    std::vector<bool> sign_degenerate;             // constant eigenvector, kept as-is
    bool second_degenerate = false;                // lambda2 <= 1e-12 * lambda1

    int m() const { return eigenvectors.empty() ? 0 : static_cast<int>(eigenvectors[0].size()); }

    // ell = 2 falls back to 1 when the second eigenvalue is rank-deficient;
    // degenerate scans select along the dominant direction instead of aborting.
    int effective_ell(int ell) const { return (ell == 2 && second_degenerate) ? 1 : ell; }
};

inline SpikeBasis spike_basis(const ImageStack& stack, const EigenOptions& opts = {}) {
    SymMatrix s = gram_matrix(stack);
    EigenPairs pairs = top_eigenpairs(s, 2, opts);

    SpikeBasis basis;
    basis.eigenvalues = pairs.values;
    basis.second_degenerate = pairs.values[1] <= 1e-12 * std::max(pairs.values[0], 0.0);
    for (auto& vec : pairs.vectors) {
        double lo = *std::min_element(vec.begin(), vec.end());
        double hi = *std::max_element(vec.begin(), vec.end());
        if (lo == hi) {
            basis.eigenvectors.push_back(vec);
            basis.signs.push_back(1);
            basis.sign_degenerate.push_back(true);
        } else {
            SignResult sr = normalize_sign(vec);
            basis.eigenvectors.push_back(std::move(sr.v));
            basis.signs.push_back(sr.sign);
            basis.sign_degenerate.push_back(false);
        }
        const auto& v = basis.eigenvectors.back();
        std::vector<int> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
        basis.sort_orders.push_back(std::move(order));
    }
    return basis;
}

// Nearest-rank quantile position in a sorted m-vector: 1 + round(alpha*(m-1)),
// 1-based. The quantile value is always an actual eigenvector entry.
inline int quantile_position(double alpha, int m) {
    if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("quantile: alpha outside [0, 1]");
    auto pos = 1 + static_cast<int>(std::llround(alpha * (m - 1)));
    return std::clamp(pos, 1, m);
}

// Slice index of the alpha-quantile image: the entry of the (unsorted)
// eigenvector closest to the sorted alpha-quantile value, smallest slice
// index on ties.
inline int quantile_index(const SpikeBasis& basis, int ell, double alpha) {
    if (ell != 1 && ell != 2) throw InvalidArgument("quantile_index: ell must be 1 or 2");
    const int use = basis.effective_ell(ell);
    const auto& v = basis.eigenvectors[use - 1];
    const auto& order = basis.sort_orders[use - 1];
    const int m = static_cast<int>(v.size());
    const double q = v[order[quantile_position(alpha, m) - 1]];
    int best = 0;
    double best_diff = std::abs(v[0] - q);
    for (int i = 1; i < m; ++i) {
        double diff = std::abs(v[i] - q);
        if (diff < best_diff) {
            best = i;
            best_diff = diff;
        }
    }
    return best;
}

// The quantile images for a list of levels. Coinciding quantiles duplicate
// their slice; duplicates are kept so they up-weight that slice in the mean.
inline std::vector<Image> select_quantile_images(const ImageStack& stack, const SpikeBasis& basis,
                                                 int ell, std::span<const double> alphas) {
    if (alphas.empty()) throw InvalidArgument("select_quantile_images: empty alpha list");
    std::vector<Image> out;
    out.reserve(alphas.size());
    for (double a : alphas) out.push_back(stack.slice_image(quantile_index(basis, ell, a)));
    return out;
}

// Element-wise arithmetic mean.
inline DoubleImage mean_image(const std::vector<Image>& images) {
    if (images.empty()) throw InvalidArgument("mean_image: empty list");
    const int p = images[0].p;
    for (const auto& img : images)
        if (img.p != p) throw InvalidArgument("mean_image: mixed side lengths");
    DoubleImage out(p);
    for (const auto& img : images)
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += img.v[i];
    const double inv = 1.0 / static_cast<double>(images.size());
    for (double& v : out.v) v *= inv;
    return out;
}

// Mean of all slices of a stack (the mean-image baseline feature). Accumulates
// in slice order, matching mean_image over the full slice list bit for bit.
inline DoubleImage mean_of_stack(const ImageStack& stack) {
    DoubleImage out(stack.p);
    for (int j = 0; j < stack.m; ++j) {
        auto s = stack.slice(j);
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += s[i];
    }
    const double inv = 1.0 / static_cast<double>(stack.m);
    for (double& v : out.v) v *= inv;
    return out;
}

}  // namespace sml
