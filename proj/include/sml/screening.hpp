#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sml/errors.hpp"
#include "sml/image.hpp"
#include "sml/matrix.hpp"

namespace sml {

enum class PixelSet : std::uint8_t { A1 = 1, A2 = 2, A3 = 3 };

// Partition of the p*p pixel coordinates (column-major order) into
//   A1: variance below (2 log n)^-1 — effectively constant, useless,
//   A2: means indistinguishable between the two groups (d below (log n)^-1),
//   A3: the rest — the coordinates kept for classification.
struct PixelMask {
    int p = 0;
    int n = 0;       // sample size the mask was fitted on
    double t1 = 0.0; // (2 log n)^-1
    double t2 = 0.0; // (log n)^-1
    std::vector<PixelSet> assignment;  // p*p entries

    std::size_t count(PixelSet s) const {
        std::size_t c = 0;
        for (PixelSet a : assignment) c += (a == s);
        return c;
    }

    std::vector<int> coords(PixelSet s) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == s) out.push_back(static_cast<int>(i));
        return out;
    }
};

// Per-coordinate statistics behind the partition.
struct ScreeningStats {
    std::vector<double> variance;  // population style, divide by n
    std::vector<double> mean_c1, mean_c2;
    std::vector<double> pooled;    // [(n1-1)s1 + (n2-1)s2] / (n-2)
    std::vector<double> d;         // squared mean difference over pooled variance
};

namespace detail {

inline void check_two_groups(const std::vector<int>& labels) {
    std::size_t n1 = 0, n2 = 0;
    for (int l : labels) (l == 0 ? n1 : n2)++;
    if (n1 < 2 || n2 < 2)
        throw InvalidArgument("screening: each group needs at least 2 members");
}

}  // namespace detail

// Coordinates whose population variance across the n rows falls below
// (2 log n)^-1. The threshold is scale-dependent; rows are expected in [0, 1].
inline std::vector<int> estimate_A1(const FeatureMatrix& z) {
    const std::size_t n = z.rows, q = z.cols;
    if (n < 2) throw InvalidArgument("estimate_A1: need n >= 2");
    const double t1 = 1.0 / (2.0 * std::log(static_cast<double>(n)));
    std::vector<double> mean(q, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        auto row = z.row(k);
        for (std::size_t i = 0; i < q; ++i) mean[i] += row[i];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> var(q, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        auto row = z.row(k);
        for (std::size_t i = 0; i < q; ++i) {
            double diff = row[i] - mean[i];
            var[i] += diff * diff;
        }
    }
    std::vector<int> out;
    for (std::size_t i = 0; i < q; ++i)
        if (var[i] / static_cast<double>(n) < t1) out.push_back(static_cast<int>(i));
    return out;
}

inline ScreeningStats screening_stats(const FeatureMatrix& z, const std::vector<int>& labels) {
    const std::size_t n = z.rows, q = z.cols;
    if (labels.size() != n) throw InvalidArgument("screening: label count mismatch");
    detail::check_two_groups(labels);
    double n1 = 0, n2 = 0;
    for (int l : labels) (l == 0 ? n1 : n2) += 1.0;

    ScreeningStats st;
    st.mean_c1.assign(q, 0.0);
    st.mean_c2.assign(q, 0.0);
    st.variance.assign(q, 0.0);
    st.pooled.assign(q, 0.0);
    st.d.assign(q, 0.0);

    std::vector<double> mean_all(q, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        auto row = z.row(k);
        auto& grp = labels[k] == 0 ? st.mean_c1 : st.mean_c2;
        for (std::size_t i = 0; i < q; ++i) {
            grp[i] += row[i];
            mean_all[i] += row[i];
        }
    }
    for (std::size_t i = 0; i < q; ++i) {
        st.mean_c1[i] /= n1;
        st.mean_c2[i] /= n2;
        mean_all[i] /= static_cast<double>(n);
    }

    std::vector<double> ss1(q, 0.0), ss2(q, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        auto row = z.row(k);
        const bool g1 = labels[k] == 0;
        auto& grp_mean = g1 ? st.mean_c1 : st.mean_c2;
        auto& grp_ss = g1 ? ss1 : ss2;
        for (std::size_t i = 0; i < q; ++i) {
            double dg = row[i] - grp_mean[i];
            grp_ss[i] += dg * dg;
            double da = row[i] - mean_all[i];
            st.variance[i] += da * da;
        }
    }
    for (std::size_t i = 0; i < q; ++i) {
        st.variance[i] /= static_cast<double>(n);
        // group variances are sample variances (divide by group - 1); the
        // pooled denominator weights them back, so this is ss1 + ss2 over n-2
        st.pooled[i] = (ss1[i] + ss2[i]) / (n1 + n2 - 2.0);
        double diff = st.mean_c1[i] - st.mean_c2[i];
        double num = diff * diff;
        if (st.pooled[i] > 0.0) {
            st.d[i] = num / st.pooled[i];
        } else {
            // zero pooled variance: equal means are fully explained (d = 0),
            // differing means separate the groups deterministically (d = inf)
            st.d[i] = num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        }
    }
    return st;
}

// The per-coordinate statistic d_i = (mean_C1 - mean_C2)^2 / pooled variance.
inline std::vector<double> mean_diff_stat(const FeatureMatrix& z, const std::vector<int>& labels) {
    return screening_stats(z, labels).d;
}

// Full partition: A1 by the variance threshold, A2 among the remaining
// coordinates by d below (log n)^-1, A3 the rest.
inline PixelMask estimate_mask(const FeatureMatrix& z, const std::vector<int>& labels, int p) {
    if (static_cast<std::size_t>(p) * p != z.cols)
        throw InvalidArgument("estimate_mask: cols must equal p*p");
    const std::size_t n = z.rows;
    ScreeningStats st = screening_stats(z, labels);

    PixelMask mask;
    mask.p = p;
    mask.n = static_cast<int>(n);
    mask.t1 = 1.0 / (2.0 * std::log(static_cast<double>(n)));
    mask.t2 = 1.0 / std::log(static_cast<double>(n));
    mask.assignment.assign(z.cols, PixelSet::A3);
    for (std::size_t i = 0; i < z.cols; ++i) {
        if (st.variance[i] < mask.t1)
            mask.assignment[i] = PixelSet::A1;
        else if (st.d[i] < mask.t2)
            mask.assignment[i] = PixelSet::A2;
    }
    return mask;
}

// Values of the kept coordinates in ascending coordinate order. Coordinates
// are column-major: coordinate c maps to pixel (c % p, c / p).
inline std::vector<double> apply_mask(const DoubleImage& img, const PixelMask& mask,
                                      PixelSet keep = PixelSet::A3) {
    if (img.p != mask.p) throw InvalidArgument("apply_mask: side length mismatch");
    const int p = mask.p;
    std::vector<double> out;
    out.reserve(mask.count(keep));
    for (std::size_t c = 0; c < mask.assignment.size(); ++c) {
        if (mask.assignment[c] == keep) {
            int r = static_cast<int>(c) % p;
            int col = static_cast<int>(c) / p;
            out.push_back(img.at(r, col));
        }
    }
    return out;
}

}  // namespace sml
