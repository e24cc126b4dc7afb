#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sml/errors.hpp"
#include "sml/matrix.hpp"
#include "sml/rng.hpp"

namespace sml {

struct EigenOptions {
    double tol_factor = 1e-10;      // iteration target, times ||S||_F
    double contract_factor = 1e-8;  // acceptance bound, times ||S||_F
    int max_iters = 0;              // 0 -> 10 * n
    bool dense_fallback = true;     // dense solve when the iteration stalls
};

struct EigenPairs {
    std::vector<double> values;                  // descending
    std::vector<std::vector<double>> vectors;    // unit norm
    std::vector<double> residuals;               // ||S v - lambda v|| per pair
    int iterations = 0;
    bool used_dense_fallback = false;
};

namespace detail {

inline double frobenius(const SymMatrix& s) {
    double acc = 0.0;
    for (double v : s.a) acc += v * v;
    return std::sqrt(acc);
}

inline void sym_matvec(const SymMatrix& s, const double* x, double* y) {
    const int n = s.n;
    for (int i = 0; i < n; ++i) {
        const double* row = s.a.data() + static_cast<std::size_t>(i) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

inline double dot(const double* a, const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// Modified Gram-Schmidt with re-orthogonalization. Columns that collapse are
// replaced from a deterministic stream and orthogonalized again.
inline void orthonormalize(std::vector<std::vector<double>>& cols, Rng& rng) {
    const int n = static_cast<int>(cols.empty() ? 0 : cols[0].size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t prev = 0; prev < c; ++prev) {
                    double proj = dot(cols[c].data(), cols[prev].data(), n);
                    for (int i = 0; i < n; ++i) cols[c][i] -= proj * cols[prev][i];
                }
            }
            double norm = std::sqrt(dot(cols[c].data(), cols[c].data(), n));
            if (norm > 1e-154) {
                for (int i = 0; i < n; ++i) cols[c][i] /= norm;
                break;
            }
            for (int i = 0; i < n; ++i) cols[c][i] = rng.next_normal();
        }
    }
}

// Cyclic Jacobi for small symmetric blocks (the Rayleigh-Ritz step).
// Returns eigenvalues descending with the rotation matrix columns matching.
inline void jacobi_small(std::vector<double>& a, int n, std::vector<double>& values,
                         std::vector<double>& vecs) {
    values.assign(static_cast<std::size_t>(n), 0.0);
    vecs.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) vecs[static_cast<std::size_t>(i) * n + i] = 1.0;
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };

    double scale = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) scale = std::max(scale, std::abs(at(i, j)));
    if (scale > 0.0) {
        for (int sweep = 0; sweep < 64; ++sweep) {
            double off = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
            if (std::sqrt(off) <= 1e-15 * scale * n) break;
            for (int p = 0; p < n; ++p) {
                for (int q = p + 1; q < n; ++q) {
                    double apq = at(p, q);
                    if (std::abs(apq) <= 1e-300) continue;
                    double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                    double t = (theta >= 0 ? 1.0 : -1.0) /
                               (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    double c = 1.0 / std::sqrt(t * t + 1.0);
                    double s = t * c;
                    for (int k = 0; k < n; ++k) {
                        double akp = at(k, p), akq = at(k, q);
                        at(k, p) = c * akp - s * akq;
                        at(k, q) = s * akp + c * akq;
                    }
                    for (int k = 0; k < n; ++k) {
                        double apk = at(p, k), aqk = at(q, k);
                        at(p, k) = c * apk - s * aqk;
                        at(q, k) = s * apk + c * aqk;
                    }
                    for (int k = 0; k < n; ++k) {
                        double vkp = vecs[static_cast<std::size_t>(k) * n + p];
                        double vkq = vecs[static_cast<std::size_t>(k) * n + q];
                        vecs[static_cast<std::size_t>(k) * n + p] = c * vkp - s * vkq;
                        vecs[static_cast<std::size_t>(k) * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    for (int i = 0; i < n; ++i) values[i] = at(i, i);
    // sort descending, carrying columns along
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return values[x] > values[y]; });
    std::vector<double> sv(values);
    std::vector<double> svec(vecs);
    for (int i = 0; i < n; ++i) {
        values[i] = sv[order[i]];
        for (int k = 0; k < n; ++k)
            vecs[static_cast<std::size_t>(k) * n + i] = svec[static_cast<std::size_t>(k) * n + order[i]];
    }
}

// Householder reduction to tridiagonal form with transform accumulation,
// followed by implicit-shift QL. Classic dense symmetric solve, O(n^3).
inline void dense_symmetric_eigen(const SymMatrix& s, std::vector<double>& d,
                                  std::vector<std::vector<double>>& z) {
    const int n = s.n;
    d.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    z.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) z[i][j] = s.at(i, j);

    for (int i = n - 1; i >= 1; --i) {
        int l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (int k = 0; k <= l; ++k) scale += std::abs(z[i][k]);
            if (scale == 0.0) {
                e[i] = z[i][l];
            } else {
                for (int k = 0; k <= l; ++k) {
                    z[i][k] /= scale;
                    h += z[i][k] * z[i][k];
                }
                double f = z[i][l];
                double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
                e[i] = scale * g;
                h -= f * g;
                z[i][l] = f - g;
                f = 0.0;
                for (int j = 0; j <= l; ++j) {
                    z[j][i] = z[i][j] / h;
                    g = 0.0;
                    for (int k = 0; k <= j; ++k) g += z[j][k] * z[i][k];
                    for (int k = j + 1; k <= l; ++k) g += z[k][j] * z[i][k];
                    e[j] = g / h;
                    f += e[j] * z[i][j];
                }
                double hh = f / (h + h);
                for (int j = 0; j <= l; ++j) {
                    f = z[i][j];
                    e[j] = g = e[j] - hh * f;
                    for (int k = 0; k <= j; ++k) z[j][k] -= f * e[k] + g * z[i][k];
                }
            }
        } else {
            e[i] = z[i][l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (int i = 0; i < n; ++i) {
        int l = i - 1;
        if (d[i] != 0.0) {
            for (int j = 0; j <= l; ++j) {
                double g = 0.0;
                for (int k = 0; k <= l; ++k) g += z[i][k] * z[k][j];
                for (int k = 0; k <= l; ++k) z[k][j] -= g * z[k][i];
            }
        }
        d[i] = z[i][i];
        z[i][i] = 1.0;
        for (int j = 0; j <= l; ++j) z[j][i] = z[i][j] = 0.0;
    }

    for (int i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= 1e-300 + 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (iter++ == 50)
                    throw EigenError("dense eigensolver: QL did not converge", std::abs(e[l]));
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
                double sn = 1.0, cs = 1.0, p = 0.0;
                int i;
                for (i = m - 1; i >= l; --i) {
                    double f = sn * e[i];
                    double b = cs * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    sn = f / r;
                    cs = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * sn + 2.0 * cs * b;
                    p = sn * r;
                    d[i + 1] = g + p;
                    g = cs * r - b;
                    for (int k = 0; k < n; ++k) {
                        f = z[k][i + 1];
                        z[k][i + 1] = sn * z[k][i] + cs * f;
                        z[k][i] = cs * z[k][i] - sn * f;
                    }
                }
                if (r == 0.0 && i >= l) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

}  // namespace detail

// The count largest eigenvalues (by value) of a symmetric matrix with unit
// eigenvectors. Block orthogonal iteration with a Rayleigh-Ritz extraction;
// when the iteration cap passes without reaching the residual contract, a
// dense tridiagonal solve takes over (clustered trailing eigenvalues stall
// the block update long before the contract is met).
inline EigenPairs top_eigenpairs(const SymMatrix& s, int count, const EigenOptions& opts = {}) {
    const int n = s.n;
    if (n < 1) throw InvalidArgument("top_eigenpairs: empty matrix");
    if (count < 1 || count > n) throw InvalidArgument("top_eigenpairs: bad count");

    EigenPairs out;
    const double frob = detail::frobenius(s);
    if (frob == 0.0) {
        out.values.assign(static_cast<std::size_t>(count), 0.0);
        out.residuals.assign(static_cast<std::size_t>(count), 0.0);
        out.vectors.assign(static_cast<std::size_t>(count),
                           std::vector<double>(static_cast<std::size_t>(n), 0.0));
        for (int i = 0; i < count; ++i) out.vectors[i][i] = 1.0;
        return out;
    }
    const double tol = opts.tol_factor * frob;
    const double contract = opts.contract_factor * frob;
    const int cap = opts.max_iters > 0 ? opts.max_iters : 10 * n;

    auto residuals_of = [&](const std::vector<double>& vals,
                            const std::vector<std::vector<double>>& vecs) {
        std::vector<double> res(vals.size());
        std::vector<double> tmp(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < vals.size(); ++i) {
            detail::sym_matvec(s, vecs[i].data(), tmp.data());
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                double diff = tmp[k] - vals[i] * vecs[i][k];
                acc += diff * diff;
            }
            res[i] = std::sqrt(acc);
        }
        return res;
    };

    double stalled_residual = frob;
    if (count <= 8) {
        Rng rng(0x5eed0f0eULL);
        std::vector<std::vector<double>> q(static_cast<std::size_t>(count),
                                           std::vector<double>(static_cast<std::size_t>(n)));
        for (auto& col : q)
            for (double& v : col) v = rng.next_normal();
        detail::orthonormalize(q, rng);

        std::vector<std::vector<double>> w(q);
        std::vector<double> small(static_cast<std::size_t>(count) * count);
        std::vector<double> theta, u;
        for (int it = 1; it <= cap; ++it) {
            for (int c = 0; c < count; ++c) detail::sym_matvec(s, q[c].data(), w[c].data());
            for (int i = 0; i < count; ++i)
                for (int j = i; j < count; ++j) {
                    double v = detail::dot(q[i].data(), w[j].data(), n);
                    small[static_cast<std::size_t>(i) * count + j] = v;
                    small[static_cast<std::size_t>(j) * count + i] = v;
                }
            detail::jacobi_small(small, count, theta, u);

            // Ritz vectors r_c = Q * u_c and their images S * r_c = W * u_c.
            std::vector<std::vector<double>> ritz(static_cast<std::size_t>(count),
                                                  std::vector<double>(static_cast<std::size_t>(n), 0.0));
            std::vector<std::vector<double>> ritz_img(ritz);
            for (int c = 0; c < count; ++c)
                for (int j = 0; j < count; ++j) {
                    double coef = u[static_cast<std::size_t>(j) * count + c];
                    for (int k = 0; k < n; ++k) {
                        ritz[c][k] += coef * q[j][k];
                        ritz_img[c][k] += coef * w[j][k];
                    }
                }
            double worst = 0.0;
            for (int c = 0; c < count; ++c) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) {
                    double diff = ritz_img[c][k] - theta[c] * ritz[c][k];
                    acc += diff * diff;
                }
                worst = std::max(worst, std::sqrt(acc));
            }
            out.iterations = it;
            if (worst <= tol || (it == cap && worst <= contract)) {
                out.values = theta;
                out.vectors = std::move(ritz);
                for (auto& col : out.vectors) {
                    double norm = std::sqrt(detail::dot(col.data(), col.data(), n));
                    if (norm > 0)
                        for (double& v : col) v /= norm;
                }
                out.residuals = residuals_of(out.values, out.vectors);
                return out;
            }
            stalled_residual = worst;
            q = std::move(ritz_img);  // next power step, Ritz-aligned
            detail::orthonormalize(q, rng);
        }
    }

    if (!opts.dense_fallback)
        throw EigenError("top_eigenpairs: no convergence within iteration cap", stalled_residual);

    std::vector<double> d;
    std::vector<std::vector<double>> z;
    detail::dense_symmetric_eigen(s, d, z);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] > d[b]; });

    out.used_dense_fallback = true;
    out.values.clear();
    out.vectors.clear();
    for (int c = 0; c < count; ++c) {
        int col = order[c];
        out.values.push_back(d[col]);
        std::vector<double> v(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) v[k] = z[k][col];
        double norm = std::sqrt(detail::dot(v.data(), v.data(), n));
        if (norm > 0)
            for (double& x : v) x /= norm;
        out.vectors.push_back(std::move(v));
    }
    out.residuals = residuals_of(out.values, out.vectors);
    double worst = *std::max_element(out.residuals.begin(), out.residuals.end());
    if (worst > contract)
        throw EigenError("top_eigenpairs: dense solve missed the residual contract", worst);
    return out;
}

}  // namespace sml
