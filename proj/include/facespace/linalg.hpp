#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "facespace/error.hpp"
#include "facespace/matrix.hpp"

namespace facespace {

// Thin singular value decomposition A = U diag(s) V^T with s non-increasing.
// For an m x n input, U is m x r, V is n x r with r = min(m, n). Columns of U
// paired with zero singular values are left zero.
struct Svd {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

// Principal axes of a data cloud.
struct EigenBasis {
    std::vector<double> mean;   // column means, length D
    Matrix vectors;             // D x D, column k is the k-th direction
    std::vector<double> values; // D, non-increasing, >= 0
};

namespace detail {

struct HouseholderQr {
    Matrix r;                               // n x n upper triangular
    std::vector<std::vector<double>> house; // reflector k acts on entries [k, m)
    std::size_t m = 0;
};

// QR of an m x n matrix (m >= n) supplied column-wise as the rows of `at` (n x m).
inline HouseholderQr householder_qr(Matrix at) {
    const std::size_t n = at.rows();
    const std::size_t m = at.cols();
    HouseholderQr qr;
    qr.m = m;
    qr.house.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        double* x = at.row(k).data() + k;
        const std::size_t len = m - k;
        double norm = 0.0;
        for (std::size_t i = 0; i < len; ++i) norm += x[i] * x[i];
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        const double alpha = x[0] > 0.0 ? -norm : norm;
        std::vector<double> v(x, x + len);
        v[0] -= alpha;
        double vnorm = 0.0;
        for (double e : v) vnorm += e * e;
        vnorm = std::sqrt(vnorm);
        if (vnorm == 0.0) continue;
        for (double& e : v) e /= vnorm;
        for (std::size_t j = k + 1; j < n; ++j) {
            double* y = at.row(j).data() + k;
            double t = 0.0;
            for (std::size_t i = 0; i < len; ++i) t += v[i] * y[i];
            t *= 2.0;
            for (std::size_t i = 0; i < len; ++i) y[i] -= t * v[i];
        }
        x[0] = alpha;
        std::fill(x + 1, x + len, 0.0);
        qr.house[k] = std::move(v);
    }
    qr.r = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i <= j; ++i) qr.r(i, j) = at(j, i);
    return qr;
}

// y <- Q y for a length-m vector.
inline void apply_q(const HouseholderQr& qr, std::span<double> y) {
    for (std::size_t k = qr.house.size(); k-- > 0;) {
        const auto& v = qr.house[k];
        if (v.empty()) continue;
        double t = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) t += v[i] * y[k + i];
        t *= 2.0;
        for (std::size_t i = 0; i < v.size(); ++i) y[k + i] -= t * v[i];
    }
}

// y <- Q^T y for a length-m vector.
inline void apply_qt(const HouseholderQr& qr, std::span<double> y) {
    for (std::size_t k = 0; k < qr.house.size(); ++k) {
        const auto& v = qr.house[k];
        if (v.empty()) continue;
        double t = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) t += v[i] * y[k + i];
        t *= 2.0;
        for (std::size_t i = 0; i < v.size(); ++i) y[k + i] -= t * v[i];
    }
}

// One-sided (Hestenes) Jacobi SVD of a square matrix, sorted by s descending.
inline Svd jacobi_svd_square(const Matrix& a) {
    const std::size_t n = a.rows();
    Matrix wt = a.transposed(); // row j holds column j of the working matrix
    Matrix vt = Matrix::identity(n);
    const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(std::max<std::size_t>(n, 4));
    constexpr int max_sweeps = 80;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double* wp = wt.row(p).data();
                double* wq = wt.row(q).data();
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    alpha += wp[i] * wp[i];
                    beta += wq[i] * wq[i];
                    gamma += wp[i] * wq[i];
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = wp[i], y = wq[i];
                    wp[i] = c * x - s * y;
                    wq[i] = s * x + c * y;
                }
                double* vp = vt.row(p).data();
                double* vq = vt.row(q).data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) s[j] = norm2(wt.row(j));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return s[x] > s[y]; });

    Svd out;
    out.s.resize(n);
    out.u = Matrix(n, n);
    out.v = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.s[k] = s[j];
        for (std::size_t i = 0; i < n; ++i) {
            out.v(i, k) = vt(j, i);
            out.u(i, k) = s[j] > 0.0 ? wt(j, i) / s[j] : 0.0;
        }
    }
    return out;
}

inline double rank_tolerance(const Svd& svd, std::size_t m, std::size_t n) {
    if (svd.s.empty()) return 0.0;
    return static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * svd.s.front();
}

} // namespace detail

// Thin SVD via Householder QR followed by one-sided Jacobi on the triangular factor.
inline Svd svd(const Matrix& a, bool want_u = true) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    if (m < n) {
        Svd t = svd(a.transposed(), true);
        return Svd{std::move(t.v), std::move(t.s), std::move(t.u)};
    }
    auto qr = detail::householder_qr(a.transposed());
    Svd inner = detail::jacobi_svd_square(qr.r);
    Svd out;
    out.s = std::move(inner.s);
    out.v = std::move(inner.v);
    if (want_u) {
        out.u = Matrix(m, n);
        std::vector<double> col(m);
        for (std::size_t j = 0; j < n; ++j) {
            std::fill(col.begin(), col.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) col[i] = inner.u(i, j);
            detail::apply_q(qr, col);
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = col[i];
        }
    }
    return out;
}

// Moore-Penrose pseudo-inverse (n x m for an m x n input). Singular values
// below max(m, n) * eps * s_max are treated as zero.
inline Matrix pseudo_inverse(const Matrix& a) {
    const Svd d = svd(a, true);
    const double tol = detail::rank_tolerance(d, a.rows(), a.cols());
    Matrix p(a.cols(), a.rows());
    for (std::size_t r = 0; r < d.s.size(); ++r) {
        if (d.s[r] <= tol) continue;
        const double inv = 1.0 / d.s[r];
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double vi = d.v(i, r) * inv;
            if (vi == 0.0) continue;
            auto prow = p.row(i);
            for (std::size_t j = 0; j < a.rows(); ++j) prow[j] += vi * d.u(j, r);
        }
    }
    return p;
}

// pseudo_inverse(a) * y without forming the pseudo-inverse: the minimum-norm
// least-squares solution.
inline std::vector<double> pinv_solve(const Matrix& a, std::span<const double> y) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    if (m < n) return pseudo_inverse(a) * y;
    auto qr = detail::householder_qr(a.transposed());
    std::vector<double> z(y.begin(), y.end());
    detail::apply_qt(qr, z);
    const Svd d = detail::jacobi_svd_square(qr.r);
    const double tol = detail::rank_tolerance(d, m, n);
    std::vector<double> x(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        if (d.s[r] <= tol) continue;
        double uz = 0.0;
        for (std::size_t i = 0; i < n; ++i) uz += d.u(i, r) * z[i];
        const double coef = uz / d.s[r];
        for (std::size_t i = 0; i < n; ++i) x[i] += coef * d.v(i, r);
    }
    return x;
}

// PCA of an N x D data matrix: column mean, eigenvectors and eigenvalues of the
// sample covariance (divisor N - 1), computed from the SVD of the centered data.
// Each eigenvector's largest-magnitude component is made positive.
inline EigenBasis eigendecompose(const Matrix& data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (n < 2) throw DegenerateError("eigendecompose: need at least 2 rows, got " + std::to_string(n));
    EigenBasis basis;
    basis.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = data.row(i);
        for (std::size_t j = 0; j < d; ++j) basis.mean[j] += r[j];
    }
    for (double& m : basis.mean) m /= static_cast<double>(n);

    // Zero rows leave X^T X unchanged and give the QR a square-or-tall input.
    Matrix centered(std::max(n, d), d);
    for (std::size_t i = 0; i < n; ++i) {
        auto src = data.row(i);
        auto dst = centered.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] - basis.mean[j];
    }
    Svd s = svd(centered, false);
    basis.vectors = std::move(s.v);
    basis.values.resize(d);
    for (std::size_t k = 0; k < d; ++k) basis.values[k] = s.s[k] * s.s[k] / static_cast<double>(n - 1);

    for (std::size_t k = 0; k < d; ++k) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double a = std::abs(basis.vectors(i, k));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (basis.vectors(arg, k) < 0.0)
            for (std::size_t i = 0; i < d; ++i) basis.vectors(i, k) = -basis.vectors(i, k);
    }
    return basis;
}

// Sample covariance (divisor N - 1).
inline Matrix covariance(const Matrix& data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    Matrix c(d, d);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x[j] = data(i, j) - mean[j];
        for (std::size_t a = 0; a < d; ++a) {
            auto crow = c.row(a);
            for (std::size_t b = a; b < d; ++b) crow[b] += x[a] * x[b];
        }
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            c(a, b) /= static_cast<double>(n - 1);
            c(b, a) = c(a, b);
        }
    return c;
}

// Solves S x = b for symmetric positive-definite S by Cholesky. Returns nullopt
// when a pivot falls below rel_pivot * max(diag S).
inline std::optional<std::vector<double>> solve_spd(const Matrix& s, std::span<const double> b,
                                                    double rel_pivot = 1e-12) {
    const std::size_t n = s.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, s(i, i));
    if (!(max_diag > 0.0)) return std::nullopt;
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = s(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > rel_pivot * max_diag)) return std::nullopt;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = s(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / ljj;
        }
    }
    std::vector<double> y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
        y[i] /= l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) y[i] -= l(k, i) * y[k];
        y[i] /= l(i, i);
    }
    return y;
}

} // namespace facespace
