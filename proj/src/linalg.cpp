#include "ergolab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "ergolab/common.hpp"

namespace ergolab {

Mat Mat::identity(std::size_t n) {
    Mat I(n, n);
    for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

Mat operator*(const Mat& A, const Mat& B) {
    Mat C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
        }
    return C;
}

Mat transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

void matvec(const Mat& A, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < A.cols; ++j) s += A(i, j) * x[j];
        out[i] = s;
    }
}

double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm2sq(std::span<const double> x) { return dot(x, x); }
double norm2(std::span<const double> x) { return std::sqrt(norm2sq(x)); }

double frob_dot(std::span<const double> A, std::span<const double> B) { return dot(A, B); }
double frob_norm(std::span<const double> A) { return norm2(A); }

Vec solve_lu(Mat A, Vec b) {
    const std::size_t n = A.rows;
    if (A.cols != n || b.size() != n) throw EvalError("solve_lu: shape mismatch");
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(A(i, k)) > std::abs(A(piv, k))) piv = i;
        if (std::abs(A(piv, k)) < 1e-300) throw SolverError("solve_lu: singular matrix");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(A(k, j), A(piv, j));
            std::swap(b[k], b[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = A(i, k) / A(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) A(i, j) -= f * A(k, j);
            b[i] -= f * b[k];
        }
    }
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= A(ii, j) * x[j];
        x[ii] = s / A(ii, ii);
    }
    return x;
}

Mat invert(const Mat& A) {
    const std::size_t n = A.rows;
    Mat inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Vec e(n, 0.0);
        e[j] = 1.0;
        Vec col = solve_lu(A, std::move(e));
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
}

bool cholesky_solve(const Mat& G, const Mat& rhs, Mat& out) {
    const std::size_t n = G.rows;
    Mat L(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = G(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                L(i, i) = std::sqrt(s);
            } else {
                L(i, j) = s / L(j, j);
            }
        }
    }
    out = Mat(n, rhs.cols);
    for (std::size_t c = 0; c < rhs.cols; ++c) {
        Vec y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = rhs(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * y[k];
            y[i] = s / L(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= L(k, ii) * out(k, c);
            out(ii, c) = s / L(ii, ii);
        }
    }
    return true;
}

bool cholesky_solve(const Mat& G, const Vec& rhs, Vec& out) {
    Mat r(rhs.size(), 1);
    for (std::size_t i = 0; i < rhs.size(); ++i) r(i, 0) = rhs[i];
    Mat o;
    if (!cholesky_solve(G, r, o)) return false;
    out.resize(rhs.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) out[i] = o(i, 0);
    return true;
}

Vec sym_eigenvalues(Mat S) {
    const std::size_t n = S.rows;
    // Cyclic Jacobi: rotate away the largest off-diagonal entries per sweep.
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += S(i, j) * S(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(S(p, q)) < 1e-300) continue;
                const double theta = (S(q, q) - S(p, p)) / (2.0 * S(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double skp = S(k, p), skq = S(k, q);
                    S(k, p) = c * skp - s * skq;
                    S(k, q) = s * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double spk = S(p, k), sqk = S(q, k);
                    S(p, k) = c * spk - s * sqk;
                    S(q, k) = s * spk + c * sqk;
                }
            }
        }
    }
    Vec ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = S(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

double spectral_norm(const Mat& A) {
    Mat G = transpose(A) * A;
    Vec ev = sym_eigenvalues(std::move(G));
    return std::sqrt(std::max(0.0, ev.back()));
}

double min_singular_value(const Mat& A) {
    Mat G = transpose(A) * A;
    Vec ev = sym_eigenvalues(std::move(G));
    return std::sqrt(std::max(0.0, ev.front()));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0) throw EvalError("normal_quantile: p outside (0,1)");
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const std::size_t m = x.size();
    LineFit f;
    if (m < 2) return f;
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / m, my = sy / m;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = (syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

}  // namespace ergolab
