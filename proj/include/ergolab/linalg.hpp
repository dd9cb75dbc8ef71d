// Dense linear algebra for desk-scale problems (state dim <= 16, small bases).
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ergolab {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Mat identity(std::size_t n);
};

Mat operator*(const Mat& A, const Mat& B);
Mat transpose(const Mat& A);

void matvec(const Mat& A, std::span<const double> x, std::span<double> out);
double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
double norm2sq(std::span<const double> x);

// Frobenius inner product / norm over row-major n*m buffers.
double frob_dot(std::span<const double> A, std::span<const double> B);
double frob_norm(std::span<const double> A);

// LU solve with partial pivoting; throws SolverError on (near-)singular input.
Vec solve_lu(Mat A, Vec b);
Mat invert(const Mat& A);

// SPD solve via Cholesky. Fails (returns false) when the factorization breaks
// down, e.g. rank-deficient normal equations; callers add ridge and retry.
bool cholesky_solve(const Mat& G, const Mat& rhs, Mat& out);
bool cholesky_solve(const Mat& G, const Vec& rhs, Vec& out);

// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending order.
Vec sym_eigenvalues(Mat S);

// Largest / smallest singular value via Jacobi on A^T A.
double spectral_norm(const Mat& A);
double min_singular_value(const Mat& A);

// Standard normal CDF and its inverse (bisection on the CDF).
double normal_cdf(double x);
double normal_quantile(double p);

// Ordinary least squares of y against columns [1, x]: returns {intercept,
// slope, r_squared}. Used by every log-linear rate fit in the lab.
struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
    double r2 = 0.0;
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace ergolab
