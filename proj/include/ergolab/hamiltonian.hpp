// Hamiltonian H(t,x,u,y,z) = <b,y> + <sigma,z>_F + L and its derivatives,
// plus pointwise minimization over the control.
#pragma once

#include <cstdint>
#include <optional>

#include "ergolab/model.hpp"

namespace ergolab {

// z is n x n, paired with sigma through the Frobenius inner product.
double eval_H(const ControlledDiffusion& model, double t, std::span<const double> x,
              std::span<const double> u, std::span<const double> y, const Mat& z);

// d H / d x_k = sum_i db_i/dx_k y_i + sum_ij dsigma_ij/dx_k z_ij + dL/dx_k.
Vec grad_H_x(const ControlledDiffusion& model, double t, std::span<const double> x,
             std::span<const double> u, std::span<const double> y, const Mat& z);
Vec grad_H_x(const GradientBundle& g, std::span<const double> y, const Mat& z);

Vec grad_H_u(const ControlledDiffusion& model, double t, std::span<const double> x,
             std::span<const double> u, std::span<const double> y, const Mat& z);
Vec grad_H_u(const GradientBundle& g, std::span<const double> y, const Mat& z);

struct MinimizeOptions {
    std::optional<SampleBox> bounds;   // box to search; unbounded descent if absent
    int grid_points = 33;              // per axis, per refinement level (dim <= 2)
    int refine_levels = 3;
    int max_iterations = 200;
    double tol = 1e-6;                 // on the projected gradient norm, scaled by 1+|H|
};

struct MinimizeResult {
    Vec u_star;
    double h_star = 0.0;
    int iterations = 0;
    bool converged = false;
    bool on_boundary = false;  // minimizer sits on the search box boundary
};

// Multiresolution grid scan (dim <= 2, bounded) followed by projected
// gradient descent with Armijo backtracking. Boundary minimizers are
// reported, not rejected.
MinimizeResult minimize_H_u(const ControlledDiffusion& model, double t,
                            std::span<const double> x, std::span<const double> y, const Mat& z,
                            std::span<const double> u_init, const MinimizeOptions& opt = {});

struct ConvexityProbe {
    double min_gap = 0.0;   // most negative midpoint-convexity slack found
    bool convex = false;    // min_gap >= -1e-9
    int n_samples = 0;
    Vec witness_px, witness_pu, witness_qx, witness_qu;  // worst sampled segment
    double witness_theta = 0.0;
};

// Joint convexity of (x, u) -> H: samples segments p, q in the (x, u) box
// and random (t, y, z), and checks
//   H(theta p + (1-theta) q) <= theta H(p) + (1-theta) H(q) + 1e-9.
ConvexityProbe probe_convexity(const ControlledDiffusion& model, const SampleBox& x_box,
                               const SampleBox& u_box, int n_samples, std::uint64_t seed);

}  // namespace ergolab
