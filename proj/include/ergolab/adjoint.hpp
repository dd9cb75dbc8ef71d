// Backward costate equations by least-squares Monte Carlo: per-slice
// polynomial regression of (Y, Z) on the state, explicit driver, and a
// horizon-truncation loop whose Cauchy gaps certify the infinite-horizon
// limit.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ergolab/simulate.hpp"

namespace ergolab {

struct RegressionBasis {
    int n = 1;
    int degree = 3;
    std::vector<std::vector<int>> exponents;  // multi-indices, degree-lex order

    static RegressionBasis polynomial(int n, int degree);
    int features() const { return static_cast<int>(exponents.size()); }
    void eval(std::span<const double> x, std::span<double> out) const;
};

// One time slice of the fitted solution. Coefficients act on standardized
// features; evaluation clamps the state into the central data range
// (constant extrapolation) so polynomial tails never leave the fitted region.
struct SliceFit {
    Vec f_mean, f_scale;           // feature standardization
    Mat coef_y;                    // n x p
    Mat coef_z;                    // (n*n) x p, empty when Z was not fitted
    Vec clamp_lo, clamp_hi;        // per state dimension
    Mat ginv;                      // p x p, inverse standardized normal matrix
    double resid_sd_y = 0.0;       // RMS regression residual, worst Y component
    double resid_sd_z = 0.0;
    double cond = 0.0;
    bool ridged = false;
};

struct BsdeDiagnostics {
    double cond_max = 0.0;
    int ridge_count = 0;
    Warnings warnings;
};

class BsdeSolution {
  public:
    TimeGrid grid;
    RegressionBasis basis;
    int n = 1;
    std::uint64_t model_fingerprint = 0;
    std::vector<SliceFit> slices;  // one per grid point
    double eval_lo = 0.0, eval_hi = 0.0;  // valid evaluation window in t
    BsdeDiagnostics diagnostics;

    Vec eval_Y(double t, std::span<const double> x) const;
    Mat eval_Z(double t, std::span<const double> x) const;
    // Delta-method standard errors of the fitted values at (t, x).
    double se_Y(double t, std::span<const double> x) const;
    double se_Z(double t, std::span<const double> x) const;
    // Drop slices outside [t_lo, t_hi] and narrow the evaluation window.
    void restrict(double t_lo, double t_hi);

  private:
    const SliceFit& slice_at(double t) const;
    void features_clamped(const SliceFit& s, std::span<const double> x, Vec& phi) const;
};

using TerminalGradient = std::function<void(std::span<const double> x, std::span<double> out)>;

// Driver override: out = f(t, x, u, y_next, z). The backward recursion is
// target = y_next + f * dt; the default f is the x-gradient of the
// Hamiltonian. The discounted value solver passes (L - alpha y) instead.
using DriverFn = std::function<void(double t, std::span<const double> x,
                                    std::span<const double> u, std::span<const double> y_next,
                                    const Mat& z, std::span<double> out)>;

struct FhAdjointOptions {
    int picard_iterations = 0;     // extra implicit refinements of the driver
    double ridge_condition = 1e8;  // switch to ridge above this condition number
    bool fit_z = true;
    int y_dim = 0;                 // 0 = model.n; custom drivers may use 1
    DriverFn custom_driver;        // empty = Hamiltonian x-gradient
};

BsdeSolution solve_fh_adjoint(const ControlledDiffusion& model, const ControlLaw& law,
                              const PathEnsemble& ensemble, const RegressionBasis& basis,
                              const TerminalGradient& terminal_grad,
                              const FhAdjointOptions& opt = {});

struct IhAdjointOptions {
    double k = 1.0;                // verified dissipativity rate
    double T0 = 1.0;               // returned evaluation window [0, T0]
    double T_init = 0.0;           // 0 = auto: max(4/k, T0 + 4/k)
    double growth = 1.5;           // horizon multiplier
    double tol = 5e-3;             // Cauchy stopping tolerance (sup norm)
    int min_gaps = 3;              // gaps required before stopping (decay fit needs them)
    int max_solves = 12;
    double spawn = 0.0;            // 0 = auto: 4/k of pre-roll so slice 0 is dispersed
    double dt = 0.02;
    int n_paths = 20000;
    int basis_degree = 3;
    Vec x0;
    std::uint64_t seed = 7;
    std::string stream = "adjoint";
    int eval_grid_points = 33;
    int eval_paths = 2048;
    int picard_iterations = 0;
};

struct CauchyRecord {
    double horizon = 0.0;
    double gap = 0.0;
};

struct IhAdjointSolution {
    BsdeSolution solution;         // restricted to [0, T0]
    std::vector<CauchyRecord> history;
    double decay_slope = 0.0;      // d log(gap) / d horizon
    double slope_ratio = 0.0;      // decay_slope / (-2 k)
    double final_horizon = 0.0;
    bool converged = false;
    Warnings warnings;
};

// Solves the zero-terminal finite-horizon equation on horizons T_init * g^j,
// sharing Brownian increments across horizons (counter-based streams), until
// successive slice-0 maps differ by at most tol in sup norm over the
// evaluation set. Throws SolverError when gaps fail to contract.
IhAdjointSolution solve_ih_adjoint(const ControlledDiffusion& model, const ControlLaw& law,
                                   const IhAdjointOptions& opt);

struct BoundCheck {
    double bound = 0.0;      // C / k
    double sup_norm = 0.0;   // sup over the ensemble of ||Y(t, X_t)||
    double slack = 1.1;
    bool pass = false;
    bool skipped = false;
    std::string note;
};

// Checks sup ||Y|| <= 1.1 * C/k when the model declares a gradient-cost
// bound C; skipped (with an explanatory note) otherwise.
BoundCheck verify_bound(const BsdeSolution& sol, const PathEnsemble& ensemble, double k,
                        std::optional<double> grad_cost_bound);

}  // namespace ergolab
