// Long-run-average cost via the vanishing-discount route: discounted value
// maps Y^alpha solved by backward regression, Richardson extrapolation of
// alpha * Y^alpha(0, x_ref) to alpha = 0, the normalized bias map v, and a
// cross-route consistency check of the average-cost identity.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ergolab/adjoint.hpp"

namespace ergolab {

struct DiscountedOptions {
    double alpha = 0.1;       // discount rate, > 0
    double horizon = 0.0;     // 0 = auto: 8/alpha (relative truncation error e^-8)
    double dt = 0.02;
    int n_paths = 4096;
    int mc_paths = 4096;      // companion plain-Monte-Carlo sample
    int basis_degree = 3;
    double k = 1.0;           // mixing rate; sets the dispersion pre-roll
    double spawn = 0.0;       // 0 = auto: 4/k
    Vec x0;
    std::uint64_t seed = 17;
    std::string stream = "ebsde";
    double eval_window = 1.0; // keep slices on [0, min(window, horizon)]
};

// Y^alpha(0,·) regression map plus an independent plain-MC estimate of
// Y^alpha(0, x0) for an honest confidence interval.
struct DiscountedSolution {
    double alpha = 0.0;
    double horizon = 0.0;
    double dt = 0.0;
    BsdeSolution solution;        // restricted to [0, eval_window]
    double mc_value = 0.0;        // mean of the discounted cost integral from x0
    double mc_ci_half_width = 0.0;
    Warnings warnings;
};

// Backward regression solve of the discounted value equation: zero terminal
// at the horizon, scalar driver L - alpha * y, no Z fit. Paths are pre-rolled
// from t = -spawn so the slice-0 regression sees dispersed states.
DiscountedSolution solve_discounted(const ControlledDiffusion& model, const ControlLaw& law,
                                    const DiscountedOptions& opt);

struct EbsdeOptions {
    Vec alpha_schedule = {0.4, 0.2, 0.1, 0.05};  // strictly decreasing
    double dt = 0.02;         // shared by every alpha so the time-stepping bias cancels
    int n_paths = 4096;
    int mc_paths = 4096;
    int basis_degree = 3;
    double k = 1.0;
    Vec x0;
    Vec x_ref;                // empty = x0
    std::uint64_t seed = 17;
    std::string stream = "ebsde";
    int growth_points = 256;  // sample size for the quadratic-envelope fit
};

struct AlphaRecord {
    double alpha = 0.0;
    double lambda_alpha = 0.0;    // alpha * Y^alpha(0, x_ref), regression value
    double ci_half_width = 0.0;   // alpha * companion-MC confidence half-width
    double mc_lambda = 0.0;       // alpha * companion-MC value at x0
};

struct GrowthFit {
    double c_prime = 0.0;  // envelope constant: sup |v| / (1 + ||x||^2) over test points
    double r2 = 0.0;       // quality of the linear fit of |v| against 1 + ||x||^2
    int n_points = 0;
};

// (lambda, v): extrapolated average cost and the normalized bias map
// v(t, x) = Y^{alpha_min}(t mod T*, x) - Y^{alpha_min}(0, x_ref).
class ErgodicSolution {
  public:
    double lambda_hat = 0.0;
    double lambda_ci_half_width = 0.0;
    std::vector<AlphaRecord> schedule;   // descending alpha
    BsdeSolution v_solution;             // smallest-alpha discounted map
    double v_ref = 0.0;                  // Y^{alpha_min}(0, x_ref)
    Vec x_ref;
    std::optional<double> period;
    GrowthFit growth;
    bool monotone_ok = true;   // alpha -> lambda(alpha) monotone up to joint CIs
    bool inconclusive = false;
    std::string note;
    Warnings warnings;

    // Normalized bias map; exactly zero at (0, x_ref). Aperiodic models
    // evaluate the stationary slice t = 0.
    double v(double t, std::span<const double> x) const;
};

ErgodicSolution solve_ebsde(const ControlledDiffusion& model, const ControlLaw& law,
                            const EbsdeOptions& opt = {});

// Pooled regression of the bias map over one period: spatial basis vs the
// basis over (x, cos(2 pi t / T*), sin(2 pi t / T*)). A genuine residual
// reduction is the evidence that v depends on t mod T*.
struct PeriodicFeatureCheck {
    double resid_plain = 0.0;
    double resid_periodic = 0.0;
    double reduction = 0.0;    // 1 - periodic/plain
    bool improves = false;     // reduction >= 5%
    int n_points = 0;
};

PeriodicFeatureCheck check_periodic_features(const ControlledDiffusion& model,
                                             const ControlLaw& law, const ErgodicSolution& sol,
                                             const EbsdeOptions& opt = {});

struct LambdaRoute {
    std::string name;
    double value = 0.0;
    double ci_half_width = 0.0;
};

struct ConsistencyOptions {
    double k = 1.0;
    double dt = 0.02;          // match the discounted solves so biases cancel
    double fh_horizon = 0.0;   // 0 = auto: 20/k
    double lra_horizon = 0.0;  // 0 = auto: 100/k
    double burn_in = 0.0;      // 0 = auto: 5/k
    int n_paths = 4096;
    int basis_degree = 3;
    Vec x0;
    Vec x0_alt;                // empty = x0 + 1.5 per coordinate
    std::uint64_t seed = 19;
    std::string stream = "ebsde-consistency";
};

// Three estimates of the same number: the extrapolated lambda, a long-run
// time average, and the finite-horizon value Y^{u,T}(0, x0)/T with its
// deterministic O(1/T) transient removed using the bias map.
struct LambdaConsistency {
    std::vector<LambdaRoute> routes;
    double fh_raw = 0.0;           // Y^{u,T}(0, x0) / T before the correction
    double fh_correction = 0.0;    // (v(x0) - mean v(X_T)) / T
    double max_pairwise_gap = 0.0;
    double worst_gap_over_ci = 0.0;  // max over pairs of gap / (ci_i + ci_j)
    bool consistent = false;         // every pairwise gap <= 2 * joint CI
    LongRunAverage start_a, start_b; // the two-start independence probe
    bool x0_independent = false;     // |lambda_a - lambda_b| <= 2 * joint CI
    Warnings warnings;
};

LambdaConsistency check_lambda_consistency(const ControlledDiffusion& model,
                                           const ControlLaw& law, const ErgodicSolution& sol,
                                           const ConsistencyOptions& opt = {});

}  // namespace ergolab
