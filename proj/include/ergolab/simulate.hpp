// Forward simulation: Euler-Maruyama ensembles, tangent (first-variation)
// processes, moment-decay fits, and streaming long-run averages.
//
// Path i draws its noise from a counter-based stream keyed by (seed, stream
// name, i): growing n_paths appends paths without reshuffling existing ones,
// extending the horizon reuses earlier increments, and two laws simulated
// with the same seed/stream share their Brownian increments exactly (common
// random numbers).
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ergolab/model.hpp"

namespace ergolab {

struct TimeGrid {
    double t_start = 0.0;
    double dt = 0.01;
    int n_steps = 0;

    double t(int i) const { return t_start + dt * i; }
    double t_end() const { return t(n_steps); }
    // Index of the grid point nearest to t (clamped).
    int index_of(double tt) const;
};

inline constexpr double kBlowupThreshold = 1e8;

// Slice-major storage: states[(i * n_paths + j) * n + d] holds X^j_d(t_i).
struct PathEnsemble {
    TimeGrid grid;
    int n = 1, m = 1;
    int n_paths = 0;
    Vec x0;
    std::uint64_t seed = 0;
    std::string stream = "forward";
    std::uint64_t model_fingerprint = 0;

    Vec states;      // (n_steps+1) * n_paths * n
    Vec increments;  // n_steps * n_paths * n, empty when not stored
    Vec controls;    // n_steps * n_paths * m, empty when not stored
    Warnings warnings;

    double state(int i, int j, int d) const {
        return states[(static_cast<std::size_t>(i) * n_paths + j) * n + d];
    }
    std::span<const double> state_at(int i, int j) const {
        return {states.data() + (static_cast<std::size_t>(i) * n_paths + j) * n,
                static_cast<std::size_t>(n)};
    }
    std::span<const double> increment_at(int i, int j) const {
        return {increments.data() + (static_cast<std::size_t>(i) * n_paths + j) * n,
                static_cast<std::size_t>(n)};
    }
    std::span<const double> control_at(int i, int j) const {
        return {controls.data() + (static_cast<std::size_t>(i) * n_paths + j) * m,
                static_cast<std::size_t>(m)};
    }
};

struct SimulateOptions {
    std::string stream = "forward";
    bool store_increments = true;
    bool store_controls = true;
    bool check_blowup = true;
    // Optional stability hint from the assumption report: warn when
    // dt > 1 / (4 * lipschitz^2).
    std::optional<double> lipschitz_hat;
    // Scatter initial states: path j starts at x0 + spread * Z_j instead of
    // x0 exactly (used by backward solvers that need slice-0 dispersion).
    double initial_spread = 0.0;
};

PathEnsemble simulate_forward(const ControlledDiffusion& model, const ControlLaw& law,
                              const TimeGrid& grid, int n_paths, Vec x0, std::uint64_t seed,
                              const SimulateOptions& opt = {});

// First-variation process along stored paths: V(0) = h,
// dV = grad_x b V dt + sum_k V_k (d sigma/d x_k) dW, control frozen per path.
struct TangentEnsemble {
    TimeGrid grid;
    int n = 1;
    int n_paths = 0;
    Vec h;
    Vec values;  // (n_steps+1) * n_paths * n
    std::span<const double> value_at(int i, int j) const {
        return {values.data() + (static_cast<std::size_t>(i) * n_paths + j) * n,
                static_cast<std::size_t>(n)};
    }
};

// use_fd = false demands analytic gradients and errors otherwise with a hint
// to enable the finite-difference fallback.
TangentEnsemble simulate_tangent(const ControlledDiffusion& model, const ControlLaw& law,
                                 const PathEnsemble& paths, Vec h, bool use_fd = true);

// Second-moment curve m2(t_i) = mean_j ||X^j(t_i)||^2 without storing paths;
// the ensemble-free route for large n_paths.
Vec second_moment_curve(const ControlledDiffusion& model, const ControlLaw& law,
                        const TimeGrid& grid, int n_paths, const Vec& x0, std::uint64_t seed,
                        const std::string& stream = "forward");

struct MomentFit {
    double mu_hat = 0.0;       // fitted decay rate of E||X_t||^2 toward its tail level
    double c_hat = 0.0;        // tail (stationary proxy) level
    double r2 = 0.0;
    bool inconclusive = false;
    std::string note;
    Vec times, m2;             // the fitted curve
};

MomentFit estimate_moment_bound(const PathEnsemble& ensemble);
MomentFit fit_moment_curve(Vec times, Vec m2);

struct LongRunAverage {
    double lambda_hat = 0.0;
    double ci_half_width = 0.0;  // 1.96 * stderr across paths
    int n_paths = 0;
    double horizon = 0.0, burn_in = 0.0;
};

// Time-averaged running cost after burn-in, averaged across paths; CI from
// across-path variance. Streaming (no ensemble storage).
LongRunAverage long_run_average(const ControlledDiffusion& model, const ControlLaw& law,
                                double horizon, double dt, int n_paths, const Vec& x0,
                                std::uint64_t seed, double burn_in,
                                const std::string& stream = "forward");

}  // namespace ergolab
