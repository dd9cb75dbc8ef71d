// Ergodicity toolkit: derivative estimates for the transition semigroup
// (integration-by-parts and common-random-number finite differences), the
// strong-Feller gradient constant, a hitting-probability probe, and a
// two-phase coupling estimator for total-variation decay.
#pragma once

#include <cstdint>
#include <string>

#include "ergolab/simulate.hpp"

namespace ergolab {

using TestFunction = std::function<double(std::span<const double>)>;

struct GradientEstimate {
    double estimate = 0.0;
    double ci_half_width = 0.0;
    int n_paths = 0;
    double t = 0.0;
};

// Directional derivative of P_t psi at x along h via the martingale weight
// (1/t) E[ psi(X_t) integral_0^t (sigma^{-1} V_s)^T dW_s ], V the tangent
// process with V_0 = h.
GradientEstimate pt_gradient_weight(const ControlledDiffusion& model, const ControlLaw& law,
                                    const Vec& x, const Vec& h, const TestFunction& psi,
                                    double t, double dt, int n_paths, std::uint64_t seed,
                                    const std::string& stream = "ergodicity", bool use_fd = true);

// Same derivative by central differences with shared Brownian increments.
GradientEstimate pt_gradient_fd(const ControlledDiffusion& model, const ControlLaw& law,
                                const Vec& x, const Vec& h, const TestFunction& psi,
                                double t, double dt, int n_paths, double eps,
                                std::uint64_t seed, const std::string& stream = "ergodicity");

// Plain Monte Carlo value of P_t psi(x), for Lipschitz-in-x spot checks.
GradientEstimate pt_value(const ControlledDiffusion& model, const ControlLaw& law,
                          const Vec& x, const TestFunction& psi, double t, double dt,
                          int n_paths, std::uint64_t seed,
                          const std::string& stream = "ergodicity");

// ||grad P_t psi|| <= C_t ||psi||_inf with
//   C_t = (1 / (sigma_lo * t)) * sqrt((e^{(omega-k)t} - 1) / (omega - k)),
// degenerating to (1/sigma_lo) / sqrt(t) when omega == k.
double feller_gradient_bound(double k, double omega, double sigma_lo, double t);

struct HitProbability {
    double p_hat = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;      // Wilson 95% interval
    bool positive = false;                // interval bounded away from zero
    double detection_bound = 0.0;         // rule of three: 3/n when no path hit
    int n_paths = 0;
    std::string note;
};

HitProbability irreducibility_probe(const ControlledDiffusion& model, const ControlLaw& law,
                                    const Vec& x0, const Vec& center, double radius, double t,
                                    double dt, int n_paths, std::uint64_t seed,
                                    const std::string& stream = "coupling");

struct CouplingOptions {
    double k = 1.0;            // dissipativity rate (sets the default epoch)
    double epoch = 0.0;        // 0 = auto: 2/k
    double ball_radius = 0.0;  // 0 = auto-calibrated from a stationary pilot run
    double dt = 0.01;
    int n_pairs = 20000;
    int max_epochs = 10;
    int fit_from_epoch = 1;
    std::uint64_t seed = 11;
    std::string stream = "coupling";
};

struct TvFit {
    Vec times;      // epoch boundaries m * epoch
    Vec tv_hat;     // fraction of pairs not yet coupled
    double rho_hat = 0.0;   // fitted decay rate of tv_hat
    double c_hat = 0.0;     // fitted prefactor
    double r2 = 0.0;
    double epoch = 0.0, ball_radius = 0.0;
    int n_pairs = 0;
    bool inconclusive = false;
    std::string note;
};

// Two-phase coupling: chains run independently until both sit inside
// B_R(0) at an epoch boundary; the next epoch attempts a coupling (mirrored
// increments in 1D, a maximal coupling of the half-epoch Gaussian kernels
// for n >= 2); coupled pairs move together afterwards. P(not coupled by t)
// upper-bounds the total-variation distance between the two laws.
TvFit coupling_tv(const ControlledDiffusion& model, const ControlLaw& law,
                  const Vec& x, const Vec& y, const CouplingOptions& opt = {});

}  // namespace ergolab
