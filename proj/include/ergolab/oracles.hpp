// Closed-form references used to cross-validate the Monte Carlo machinery.
// These live in the library, not the tests, so any pipeline stage can check
// itself at runtime. Each oracle is an independent route: none of them call
// the simulators or regression solvers they certify.
#pragma once

#include <functional>

#include "ergolab/linalg.hpp"

namespace ergolab {

// Scalar ergodic LQ problem: dX = (a X + u) dt + sigma dW, cost q x^2 + r u^2.
struct RiccatiOracle {
    double a = -1.0, q = 1.0, r = 1.0, sigma = 1.0;

    // Positive root of P^2 / r - 2 a P - q = 0.
    double P() const;
    double K_star() const { return P() / r; }          // optimal gain u = -K x
    double lambda_star() const { return sigma * sigma * P(); }
    double residual() const;                           // |P^2/r - 2aP - q| at the root

    // Long-run average cost of the stationary feedback u = -K x.
    double lambda_of_gain(double K) const;
    // Slope of the stationary adjoint Y = c x under u = -K x (drift matching).
    double adjoint_slope(double K) const;
    // Finite-horizon adjoint slope c(tau), zero terminal condition, horizon
    // tau to go: c' = (2a - K) c + 2q integrated from c(0) = 0.
    double fh_adjoint_slope(double K, double tau) const;
    // Same quantity by fourth-order Runge-Kutta on the backward ODE; the
    // closed form above is checked against this independent route.
    double fh_adjoint_slope_rk4(double K, double tau, int steps = 4000) const;
};

// Scalar Ornstein-Uhlenbeck process dX = -k X dt + sigma dW.
struct OuOracle {
    double k = 1.0, sigma = 1.0;

    double mean(double x0, double t) const;
    double variance(double t) const;
    double stationary_variance() const { return sigma * sigma / (2.0 * k); }
    double second_moment(double x0, double t) const;
    // Total variation distance between laws started at x and y, time t.
    double tv_distance(double x, double y, double t) const;
    // P(|X_t - E X_t| <= radius).
    double centered_ball_probability(double radius, double t) const;
};

// Derivative-free maximizer of |f| over [lo, hi] (golden-section on a coarse
// bracket). Used to turn formula-level bounds like sup |dL/dx| into numbers.
double max_abs_on_interval(const std::function<double(double)>& f, double lo, double hi);

}  // namespace ergolab
