#include "ergolab/oracles.hpp"

#include <cmath>

#include "ergolab/common.hpp"

namespace ergolab {

double RiccatiOracle::P() const {
    if (r <= 0.0 || q < 0.0 || (q == 0.0 && a >= 0.0))
        throw ConfigError("riccati: no stabilizing nonnegative root (need r>0, q>=0, and a<0 or q>0)");
    // P^2/r - 2aP - q = 0  =>  P = r (a + sqrt(a^2 + q/r)), positive branch.
    return r * (a + std::sqrt(a * a + q / r));
}

double RiccatiOracle::residual() const {
    const double p = P();
    return std::abs(p * p / r - 2.0 * a * p - q);
}

double RiccatiOracle::lambda_of_gain(double K) const {
    const double rate = K - a;  // closed-loop drift is (a - K) x
    if (rate <= 0.0) throw EvalError("lambda_of_gain: gain does not stabilize the state");
    const double x2 = sigma * sigma / (2.0 * rate);
    return (q + r * K * K) * x2;
}

double RiccatiOracle::adjoint_slope(double K) const {
    // Ansatz Y = c X under u = -K x: drift matching gives c (2a - K) = -2q.
    return 2.0 * q / (K - 2.0 * a);
}

double RiccatiOracle::fh_adjoint_slope(double K, double tau) const {
    const double g = K - 2.0 * a;
    return (2.0 * q / g) * (1.0 - std::exp(-g * tau));
}

double RiccatiOracle::fh_adjoint_slope_rk4(double K, double tau, int steps) const {
    // c'(s) = (2a - K) c + 2q, c(0) = 0, integrate horizon-to-go s in [0,tau].
    auto rhs = [&](double c) { return (2.0 * a - K) * c + 2.0 * q; };
    double c = 0.0;
    const double h = tau / steps;
    for (int i = 0; i < steps; ++i) {
        const double k1 = rhs(c);
        const double k2 = rhs(c + 0.5 * h * k1);
        const double k3 = rhs(c + 0.5 * h * k2);
        const double k4 = rhs(c + h * k3);
        c += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return c;
}

double OuOracle::mean(double x0, double t) const { return x0 * std::exp(-k * t); }

double OuOracle::variance(double t) const {
    return sigma * sigma * (1.0 - std::exp(-2.0 * k * t)) / (2.0 * k);
}

double OuOracle::second_moment(double x0, double t) const {
    const double m = mean(x0, t);
    return m * m + variance(t);
}

double OuOracle::tv_distance(double x, double y, double t) const {
    const double gap = std::abs(x - y) * std::exp(-k * t);
    const double sd = std::sqrt(variance(t));
    return 2.0 * normal_cdf(gap / (2.0 * sd)) - 1.0;
}

double OuOracle::centered_ball_probability(double radius, double t) const {
    const double sd = std::sqrt(variance(t));
    return 2.0 * normal_cdf(radius / sd) - 1.0;
}

double max_abs_on_interval(const std::function<double(double)>& f, double lo, double hi) {
    // Coarse scan, then golden-section refinement of the best bracket.
    const int coarse = 2001;
    double best_x = lo, best = 0.0;
    for (int i = 0; i < coarse; ++i) {
        const double x = lo + (hi - lo) * i / (coarse - 1);
        const double v = std::abs(f(x));
        if (v > best) {
            best = v;
            best_x = x;
        }
    }
    const double w = (hi - lo) / (coarse - 1);
    double a = std::max(lo, best_x - w), b = std::min(hi, best_x + w);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    for (int it = 0; it < 200; ++it) {
        if (std::abs(f(c)) > std::abs(f(d))) b = d; else a = c;
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    const double x = 0.5 * (a + b);
    return std::max(best, std::abs(f(x)));
}

}  // namespace ergolab
