#include "ergolab/scenarios.hpp"

#include <cmath>
#include <numbers>

namespace ergolab {

namespace {

void validate_riccati(const RiccatiOracle& rc) {
    if (rc.residual() > 1e-12)
        throw SolverError("riccati oracle: back-substitution residual exceeds 1e-12");
    const double p = rc.P();
    if (std::abs(rc.adjoint_slope(rc.K_star()) - 2.0 * p) > 1e-12 * (1.0 + std::abs(p)))
        throw SolverError("riccati oracle: adjoint slope at the optimal gain disagrees with 2P");
    if (std::abs(rc.fh_adjoint_slope(rc.K_star(), 3.0) -
                 rc.fh_adjoint_slope_rk4(rc.K_star(), 3.0)) > 1e-6)
        throw SolverError("riccati oracle: closed-form and integrated horizon slopes disagree");
}

void validate_ou(const OuOracle& ou) {
    if (ou.tv_distance(1.0, 1.0, 1.0) != 0.0)
        throw SolverError("ou oracle: total variation between identical starts is not zero");
    if (std::abs(ou.variance(50.0 / ou.k) - ou.stationary_variance()) >
        1e-10 * ou.stationary_variance())
        throw SolverError("ou oracle: long-time variance does not reach the stationary value");
}

ControlLaw null_control() { return ControlLaw::constant(Vec{0.0}, "null-control"); }

Scenario make_ou_quadratic() {
    Scenario sc;
    sc.name = "ou-quadratic";
    ControlledDiffusion& md = sc.model;
    md.name = sc.name;
    md.n = 1;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = -x[0];
    };
    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
    };
    md.L = [](double, std::span<const double> x, std::span<const double>) { return x[0] * x[0]; };
    md.grads.grad_x_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = -1.0; };
    md.grads.grad_u_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_u_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_L = [](double, std::span<const double> x, std::span<const double>,
                           std::span<double> out) { out[0] = 2.0 * x[0]; };
    md.grads.grad_u_L = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 0.0; };
    md.decl.dissipativity_k = 1.0;
    md.decl.diffusion_growth_omega = 0.0;
    md.decl.sigma_lo = 1.0;
    md.decl.sigma_hi = 1.0;
    md.decl.drift_at_zero = 0.0;
    sc.law = null_control();
    sc.x0 = {1.0};
    sc.x_box = SampleBox::centered(1, 3.0);
    sc.u_box = SampleBox::centered(1, 1.0);
    sc.ou = OuOracle{1.0, 1.0};
    validate_ou(*sc.ou);
    sc.notes = "1D Ornstein-Uhlenbeck with quadratic state cost; the long-run average "
               "cost equals the stationary second moment";
    return sc;
}

Scenario make_bounded_cost() {
    Scenario sc;
    sc.name = "bounded-cost-1d";
    ControlledDiffusion& md = sc.model;
    md.name = sc.name;
    md.n = 1;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double> u, std::span<double> out) {
        out[0] = -x[0] + std::tanh(u[0]);
    };
    md.sigma = [](double, std::span<const double> x, std::span<const double>,
                  std::span<double> out) { out[0] = 1.0 + 0.1 * std::tanh(x[0]); };
    md.L = [](double, std::span<const double> x, std::span<const double> u) {
        return 1.0 - std::exp(-x[0] * x[0]) + u[0] * u[0];
    };
    md.grads.grad_x_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = -1.0; };
    md.grads.grad_u_b = [](double, std::span<const double>, std::span<const double> u,
                           std::span<double> out) {
        const double th = std::tanh(u[0]);
        out[0] = 1.0 - th * th;
    };
    md.grads.grad_x_sigma = [](double, std::span<const double> x, std::span<const double>,
                               std::span<double> out) {
        const double th = std::tanh(x[0]);
        out[0] = 0.1 * (1.0 - th * th);
    };
    md.grads.grad_u_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_L = [](double, std::span<const double> x, std::span<const double>,
                           std::span<double> out) {
        out[0] = 2.0 * x[0] * std::exp(-x[0] * x[0]);
    };
    md.grads.grad_u_L = [](double, std::span<const double>, std::span<const double> u,
                           std::span<double> out) { out[0] = 2.0 * u[0]; };
    md.decl.dissipativity_k = 1.0;
    md.decl.diffusion_growth_omega = 0.1;
    md.decl.sigma_lo = 0.9;
    md.decl.sigma_hi = 1.1;
    md.decl.drift_at_zero = 1.0;
    // Cost gradient peaks where d/dx e^{-x^2} is largest; locate it numerically.
    md.decl.grad_cost_bound = max_abs_on_interval(
        [](double x) { return 2.0 * x * std::exp(-x * x); }, -6.0, 6.0);
    sc.law = null_control();
    sc.x0 = {1.0};
    sc.x_box = SampleBox::centered(1, 3.0);
    sc.u_box = SampleBox::centered(1, 1.5);
    sc.notes = "bounded cost gradient and uniformly elliptic state-dependent noise; "
               "the adjoint stays uniformly bounded";
    return sc;
}

Scenario make_periodic() {
    Scenario sc;
    sc.name = "periodic-1d";
    ControlledDiffusion& md = sc.model;
    md.name = sc.name;
    md.n = 1;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = -x[0];
    };
    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
    };
    md.L = [](double t, std::span<const double> x, std::span<const double>) {
        return x[0] * x[0] * (1.0 + 0.5 * std::cos(2.0 * std::numbers::pi * t));
    };
    md.grads.grad_x_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = -1.0; };
    md.grads.grad_u_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_u_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_L = [](double t, std::span<const double> x, std::span<const double>,
                           std::span<double> out) {
        out[0] = 2.0 * x[0] * (1.0 + 0.5 * std::cos(2.0 * std::numbers::pi * t));
    };
    md.grads.grad_u_L = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 0.0; };
    md.decl.dissipativity_k = 1.0;
    md.decl.diffusion_growth_omega = 0.0;
    md.decl.sigma_lo = 1.0;
    md.decl.sigma_hi = 1.0;
    md.decl.drift_at_zero = 0.0;
    md.decl.period = 1.0;
    sc.law = null_control();
    sc.x0 = {1.0};
    sc.x_box = SampleBox::centered(1, 3.0);
    sc.u_box = SampleBox::centered(1, 1.0);
    sc.ou = OuOracle{1.0, 1.0};
    validate_ou(*sc.ou);
    sc.notes = "cost modulated with period one; the bias map picks up the phase "
               "through time features";
    return sc;
}

Scenario make_nondissipative() {
    Scenario sc;
    sc.name = "nondissipative-1d";
    ControlledDiffusion& md = sc.model;
    md.name = sc.name;
    md.n = 1;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = x[0];
    };
    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
    };
    md.L = [](double, std::span<const double> x, std::span<const double>) { return x[0] * x[0]; };
    md.grads.grad_x_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 1.0; };
    md.grads.grad_u_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_u_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_L = [](double, std::span<const double> x, std::span<const double>,
                           std::span<double> out) { out[0] = 2.0 * x[0]; };
    md.grads.grad_u_L = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 0.0; };
    md.decl.sigma_lo = 1.0;
    md.decl.sigma_hi = 1.0;
    md.decl.drift_at_zero = 0.0;
    sc.law = null_control();
    sc.x0 = {1.0};
    sc.x_box = SampleBox::centered(1, 3.0);
    sc.u_box = SampleBox::centered(1, 1.0);
    sc.notes = "expanding drift: the negative control; dissipativity and every "
               "long-run estimate must fail or flag";
    return sc;
}

}  // namespace

Scenario make_lq_scenario(double K) {
    Scenario sc;
    sc.name = "lq-1d";
    RiccatiOracle rc;
    rc.a = -1.0;
    rc.q = 1.0;
    rc.r = 1.0;
    rc.sigma = 1.0;
    validate_riccati(rc);
    const double a = rc.a, q = rc.q, r = rc.r, sg = rc.sigma;
    ControlledDiffusion& md = sc.model;
    md.name = sc.name;
    md.n = 1;
    md.m = 1;
    md.b = [a](double, std::span<const double> x, std::span<const double> u,
               std::span<double> out) { out[0] = a * x[0] + u[0]; };
    md.sigma = [sg](double, std::span<const double>, std::span<const double>,
                    std::span<double> out) { out[0] = sg; };
    md.L = [q, r](double, std::span<const double> x, std::span<const double> u) {
        return q * x[0] * x[0] + r * u[0] * u[0];
    };
    md.grads.grad_x_b = [a](double, std::span<const double>, std::span<const double>,
                            std::span<double> out) { out[0] = a; };
    md.grads.grad_u_b = [](double, std::span<const double>, std::span<const double>,
                           std::span<double> out) { out[0] = 1.0; };
    md.grads.grad_x_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_u_sigma = [](double, std::span<const double>, std::span<const double>,
                               std::span<double> out) { out[0] = 0.0; };
    md.grads.grad_x_L = [q](double, std::span<const double> x, std::span<const double>,
                            std::span<double> out) { out[0] = 2.0 * q * x[0]; };
    md.grads.grad_u_L = [r](double, std::span<const double>, std::span<const double> u,
                            std::span<double> out) { out[0] = 2.0 * r * u[0]; };
    sc.law = ControlLaw::feedback(
        [K](double, std::span<const double> x, std::span<double> out) { out[0] = -K * x[0]; },
        1, "gain-" + fmt_double(K));
    sc.x0 = {1.0};
    sc.x_box = SampleBox::centered(1, 3.0);
    sc.u_box = SampleBox::centered(1, 2.0);
    md.decl.dissipativity_k = -a;
    md.decl.diffusion_growth_omega = 0.0;
    md.decl.sigma_lo = sg;
    md.decl.sigma_hi = sg;
    // b(t, 0, u) = u, so the drift-at-origin bound is the control box radius.
    md.decl.drift_at_zero = sc.u_box.hi[0];
    sc.riccati = rc;
    sc.notes = "linear state feedback with quadratic cost; the algebraic oracle "
               "supplies the optimal gain and the long-run cost of any gain";
    return sc;
}

std::vector<std::string> scenario_names() {
    return {"ou-quadratic", "lq-1d", "bounded-cost-1d", "periodic-1d", "nondissipative-1d"};
}

Scenario make_scenario(const std::string& name) {
    if (name == "ou-quadratic") return make_ou_quadratic();
    if (name == "lq-1d") {
        RiccatiOracle rc;
        rc.a = -1.0;
        rc.q = 1.0;
        rc.r = 1.0;
        rc.sigma = 1.0;
        return make_lq_scenario(rc.K_star());
    }
    if (name == "bounded-cost-1d") return make_bounded_cost();
    if (name == "periodic-1d") return make_periodic();
    if (name == "nondissipative-1d") return make_nondissipative();
    std::string known;
    for (const std::string& s : scenario_names()) known += (known.empty() ? "" : ", ") + s;
    throw ConfigError("unknown scenario '" + name + "'; registered scenarios: " + known);
}

}  // namespace ergolab
