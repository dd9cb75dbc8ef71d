// Structural assumption checks, gradient machinery, control laws, the
// scenario registry, and the closed-form reference oracles.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "ergolab/model.hpp"
#include "ergolab/oracles.hpp"
#include "ergolab/scenarios.hpp"
#include "json.hpp"

using namespace ergolab;

namespace {

// Drift-only scalar model with sigma = 1, L = x^2; control unused.
ControlledDiffusion scalar_model(std::function<double(double)> drift) {
    ControlledDiffusion md;
    md.name = "scalar";
    md.n = 1;
    md.m = 1;
    md.b = [drift](double, std::span<const double> x, std::span<const double>,
                   std::span<double> out) { out[0] = drift(x[0]); };
    md.sigma = [](double, std::span<const double>, std::span<const double>,
                  std::span<double> out) { out[0] = 1.0; };
    md.L = [](double, std::span<const double> x, std::span<const double>) {
        return x[0] * x[0];
    };
    return md;
}

}  // namespace

TEST_CASE("linear drift -2x yields the exact contraction rate by both routes") {
    const auto md = scalar_model([](double x) { return -2.0 * x; });
    const auto res = check_dissipativity(md, SampleBox::centered(1, 3.0));
    CHECK(res.verdict == Verdict::holds);
    CHECK(res.k_hat_pair == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(res.k_hat_grad == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(res.agreement_rel < 1e-6);
    REQUIRE(res.witness_x.size() == 1);
}

TEST_CASE("a sinusoidal perturbation weakens the rate to the analytic infimum") {
    // b = -x + 0.5 sin x: inf rate = 1 - 0.5 = 0.5, attained near the origin.
    const auto md = scalar_model([](double x) { return -x + 0.5 * std::sin(x); });
    const auto res = check_dissipativity(md, SampleBox::centered(1, 3.0));
    CHECK(res.verdict == Verdict::holds);
    CHECK(res.k_hat_pair == doctest::Approx(0.5).epsilon(0.1));
    CHECK(res.k_hat_grad == doctest::Approx(0.5).epsilon(0.02));
    CHECK(res.agreement_rel <= 0.1);
}

TEST_CASE("expansive drift fails dissipativity with a witness pair") {
    const auto md = scalar_model([](double x) { return +x; });
    const auto res = check_dissipativity(md, SampleBox::centered(1, 3.0));
    CHECK(res.verdict == Verdict::fails);
    CHECK(res.k_hat_pair < 0.0);
    REQUIRE(res.witness_x.size() == 1);
    REQUIRE(res.witness_y.size() == 1);
    // The witness reproduces a positive pair quotient.
    const double q = (res.witness_x[0] - res.witness_y[0]) * (res.witness_x[0] - res.witness_y[0]);
    const double num =
        (res.witness_x[0] - res.witness_y[0]) * ((res.witness_x[0]) - (res.witness_y[0]));
    CHECK(num / q > 0.0);
}

TEST_CASE("identity and anisotropic diffusions give exact ellipticity numbers") {
    ControlledDiffusion md;
    md.n = 2;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = -x[0];
        out[1] = -x[1];
    };
    md.L = [](double, std::span<const double>, std::span<const double>) { return 0.0; };

    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1; out[1] = 0; out[2] = 0; out[3] = 1;
    };
    auto res = check_ellipticity(md, SampleBox::centered(2, 3.0));
    CHECK(res.verdict == Verdict::holds);
    CHECK(res.sigma_min_hat == doctest::Approx(1.0));
    CHECK(res.sum_lo == doctest::Approx(2.0));
    CHECK(res.sum_hi == doctest::Approx(2.0));

    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1; out[1] = 0; out[2] = 0; out[3] = 2;
    };
    res = check_ellipticity(md, SampleBox::centered(2, 3.0));
    CHECK(res.sigma_min_hat == doctest::Approx(1.0));
    CHECK(res.sigma_norm_max == doctest::Approx(2.0));
    // ||sigma|| + ||sigma^-1|| = 2 + 1 = 3 everywhere.
    CHECK(res.sum_lo == doctest::Approx(3.0));
    CHECK(res.cond_max == doctest::Approx(2.0));

    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1; out[1] = 0; out[2] = 0; out[3] = 0;  // degenerate second row
    };
    res = check_ellipticity(md, SampleBox::centered(2, 3.0));
    CHECK(res.verdict == Verdict::fails);
}

TEST_CASE("growth check recovers the cubic-drift Lipschitz envelope") {
    const auto md = scalar_model([](double x) { return -x * x * x; });
    const auto res = check_growth_lipschitz(md, SampleBox::centered(1, 2.0));
    // sup |b'| = 3 x^2 = 12 on [-2, 2]; random sampling approaches from below.
    CHECK(res.lipschitz_hat <= 12.0 * 1.0001);
    CHECK(res.lipschitz_hat > 12.0 * 0.9);
    // sup |dL/dx| = 2|x| = 4.
    CHECK(res.grad_cost_hat <= 4.0 * 1.0001);
    CHECK(res.grad_cost_hat > 4.0 * 0.95);
    CHECK(res.c_tilde_hat == doctest::Approx(0.0));
}

TEST_CASE("periodic cost models show time-dependent gradient envelopes") {
    const auto sc = make_scenario("periodic-1d");
    CheckOptions at_peak;
    at_peak.t_samples = {0.0};   // cost factor 1 + 0.5 cos(0) = 1.5
    CheckOptions at_trough;
    at_trough.t_samples = {0.5};  // cost factor 0.5
    const auto peak = check_growth_lipschitz(sc.model, sc.x_box, at_peak);
    const auto trough = check_growth_lipschitz(sc.model, sc.x_box, at_trough);
    CHECK(peak.grad_cost_hat == doctest::Approx(3.0 * trough.grad_cost_hat).epsilon(0.02));
}

TEST_CASE("declared constants are compared against the estimates") {
    auto md = scalar_model([](double x) { return -x; });
    md.decl.dissipativity_k = 5.0;  // declared too strong: estimate is 1
    const auto res = check_dissipativity(md, SampleBox::centered(1, 3.0));
    CHECK(!res.warnings.empty());
}

TEST_CASE("full assumption report holds for registered scenarios and fails the expansive one") {
    for (const std::string& name : scenario_names()) {
        const auto sc = make_scenario(name);
        CheckOptions opt;
        opt.u_box = sc.u_box;
        const auto report = run_assumption_checks(sc.model, sc.x_box, opt);
        if (name == "nondissipative-1d") {
            CHECK_FALSE(report.all_hold);
            CHECK(report.dissipativity.verdict == Verdict::fails);
        } else {
            CHECK(report.all_hold);
        }
        // JSON form is parseable and carries the key verdict fields.
        const auto parsed = nlohmann::json::parse(report.to_json());
        CHECK(parsed.contains("dissipativity"));
        CHECK(parsed.contains("ellipticity"));
        CHECK(parsed.contains("growth"));
    }
}

TEST_CASE("analytic gradients of every registered scenario match finite differences") {
    for (const std::string& name : scenario_names()) {
        const auto sc = make_scenario(name);
        if (!sc.model.has_analytic_gradients()) continue;
        const double worst = validate_gradients(sc.model, sc.x_box, 200, 3);
        INFO("scenario ", name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("gradient bundles agree between analytic and finite-difference routes") {
    const auto sc = make_scenario("bounded-cost-1d");
    const Vec x{0.7}, u{-0.3};
    const auto fd = finite_difference_gradients(sc.model, 0.0, x, u);
    const auto an = model_gradients(sc.model, 0.0, x, u);
    CHECK(an.gx_b(0, 0) == doctest::Approx(fd.gx_b(0, 0)).epsilon(1e-6));
    CHECK(an.gu_b(0, 0) == doctest::Approx(fd.gu_b(0, 0)).epsilon(1e-6));
    CHECK(an.gx_sigma[0](0, 0) == doctest::Approx(fd.gx_sigma[0](0, 0)).epsilon(1e-6));
    CHECK(an.gx_L[0] == doctest::Approx(fd.gx_L[0]).epsilon(1e-6));
    CHECK(an.gu_L[0] == doctest::Approx(fd.gu_L[0]).epsilon(1e-6));
}

TEST_CASE("control laws evaluate and clip to bounds") {
    const auto konst = ControlLaw::constant(Vec{0.25, -1.0});
    Vec out(2);
    konst.eval(3.0, Vec{9, 9}, out);
    CHECK(out[0] == 0.25);
    CHECK(out[1] == -1.0);

    auto open = ControlLaw::open_loop([](double t, std::span<double> u) { u[0] = t * t; }, 1);
    Vec u1(1);
    open.eval(2.0, Vec{0}, u1);
    CHECK(u1[0] == 4.0);

    auto fb = ControlLaw::feedback(
        [](double, std::span<const double> x, std::span<double> u) { u[0] = -2.0 * x[0]; }, 1);
    fb.set_bounds(Vec{-1.0}, Vec{1.0});
    fb.eval(0.0, Vec{3.0}, u1);
    CHECK(u1[0] == -1.0);  // clipped from -6
    fb.eval(0.0, Vec{0.2}, u1);
    CHECK(u1[0] == doctest::Approx(-0.4));
}

TEST_CASE("model fingerprints separate scenarios and are stable") {
    const auto a = make_scenario("ou-quadratic");
    const auto b = make_scenario("lq-1d");
    CHECK(a.model.fingerprint() == make_scenario("ou-quadratic").model.fingerprint());
    CHECK(a.model.fingerprint() != b.model.fingerprint());
}

TEST_CASE("scenario registry lists five scenarios and rejects unknown names") {
    const auto names = scenario_names();
    REQUIRE(names.size() == 5);
    CHECK_THROWS_WITH_AS(make_scenario("no-such-scenario"), doctest::Contains("ou-quadratic"),
                         ConfigError);
    for (const auto& name : names) {
        const auto sc = make_scenario(name);
        CHECK(sc.name == name);
        CHECK(sc.x0.size() == static_cast<std::size_t>(sc.model.n));
        CHECK(sc.law.dim() == sc.model.m);
    }
}

TEST_CASE("stationary feedback Riccati root and derived constants") {
    const RiccatiOracle rc{-1.0, 1.0, 1.0, 1.0};
    CHECK(rc.P() == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-14));
    CHECK(rc.K_star() == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-14));
    CHECK(rc.lambda_star() == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-14));
    CHECK(rc.residual() <= 1e-12);

    const RiccatiOracle steep{-2.0, 4.0, 1.0, 1.0};
    CHECK(steep.P() == doctest::Approx(-2.0 + std::sqrt(8.0)).epsilon(1e-14));

    const RiccatiOracle free_cost{-1.0, 0.0, 1.0, 1.0};
    CHECK(free_cost.P() == doctest::Approx(0.0));
    CHECK(free_cost.K_star() == doctest::Approx(0.0));

    CHECK_THROWS_AS((RiccatiOracle{-1.0, 1.0, -1.0, 1.0}.P()), ConfigError);
    CHECK_THROWS_AS((RiccatiOracle{1.0, 0.0, 1.0, 1.0}.P()), ConfigError);
}

TEST_CASE("gain sweep of the average cost has its minimum at the optimal gain") {
    const RiccatiOracle rc{-1.0, 1.0, 1.0, 1.0};
    // lambda(K) = (q + r K^2) sigma^2 / (2 (K - a)).
    CHECK(rc.lambda_of_gain(0.2) == doctest::Approx(13.0 / 30.0).epsilon(1e-14));
    CHECK(rc.lambda_of_gain(1.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(rc.lambda_of_gain(1.2) == doctest::Approx(61.0 / 110.0).epsilon(1e-14));
    const double at_star = rc.lambda_of_gain(rc.K_star());
    CHECK(at_star == doctest::Approx(rc.lambda_star()).epsilon(1e-12));
    for (double K : {0.1, 0.3, 0.6, 0.9, 1.3})
        CHECK(rc.lambda_of_gain(K) > at_star);
}

TEST_CASE("adjoint slope identities under suboptimal gains") {
    const RiccatiOracle rc{-1.0, 1.0, 1.0, 1.0};
    // Stationary slope c_K = 2q / (K - 2a); at K* this equals exactly 2P.
    CHECK(rc.adjoint_slope(rc.K_star()) == doctest::Approx(2.0 * rc.P()).epsilon(1e-12));
    CHECK(rc.adjoint_slope(1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // The finite-horizon slope approaches the stationary one and matches an
    // independent Runge-Kutta integration of the backward equation.
    for (double K : {0.3, rc.K_star(), 1.0}) {
        CHECK(rc.fh_adjoint_slope(K, 40.0) == doctest::Approx(rc.adjoint_slope(K)).epsilon(1e-9));
        for (double tau : {0.5, 2.0, 7.0})
            CHECK(rc.fh_adjoint_slope(K, tau) ==
                  doctest::Approx(rc.fh_adjoint_slope_rk4(K, tau)).epsilon(1e-8));
    }
    CHECK(rc.fh_adjoint_slope(1.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("mean-reverting diffusion closed forms") {
    const OuOracle ou{1.0, 1.0};
    CHECK(ou.mean(3.0, 0.0) == doctest::Approx(3.0));
    CHECK(ou.mean(3.0, 2.0) == doctest::Approx(3.0 * std::exp(-2.0)).epsilon(1e-14));
    CHECK(ou.variance(0.0) == doctest::Approx(0.0));
    CHECK(ou.stationary_variance() == doctest::Approx(0.5));
    CHECK(ou.variance(50.0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(ou.second_moment(3.0, 1.0) ==
          doctest::Approx(9.0 * std::exp(-2.0) + 0.5 * (1.0 - std::exp(-2.0))).epsilon(1e-14));

    CHECK(ou.tv_distance(1.0, 1.0, 1.0) == doctest::Approx(0.0));
    CHECK(ou.tv_distance(1.0, -1.0, 2.0) == doctest::Approx(0.1531743128).epsilon(1e-8));
    // Monotone decreasing in t for a fixed pair.
    CHECK(ou.tv_distance(1.0, -1.0, 1.0) > ou.tv_distance(1.0, -1.0, 2.0));
    CHECK(ou.tv_distance(1.0, -1.0, 2.0) > ou.tv_distance(1.0, -1.0, 4.0));

    // One-standard-deviation ball of the time-t law.
    const double sd = std::sqrt(ou.variance(1.0));
    CHECK(ou.centered_ball_probability(sd, 1.0) == doctest::Approx(0.6826894921).epsilon(1e-8));

    const OuOracle fast{2.0, 0.5};
    CHECK(fast.stationary_variance() == doctest::Approx(0.0625));
}

TEST_CASE("interval maximizer reproduces calculus bounds") {
    // max |2x e^{-x^2}| on [-6, 6] is sqrt(2/e) at x = 1/sqrt(2).
    const double c = max_abs_on_interval(
        [](double x) { return 2.0 * x * std::exp(-x * x); }, -6.0, 6.0);
    CHECK(c == doctest::Approx(std::sqrt(2.0 / std::numbers::e)).epsilon(1e-8));
    const double peak = max_abs_on_interval([](double x) { return std::sin(x); }, 0.0,
                                            std::numbers::pi);
    CHECK(peak == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("scenario oracle attachments agree with their models") {
    const auto lq = make_scenario("lq-1d");
    REQUIRE(lq.riccati.has_value());
    // The candidate law is the optimal feedback: u(x) = -K* x.
    Vec u(1);
    lq.law.eval(0.0, Vec{1.0}, u);
    CHECK(u[0] == doctest::Approx(-lq.riccati->K_star()).epsilon(1e-12));

    const auto ou = make_scenario("ou-quadratic");
    REQUIRE(ou.ou.has_value());
    CHECK(ou.ou->k == doctest::Approx(1.0));

    const auto lq_gain = make_lq_scenario(0.7);
    Vec u2(1);
    lq_gain.law.eval(0.0, Vec{2.0}, u2);
    CHECK(u2[0] == doctest::Approx(-1.4).epsilon(1e-12));
}
