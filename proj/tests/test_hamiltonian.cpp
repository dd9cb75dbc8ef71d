// Hamiltonian evaluation, gradients, pointwise minimization over the
// control, and the joint convexity probe.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ergolab/hamiltonian.hpp"
#include "ergolab/rng.hpp"
#include "ergolab/scenarios.hpp"

using namespace ergolab;

namespace {

// b = 2x + 3u, sigma = 4, L = 5 x^2: every Hamiltonian term is hand-checkable.
ControlledDiffusion affine_model() {
    ControlledDiffusion md;
    md.name = "affine";
    md.n = 1;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double> u, std::span<double> out) {
        out[0] = 2.0 * x[0] + 3.0 * u[0];
    };
    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 4.0;
    };
    md.L = [](double, std::span<const double> x, std::span<const double>) {
        return 5.0 * x[0] * x[0];
    };
    return md;
}

ControlledDiffusion lq_model(double r = 1.0) {
    ControlledDiffusion md;
    md.name = "lq";
    md.n = 1;
    md.m = 1;
    md.b = [](double, std::span<const double> x, std::span<const double> u, std::span<double> out) {
        out[0] = -x[0] + u[0];
    };
    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
    };
    md.L = [r](double, std::span<const double> x, std::span<const double> u) {
        return x[0] * x[0] + r * u[0] * u[0];
    };
    return md;
}

}  // namespace

TEST_CASE("Hamiltonian assembles drift, diffusion, and cost terms") {
    const auto md = affine_model();
    Mat z(1, 1);
    z(0, 0) = 9.0;
    // H = <b, y> + <sigma, z> + L = (2 + 6) * 7 + 4 * 9 + 5 = 97.
    const double h = eval_H(md, 0.0, Vec{1.0}, Vec{2.0}, Vec{7.0}, z);
    CHECK(h == doctest::Approx(97.0).epsilon(1e-14));
}

TEST_CASE("x-gradient of the Hamiltonian matches the hand derivative") {
    const auto md = affine_model();
    Mat z(1, 1);
    z(0, 0) = 9.0;
    // dH/dx = 2 y + 0 + 10 x = 14 + 10 = 24 at x = 1, y = 7.
    const Vec gx = grad_H_x(md, 0.0, Vec{1.0}, Vec{2.0}, Vec{7.0}, z);
    REQUIRE(gx.size() == 1);
    CHECK(gx[0] == doctest::Approx(24.0).epsilon(1e-6));
    // dH/du = 3 y = 21.
    const Vec gu = grad_H_u(md, 0.0, Vec{1.0}, Vec{2.0}, Vec{7.0}, z);
    CHECK(gu[0] == doctest::Approx(21.0).epsilon(1e-6));
}

TEST_CASE("gradient overloads from a precomputed bundle agree with the direct route") {
    const auto sc = make_scenario("bounded-cost-1d");
    Mat z(1, 1);
    z(0, 0) = 0.4;
    const Vec x{0.8}, u{0.2}, y{1.1};
    const auto g = model_gradients(sc.model, 0.3, x, u);
    const Vec direct = grad_H_x(sc.model, 0.3, x, u, y, z);
    const Vec bundled = grad_H_x(g, y, z);
    CHECK(bundled[0] == doctest::Approx(direct[0]).epsilon(1e-10));
    const Vec du_direct = grad_H_u(sc.model, 0.3, x, u, y, z);
    const Vec du_bundled = grad_H_u(g, y, z);
    CHECK(du_bundled[0] == doctest::Approx(du_direct[0]).epsilon(1e-10));
}

TEST_CASE("quadratic control cost has the closed-form minimizer -y/2r") {
    for (double r : {1.0, 2.5}) {
        const auto md = lq_model(r);
        Mat z(1, 1);
        for (double y : {-1.2, 0.0, 0.8}) {
            const auto res = minimize_H_u(md, 0.0, Vec{0.5}, Vec{y}, z, Vec{0.0});
            CHECK(res.converged);
            CHECK(res.u_star[0] == doctest::Approx(-y / (2.0 * r)).epsilon(1e-4));
            CHECK_FALSE(res.on_boundary);
        }
    }
}

TEST_CASE("minimization never returns more than the starting value") {
    const auto md = lq_model();
    SeqRng rng(21, "starts");
    Mat z(1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec x{rng.uniform(-2, 2)};
        const Vec y{rng.uniform(-3, 3)};
        const Vec u0{rng.uniform(-2, 2)};
        z(0, 0) = rng.uniform(-1, 1);
        const double h0 = eval_H(md, 0.0, x, u0, y, z);
        const auto res = minimize_H_u(md, 0.0, x, y, z, u0);
        CHECK(res.h_star <= h0 + 1e-12);
    }
}

TEST_CASE("box bounds produce boundary minimizers") {
    const auto md = lq_model();
    Mat z(1, 1);
    MinimizeOptions opt;
    opt.bounds = SampleBox{Vec{0.0}, Vec{1.0}};  // excludes the free minimizer -0.4
    const auto res = minimize_H_u(md, 0.0, Vec{0.0}, Vec{0.8}, z, Vec{0.5}, opt);
    CHECK(res.u_star[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(res.on_boundary);
}

TEST_CASE("the grid stage escapes a poor starting basin") {
    // L has two wells in u: (u^2 - 1)^2 + 0.3 u, global minimum near u = -1.
    ControlledDiffusion md = lq_model();
    md.L = [](double, std::span<const double> x, std::span<const double> u) {
        const double w = u[0] * u[0] - 1.0;
        return x[0] * x[0] + w * w + 0.3 * u[0];
    };
    Mat z(1, 1);
    MinimizeOptions opt;
    opt.bounds = SampleBox{Vec{-2.0}, Vec{2.0}};
    // Start in the wrong well, at u near +1.
    const auto res = minimize_H_u(md, 0.0, Vec{0.0}, Vec{0.0}, z, Vec{0.95}, opt);
    CHECK(res.u_star[0] < -0.9);
}

TEST_CASE("two-dimensional control minimizers land on the separable optimum") {
    ControlledDiffusion md;
    md.n = 1;
    md.m = 2;
    md.b = [](double, std::span<const double> x, std::span<const double> u, std::span<double> out) {
        out[0] = -x[0] + u[0] + u[1];
    };
    md.sigma = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
    };
    md.L = [](double, std::span<const double>, std::span<const double> u) {
        return (u[0] - 1.0) * (u[0] - 1.0) + (u[1] + 2.0) * (u[1] + 2.0);
    };
    Mat z(1, 1);
    MinimizeOptions opt;
    opt.bounds = SampleBox{Vec{-3.0, -3.0}, Vec{3.0, 3.0}};
    const auto res = minimize_H_u(md, 0.0, Vec{0.0}, Vec{0.0}, z, Vec{0.0, 0.0}, opt);
    CHECK(res.u_star[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(res.u_star[1] == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("linear-quadratic Hamiltonians pass the joint convexity probe") {
    const auto sc = make_scenario("lq-1d");
    const auto probe = probe_convexity(sc.model, sc.x_box, sc.u_box, 2000, 7);
    CHECK(probe.convex);
    CHECK(probe.min_gap >= -1e-9);
    CHECK(probe.n_samples == 2000);
}

TEST_CASE("a concave cost fails the probe with a reproducible witness") {
    ControlledDiffusion md = lq_model();
    md.L = [](double, std::span<const double> x, std::span<const double>) {
        return -x[0] * x[0] * x[0] * x[0];
    };
    const auto box = SampleBox::centered(1, 2.0);
    const auto probe = probe_convexity(md, box, box, 2000, 7);
    CHECK_FALSE(probe.convex);
    CHECK(probe.min_gap < -1e-6);
    REQUIRE(probe.witness_px.size() == 1);
    REQUIRE(probe.witness_pu.size() == 1);
    CHECK(probe.witness_theta > 0.0);
    CHECK(probe.witness_theta < 1.0);
}

TEST_CASE("the probe rejects mismatched box dimensions") {
    const auto md = lq_model();
    CHECK_THROWS_AS(
        probe_convexity(md, SampleBox::centered(2, 1.0), SampleBox::centered(1, 1.0), 100, 7),
        ConfigError);
}

TEST_CASE("probe results are deterministic in the seed") {
    const auto sc = make_scenario("lq-1d");
    const auto a = probe_convexity(sc.model, sc.x_box, sc.u_box, 500, 11);
    const auto b = probe_convexity(sc.model, sc.x_box, sc.u_box, 500, 11);
    CHECK(a.min_gap == b.min_gap);
    CHECK(a.witness_theta == b.witness_theta);
}
