// Semigroup derivative estimators, the gradient-norm constant, hitting
// probabilities with detection bounds, and coupling-based mixing rates.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ergolab/ergodicity.hpp"
#include "ergolab/oracles.hpp"
#include "ergolab/scenarios.hpp"

using namespace ergolab;

namespace {

ControlledDiffusion ou_model(double k = 1.0, double sigma = 1.0) {
    ControlledDiffusion md;
    md.name = "ou";
    md.n = 1;
    md.m = 1;
    md.b = [k](double, std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = -k * x[0];
    };
    md.sigma = [sigma](double, std::span<const double>, std::span<const double>,
                       std::span<double> out) { out[0] = sigma; };
    md.L = [](double, std::span<const double> x, std::span<const double>) { return x[0] * x[0]; };
    md.decl.dissipativity_k = k;
    return md;
}

const ControlLaw zero_law = ControlLaw::constant(Vec{0.0});

}  // namespace

TEST_CASE("gradient-norm constant: closed form, degenerate limit, continuity") {
    CHECK(feller_gradient_bound(1.0, 0.0, 1.0, 1.0) ==
          doctest::Approx(std::sqrt(1.0 - std::exp(-1.0))).epsilon(1e-12));
    // omega == k degenerates to 1 / (sigma sqrt(t)).
    CHECK(feller_gradient_bound(1.0, 1.0, 2.0, 4.0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(feller_gradient_bound(1.0, 1.0 + 1e-9, 2.0, 4.0) ==
          doctest::Approx(0.25).epsilon(1e-5));
    // Larger expansion rates weaken (increase) the constant.
    CHECK(feller_gradient_bound(1.0, 0.5, 1.0, 1.0) > feller_gradient_bound(1.0, 0.0, 1.0, 1.0));
    // The constant blows up as t -> 0 and decays in t thereafter.
    CHECK(feller_gradient_bound(1.0, 0.0, 1.0, 0.01) > 5.0);
    CHECK(feller_gradient_bound(1.0, 0.0, 1.0, 4.0) <
          feller_gradient_bound(1.0, 0.0, 1.0, 1.0));
}

TEST_CASE("martingale-weight derivative matches the exact linear-response slope") {
    const auto md = ou_model();
    // For psi(x) = x the derivative of E_x[psi(X_t)] is exactly e^{-t}.
    const TestFunction psi = [](std::span<const double> x) { return x[0]; };
    const auto est = pt_gradient_weight(md, zero_law, Vec{0.5}, Vec{1.0}, psi, 1.0, 0.005,
                                        30000, 7);
    CHECK(est.ci_half_width > 0.0);
    CHECK(std::abs(est.estimate - std::exp(-1.0)) <= 3.0 * est.ci_half_width + 0.01);
}

TEST_CASE("weight and finite-difference derivatives agree within joint intervals") {
    const auto md = ou_model();
    for (const TestFunction& psi :
         {TestFunction([](std::span<const double> x) { return std::tanh(x[0]); }),
          TestFunction([](std::span<const double> x) { return std::exp(-x[0] * x[0]); })}) {
        const auto w = pt_gradient_weight(md, zero_law, Vec{0.8}, Vec{1.0}, psi, 1.0, 0.005,
                                          30000, 7);
        const auto f = pt_gradient_fd(md, zero_law, Vec{0.8}, Vec{1.0}, psi, 1.0, 0.005, 30000,
                                      1e-3, 7);
        CHECK(std::abs(w.estimate - f.estimate) <= w.ci_half_width + f.ci_half_width);
    }
}

TEST_CASE("derivative estimates respect the gradient-norm constant") {
    const auto md = ou_model();
    const TestFunction psi = [](std::span<const double> x) { return std::tanh(x[0]); };
    const double t = 1.0;
    const auto est = pt_gradient_weight(md, zero_law, Vec{0.0}, Vec{1.0}, psi, t, 0.005, 20000, 7);
    const double c_t = feller_gradient_bound(1.0, 0.0, 1.0, t);
    CHECK(std::abs(est.estimate) <= c_t * 1.0 + 2.0 * est.ci_half_width);
}

TEST_CASE("plain semigroup values are Lipschitz in the start point") {
    const auto md = ou_model();
    const TestFunction psi = [](std::span<const double> x) { return std::tanh(x[0]); };
    const auto a = pt_value(md, zero_law, Vec{0.0}, psi, 1.0, 0.01, 20000, 7);
    const auto b = pt_value(md, zero_law, Vec{0.5}, psi, 1.0, 0.01, 20000, 7);
    // |P_t psi(x) - P_t psi(y)| <= C_t |x - y| under common noise; generous cap.
    CHECK(std::abs(a.estimate - b.estimate) <= 0.5 * feller_gradient_bound(1.0, 0.0, 1.0, 1.0) +
                                                   a.ci_half_width + b.ci_half_width);
    CHECK(b.estimate > a.estimate);  // tanh is increasing and the kernel is monotone
}

TEST_CASE("the one-standard-deviation ball is hit with the Gaussian probability") {
    const auto md = ou_model();
    const OuOracle ou{1.0, 1.0};
    const double t = 1.0;
    const double sd = std::sqrt(ou.variance(t));
    const auto hp = irreducibility_probe(md, zero_law, Vec{1.0}, Vec{ou.mean(1.0, t)}, sd, t,
                                         0.005, 20000, 7);
    CHECK(std::abs(hp.p_hat - 0.6827) < 0.015);
    CHECK(hp.positive);
    CHECK(hp.ci_lo > 0.5);
    CHECK(hp.ci_hi < 0.8);
    CHECK(hp.detection_bound == 0.0);
}

TEST_CASE("an unreachable ball reports the rule-of-three detection bound") {
    const auto md = ou_model();
    const auto hp = irreducibility_probe(md, zero_law, Vec{0.0}, Vec{30.0}, 0.25, 1.0, 0.01,
                                         5000, 7);
    CHECK(hp.p_hat == 0.0);
    CHECK_FALSE(hp.positive);
    CHECK(hp.detection_bound == doctest::Approx(3.0 / 5000.0));
    CHECK(!hp.note.empty());
}

TEST_CASE("coupling upper-bounds the exact mixing distance and fits a positive rate") {
    const auto md = ou_model();
    const OuOracle ou{1.0, 1.0};
    CouplingOptions opt;
    opt.k = 1.0;
    opt.n_pairs = 6000;
    opt.max_epochs = 6;
    opt.seed = 11;
    const auto fit = coupling_tv(md, zero_law, Vec{1.0}, Vec{-1.0}, opt);
    CHECK_FALSE(fit.inconclusive);
    CHECK(fit.rho_hat > 0.0);
    CHECK(fit.r2 > 0.8);
    REQUIRE(fit.times.size() == fit.tv_hat.size());
    REQUIRE(fit.times.size() >= 3);
    for (std::size_t i = 0; i < fit.times.size(); ++i) {
        CHECK(fit.tv_hat[i] >= 0.0);
        CHECK(fit.tv_hat[i] <= 1.0);
        if (i > 0) CHECK(fit.tv_hat[i] <= fit.tv_hat[i - 1]);
        // Upper bound on the true total-variation distance within Monte Carlo
        // error (binomial 95% margin).
        const double se =
            std::sqrt(std::max(fit.tv_hat[i] * (1.0 - fit.tv_hat[i]), 1e-9) / opt.n_pairs);
        CHECK(fit.tv_hat[i] + 1.96 * se >= ou.tv_distance(1.0, -1.0, fit.times[i]));
    }
}

TEST_CASE("coupling runs are deterministic") {
    const auto md = ou_model();
    CouplingOptions opt;
    opt.n_pairs = 1500;
    opt.max_epochs = 4;
    const auto a = coupling_tv(md, zero_law, Vec{1.0}, Vec{-1.0}, opt);
    const auto b = coupling_tv(md, zero_law, Vec{1.0}, Vec{-1.0}, opt);
    CHECK(a.tv_hat == b.tv_hat);
    CHECK(a.rho_hat == b.rho_hat);
    CHECK(a.ball_radius == b.ball_radius);
}

TEST_CASE("farther-apart starts carry a larger coupling prefactor") {
    const auto md = ou_model();
    CouplingOptions opt;
    opt.n_pairs = 4000;
    opt.max_epochs = 6;
    const auto near = coupling_tv(md, zero_law, Vec{1.0}, Vec{-1.0}, opt);
    const auto far = coupling_tv(md, zero_law, Vec{4.0}, Vec{-4.0}, opt);
    CHECK(far.c_hat > near.c_hat);
}
