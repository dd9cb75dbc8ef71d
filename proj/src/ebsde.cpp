#include "ergolab/ebsde.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "ergolab/parallel.hpp"
#include "ergolab/rng.hpp"

namespace ergolab {

namespace {

struct BlowupFlag {
    std::atomic<bool> hit{false};
    std::atomic<int> path{-1}, step{-1};
    void record(int j, int i) {
        bool expected = false;
        if (hit.compare_exchange_strong(expected, true)) {
            path.store(j);
            step.store(i);
        }
    }
};

void throw_if_blown(const BlowupFlag& flag) {
    if (flag.hit.load())
        throw BlowupError("state norm exceeded 1e8 (divergence) at path " +
                          std::to_string(flag.path.load()) + ", step " +
                          std::to_string(flag.step.load()));
}

struct McIntegral {
    double mean = 0.0;
    double ci_half_width = 0.0;
    Vec final_states;  // n_paths x n, slice-major at the horizon
};

// Plain Monte Carlo of sum_i w^i L(t_i, X_i, u_i) dt from x0, with
// w = 1 - alpha*dt matching the backward solver's discrete discounting
// (alpha = 0 gives the undiscounted running integral).
McIntegral mc_discounted_integral(const ControlledDiffusion& model, const ControlLaw& law,
                                  double alpha, const TimeGrid& grid, int n_paths,
                                  const Vec& x0, std::uint64_t seed, const std::string& stream,
                                  bool keep_final_states) {
    const int n = model.n, m = model.m;
    const std::size_t nblocks = block_count(static_cast<std::size_t>(n_paths));
    std::vector<double> sum1(nblocks, 0.0), sum2(nblocks, 0.0);
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(grid.dt);
    const double w = 1.0 - alpha * grid.dt;
    BlowupFlag blown;
    McIntegral out;
    if (keep_final_states) out.final_states.assign(static_cast<std::size_t>(n_paths) * n, 0.0);

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec x(n), u(m), bv(n), sv(n * n), dw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x0.begin(), x0.end(), x.begin());
            double acc = 0.0, weight = 1.0;
            for (int i = 0; i < grid.n_steps; ++i) {
                const double t = grid.t(i);
                law.eval(t, x, u);
                acc += weight * model.L(t, x, u) * grid.dt;
                weight *= w;
                model.b(t, x, u, bv);
                model.sigma(t, x, u, sv);
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                double nrm2 = 0.0;
                for (int d = 0; d < n; ++d) {
                    double xi = x[d] + bv[d] * grid.dt;
                    for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                    x[d] = xi;
                    nrm2 += xi * xi;
                }
                if (nrm2 > kBlowupThreshold * kBlowupThreshold || !std::isfinite(nrm2)) {
                    blown.record(static_cast<int>(j), i);
                    return;
                }
            }
            if (keep_final_states)
                std::copy(x.begin(), x.end(), out.final_states.begin() + j * n);
            sum1[blk] += acc;
            sum2[blk] += acc * acc;
        }
    });
    throw_if_blown(blown);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < nblocks; ++b) {
        s1 += sum1[b];
        s2 += sum2[b];
    }
    out.mean = s1 / n_paths;
    const double var = std::max(0.0, s2 / n_paths - out.mean * out.mean);
    out.ci_half_width = 1.96 * std::sqrt(var / n_paths);
    return out;
}

// Scalar backward value solve with driver L - alpha*y, zero terminal, paths
// pre-rolled from -spawn. Shared by the discounted solver (alpha > 0) and
// the finite-horizon consistency route (alpha = 0).
BsdeSolution solve_value_map(const ControlledDiffusion& model, const ControlLaw& law,
                             double alpha, double horizon, double dt, double spawn,
                             int n_paths, int basis_degree, const Vec& x0,
                             std::uint64_t seed, const std::string& stream) {
    TimeGrid grid{-spawn, dt, static_cast<int>(std::lround((spawn + horizon) / dt))};
    SimulateOptions sim;
    sim.stream = stream;
    sim.store_increments = false;
    sim.store_controls = false;
    PathEnsemble e = simulate_forward(model, law, grid, n_paths, x0, seed, sim);

    FhAdjointOptions fh;
    fh.fit_z = false;
    fh.y_dim = 1;
    fh.custom_driver = [&model, alpha](double t, std::span<const double> x,
                                       std::span<const double> u, std::span<const double> y_next,
                                       const Mat&, std::span<double> out) {
        out[0] = model.L(t, x, u) - alpha * y_next[0];
    };
    const RegressionBasis basis = RegressionBasis::polynomial(model.n, basis_degree);
    return solve_fh_adjoint(model, law, e, basis, nullptr, fh);
}

}  // namespace

DiscountedSolution solve_discounted(const ControlledDiffusion& model, const ControlLaw& law,
                                    const DiscountedOptions& opt) {
    if (opt.alpha <= 0.0) throw EvalError("solve_discounted: alpha must be positive");
    const double T = opt.horizon > 0.0 ? opt.horizon : 8.0 / opt.alpha;
    if (T < 8.0 / opt.alpha - 1e-9)
        throw EvalError("solve_discounted: horizon " + fmt_double(T) +
                        " is below 8/alpha = " + fmt_double(8.0 / opt.alpha) +
                        "; the truncation error would not be negligible");
    if (opt.k <= 0.0) throw EvalError("solve_discounted: k must be positive");
    const double spawn = opt.spawn > 0.0 ? opt.spawn : 4.0 / opt.k;
    const Vec x0 = opt.x0.empty() ? Vec(model.n, 0.0) : opt.x0;

    DiscountedSolution out;
    out.alpha = opt.alpha;
    out.horizon = T;
    out.dt = opt.dt;
    out.solution = solve_value_map(model, law, opt.alpha, T, opt.dt, spawn, opt.n_paths,
                                   opt.basis_degree, x0, opt.seed, opt.stream);
    out.solution.restrict(0.0, std::min(opt.eval_window, T));

    TimeGrid mc_grid{0.0, opt.dt, static_cast<int>(std::lround(T / opt.dt))};
    const McIntegral mc = mc_discounted_integral(model, law, opt.alpha, mc_grid, opt.mc_paths,
                                                 x0, opt.seed, opt.stream + "-mc", false);
    out.mc_value = mc.mean;
    out.mc_ci_half_width = mc.ci_half_width;

    const double y_reg = out.solution.eval_Y(0.0, x0)[0];
    const double se = out.solution.se_Y(0.0, x0);
    if (std::abs(y_reg - mc.mean) > 3.0 * (mc.ci_half_width + 1.96 * se) + 1e-12)
        out.warnings.push_back("regression value at x0 disagrees with the plain-MC discounted "
                               "integral beyond 3 joint intervals");
    return out;
}

double ErgodicSolution::v(double t, std::span<const double> x) const {
    double te = 0.0;
    if (period) te = std::fmod(std::fmod(t, *period) + *period, *period);
    return v_solution.eval_Y(te, x)[0] - v_ref;
}

ErgodicSolution solve_ebsde(const ControlledDiffusion& model, const ControlLaw& law,
                            const EbsdeOptions& opt) {
    const Vec& sched = opt.alpha_schedule;
    if (sched.size() < 3)
        throw ConfigError("solve_ebsde: the discount schedule needs at least 3 values");
    for (std::size_t i = 0; i < sched.size(); ++i) {
        if (sched[i] <= 0.0)
            throw ConfigError("solve_ebsde: discounts must be positive");
        if (i > 0 && sched[i] >= sched[i - 1])
            throw ConfigError("solve_ebsde: the discount schedule must be strictly decreasing");
    }
    const Vec x0 = opt.x0.empty() ? Vec(model.n, 0.0) : opt.x0;
    const Vec x_ref = opt.x_ref.empty() ? x0 : opt.x_ref;

    ErgodicSolution out;
    out.x_ref = x_ref;
    out.period = model.decl.period;
    if (out.period)
        out.warnings.push_back("periodicity of the control law is assumed, not verified");

    const double ew = out.period ? *out.period : 0.5;
    DiscountedSolution last;
    for (double alpha : sched) {
        DiscountedOptions dopt;
        dopt.alpha = alpha;
        dopt.dt = opt.dt;
        dopt.n_paths = opt.n_paths;
        dopt.mc_paths = opt.mc_paths;
        dopt.basis_degree = opt.basis_degree;
        dopt.k = opt.k;
        dopt.x0 = x0;
        dopt.seed = opt.seed;
        dopt.stream = opt.stream;
        dopt.eval_window = ew;
        DiscountedSolution d = solve_discounted(model, law, dopt);
        for (const auto& w : d.warnings)
            out.warnings.push_back("alpha=" + fmt_double(alpha) + ": " + w);

        AlphaRecord rec;
        rec.alpha = alpha;
        rec.lambda_alpha = alpha * d.solution.eval_Y(0.0, x_ref)[0];
        rec.ci_half_width = alpha * d.mc_ci_half_width;
        rec.mc_lambda = alpha * d.mc_value;
        out.schedule.push_back(rec);
        last = std::move(d);
    }

    // Linear-in-alpha extrapolation from the two smallest discounts.
    const AlphaRecord& a1 = out.schedule[out.schedule.size() - 1];  // smallest
    const AlphaRecord& a2 = out.schedule[out.schedule.size() - 2];
    const double r = a1.alpha / (a2.alpha - a1.alpha);
    out.lambda_hat = a1.lambda_alpha + r * (a1.lambda_alpha - a2.lambda_alpha);
    out.lambda_ci_half_width = std::sqrt((1.0 + r) * (1.0 + r) * a1.ci_half_width * a1.ci_half_width +
                                         r * r * a2.ci_half_width * a2.ci_half_width);
    if (!std::isfinite(out.lambda_hat))
        throw SolverError("solve_ebsde: extrapolated average cost is not finite");

    // The discounted averages should approach lambda monotonically; a real
    // sign flip beyond the joint intervals marks the extrapolation as unsafe.
    for (std::size_t i = 2; i < out.schedule.size(); ++i) {
        const double d_prev = out.schedule[i - 1].lambda_alpha - out.schedule[i - 2].lambda_alpha;
        const double d_cur = out.schedule[i].lambda_alpha - out.schedule[i - 1].lambda_alpha;
        const double joint = out.schedule[i].ci_half_width + out.schedule[i - 2].ci_half_width;
        if (d_prev * d_cur < 0.0 && std::min(std::abs(d_prev), std::abs(d_cur)) > joint) {
            out.monotone_ok = false;
            out.inconclusive = true;
            out.note = "alpha * Y^alpha is not monotone in alpha beyond its confidence intervals";
        }
    }

    out.v_solution = std::move(last.solution);
    out.v_ref = out.v_solution.eval_Y(0.0, x_ref)[0];

    // Quadratic-growth envelope of the bias map over the fitted region.
    {
        const SliceFit& s0 = out.v_solution.slices.front();
        SeqRng rng(opt.seed, opt.stream + "-growth");
        Vec x(model.n), ws, vs;
        double sup = 0.0;
        for (int p = 0; p < opt.growth_points; ++p) {
            for (int d = 0; d < model.n; ++d)
                x[d] = rng.uniform(s0.clamp_lo[d], s0.clamp_hi[d]);
            const double w = 1.0 + norm2sq(x);
            const double av = std::abs(out.v(0.0, x));
            sup = std::max(sup, av / w);
            ws.push_back(w);
            vs.push_back(av);
        }
        out.growth.c_prime = sup;
        out.growth.r2 = fit_line(ws, vs).r2;
        out.growth.n_points = opt.growth_points;
    }
    return out;
}

PeriodicFeatureCheck check_periodic_features(const ControlledDiffusion& model,
                                             const ControlLaw& law, const ErgodicSolution& sol,
                                             const EbsdeOptions& opt) {
    if (!sol.period)
        throw EvalError("check_periodic_features: the model declares no period");
    const double Tp = *sol.period;
    const double dt = sol.v_solution.grid.dt;
    const Vec x0 = opt.x0.empty() ? Vec(model.n, 0.0) : opt.x0;
    const double spawn = opt.k > 0.0 ? 4.0 / opt.k : 4.0;

    // Fresh dispersed paths over one period; pool (t, x, v(t, x)) samples.
    TimeGrid grid{-spawn, dt, static_cast<int>(std::lround((spawn + Tp) / dt))};
    SimulateOptions sim;
    sim.stream = opt.stream + "-periodic";
    sim.store_increments = false;
    sim.store_controls = false;
    const int n_paths = 512;
    PathEnsemble e = simulate_forward(model, law, grid, n_paths, x0, opt.seed, sim);

    const int i0 = grid.index_of(0.0);
    const int i1 = grid.n_steps;
    const int slice_stride = std::max(1, (i1 - i0) / 16);

    std::vector<double> ts;
    std::vector<Vec> xs;
    Vec ys;
    for (int i = i0; i <= i1; i += slice_stride) {
        const double t = grid.t(i);
        const double tmod = std::min(std::max(t, 0.0), Tp);
        for (int j = 0; j < n_paths; ++j) {
            auto x = e.state_at(i, j);
            ts.push_back(tmod);
            xs.emplace_back(x.begin(), x.end());
            ys.push_back(sol.v(tmod, x));
        }
    }
    const int N = static_cast<int>(ys.size());

    // Pooled least squares with column standardization; returns RMS residual.
    auto pooled_rms = [&](const RegressionBasis& basis, bool with_time) {
        const int p = basis.features();
        Vec F(static_cast<std::size_t>(N) * p);
        Vec var_in(basis.n);
        for (int j = 0; j < N; ++j) {
            for (int d = 0; d < model.n; ++d) var_in[d] = xs[j][d];
            if (with_time) {
                const double ph = 2.0 * std::numbers::pi * ts[j] / Tp;
                var_in[model.n] = std::cos(ph);
                var_in[model.n + 1] = std::sin(ph);
            }
            basis.eval(var_in, std::span<double>(F.data() + static_cast<std::size_t>(j) * p, p));
        }
        for (int c = 1; c < p; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int j = 0; j < N; ++j) {
                const double v = F[static_cast<std::size_t>(j) * p + c];
                s += v;
                s2 += v * v;
            }
            const double mean = s / N;
            const double sd = std::sqrt(std::max(1e-24, s2 / N - mean * mean));
            for (int j = 0; j < N; ++j) {
                double& v = F[static_cast<std::size_t>(j) * p + c];
                v = (v - mean) / sd;
            }
        }
        Mat G(p, p);
        Vec rhs(p, 0.0);
        for (int j = 0; j < N; ++j) {
            const double* row = F.data() + static_cast<std::size_t>(j) * p;
            for (int a = 0; a < p; ++a) {
                rhs[a] += row[a] * ys[j];
                for (int c = a; c < p; ++c) G(a, c) += row[a] * row[c];
            }
        }
        for (int a = 0; a < p; ++a) {
            for (int c = 0; c < a; ++c) G(a, c) = G(c, a);
            G(a, a) += 1e-10 * (1.0 + G(a, a));
        }
        Vec coef;
        if (!cholesky_solve(G, rhs, coef))
            throw SolverError("check_periodic_features: pooled regression is degenerate");
        double rss = 0.0;
        for (int j = 0; j < N; ++j) {
            const double* row = F.data() + static_cast<std::size_t>(j) * p;
            double fit = 0.0;
            for (int a = 0; a < p; ++a) fit += coef[a] * row[a];
            const double res = ys[j] - fit;
            rss += res * res;
        }
        return std::sqrt(rss / N);
    };

    PeriodicFeatureCheck chk;
    chk.n_points = N;
    chk.resid_plain = pooled_rms(RegressionBasis::polynomial(model.n, opt.basis_degree), false);
    chk.resid_periodic =
        pooled_rms(RegressionBasis::polynomial(model.n + 2, opt.basis_degree), true);
    chk.reduction = chk.resid_plain > 0.0 ? 1.0 - chk.resid_periodic / chk.resid_plain : 0.0;
    chk.improves = chk.reduction >= 0.05;
    return chk;
}

LambdaConsistency check_lambda_consistency(const ControlledDiffusion& model,
                                           const ControlLaw& law, const ErgodicSolution& sol,
                                           const ConsistencyOptions& opt) {
    if (opt.k <= 0.0) throw EvalError("check_lambda_consistency: k must be positive");
    const Vec x0 = opt.x0.empty() ? Vec(model.n, 0.0) : opt.x0;
    Vec x0_alt = opt.x0_alt;
    if (x0_alt.empty()) {
        x0_alt = x0;
        for (double& v : x0_alt) v += 1.5;
    }
    const double fh_T = opt.fh_horizon > 0.0 ? opt.fh_horizon : 20.0 / opt.k;
    const double lra_T = opt.lra_horizon > 0.0 ? opt.lra_horizon : 100.0 / opt.k;
    const double burn = opt.burn_in > 0.0 ? opt.burn_in : 5.0 / opt.k;

    LambdaConsistency out;
    out.routes.push_back({"vanishing-discount", sol.lambda_hat, sol.lambda_ci_half_width});

    out.start_a = long_run_average(model, law, lra_T, opt.dt, opt.n_paths, x0, opt.seed, burn,
                                   opt.stream + "-lra");
    out.start_b = long_run_average(model, law, lra_T, opt.dt, opt.n_paths, x0_alt, opt.seed,
                                   burn, opt.stream + "-lra");
    out.routes.push_back({"long-run-average", out.start_a.lambda_hat, out.start_a.ci_half_width});
    out.x0_independent = std::abs(out.start_a.lambda_hat - out.start_b.lambda_hat) <=
                         2.0 * (out.start_a.ci_half_width + out.start_b.ci_half_width);

    // Finite-horizon value by backward regression, transient removed with
    // the bias map: Y^{u,T}(0,x)/T = lambda + (v(x) - E v(X_T))/T + o(1/T).
    BsdeSolution fh = solve_value_map(model, law, 0.0, fh_T, opt.dt, 4.0 / opt.k, opt.n_paths,
                                      opt.basis_degree, x0, opt.seed, opt.stream + "-fh");
    fh.restrict(0.0, std::min(0.5, fh_T));
    out.fh_raw = fh.eval_Y(0.0, x0)[0] / fh_T;

    TimeGrid mc_grid{0.0, opt.dt, static_cast<int>(std::lround(fh_T / opt.dt))};
    const McIntegral mc = mc_discounted_integral(model, law, 0.0, mc_grid, opt.n_paths, x0,
                                                 opt.seed, opt.stream + "-fh-mc", true);
    double vbar = 0.0;
    const int n_final = static_cast<int>(mc.final_states.size()) / model.n;
    for (int j = 0; j < n_final; ++j)
        vbar += sol.v(0.0, std::span<const double>(mc.final_states.data() +
                                                       static_cast<std::size_t>(j) * model.n,
                                                   static_cast<std::size_t>(model.n)));
    vbar /= std::max(1, n_final);
    out.fh_correction = (sol.v(0.0, x0) - vbar) / fh_T;
    const double fh_value = out.fh_raw - out.fh_correction;
    const double fh_ci = mc.ci_half_width / fh_T + 0.25 * std::abs(out.fh_correction);
    out.routes.push_back({"finite-horizon", fh_value, fh_ci});

    if (std::abs(out.fh_raw - mc.mean / fh_T) >
        3.0 * (mc.ci_half_width / fh_T) + 1e-12)
        out.warnings.push_back("finite-horizon regression value disagrees with the plain-MC "
                               "running integral beyond 3 intervals");

    for (std::size_t i = 0; i < out.routes.size(); ++i)
        for (std::size_t j = i + 1; j < out.routes.size(); ++j) {
            const double gap = std::abs(out.routes[i].value - out.routes[j].value);
            const double joint = out.routes[i].ci_half_width + out.routes[j].ci_half_width;
            out.max_pairwise_gap = std::max(out.max_pairwise_gap, gap);
            if (joint > 0.0)
                out.worst_gap_over_ci = std::max(out.worst_gap_over_ci, gap / joint);
        }
    out.consistent = out.worst_gap_over_ci <= 2.0;
    return out;
}

}  // namespace ergolab
