#include "ergolab/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "ergolab/parallel.hpp"
#include "ergolab/rng.hpp"

namespace ergolab {

int TimeGrid::index_of(double tt) const {
    const int i = static_cast<int>(std::lround((tt - t_start) / dt));
    return std::clamp(i, 0, n_steps);
}

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

}  // namespace

PathEnsemble simulate_forward(const ControlledDiffusion& model, const ControlLaw& law,
                              const TimeGrid& grid, int n_paths, Vec x0, std::uint64_t seed,
                              const SimulateOptions& opt) {
    if (law.dim() != model.m) throw EvalError("simulate_forward: law dimension != model.m");
    if (static_cast<int>(x0.size()) != model.n)
        throw EvalError("simulate_forward: x0 dimension != model.n");
    if (grid.dt <= 0.0 || grid.n_steps <= 0)
        throw EvalError("simulate_forward: grid must have dt > 0 and n_steps > 0");

    PathEnsemble e;
    e.grid = grid;
    e.n = model.n;
    e.m = model.m;
    e.n_paths = n_paths;
    e.x0 = x0;
    e.seed = seed;
    e.stream = opt.stream;
    e.model_fingerprint = model.fingerprint();

    const int n = model.n, m = model.m;
    const std::size_t slice = static_cast<std::size_t>(n_paths) * n;
    e.states.resize(slice * (grid.n_steps + 1));
    if (opt.store_increments) e.increments.resize(slice * grid.n_steps);
    if (opt.store_controls) e.controls.resize(static_cast<std::size_t>(n_paths) * m * grid.n_steps);

    if (opt.lipschitz_hat && grid.dt > 1.0 / (4.0 * *opt.lipschitz_hat * *opt.lipschitz_hat))
        e.warnings.push_back("dt exceeds 1/(4*K^2) stability heuristic for the estimated Lipschitz constant");

    const std::uint64_t skey = stream_key(seed, opt.stream);
    const double sqdt = std::sqrt(grid.dt);
    BlowupFlag blown;

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t, std::size_t lo, std::size_t hi) {
        Vec x(n), u(m), bv(n), sv(n * n), dw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            for (int d = 0; d < n; ++d) {
                double v = x0[d];
                if (opt.initial_spread > 0.0) v += opt.initial_spread * rng.normal_init(d);
                x[d] = v;
                e.states[j * n + d] = v;
            }
            for (int i = 0; i < grid.n_steps; ++i) {
                const double t = grid.t(i);
                law.eval(t, x, u);
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
                const std::size_t base = (static_cast<std::size_t>(i) + 1) * slice + j * n;
                for (int d = 0; d < n; ++d) e.states[base + d] = x[d];
                if (opt.store_increments) {
                    const std::size_t ib = static_cast<std::size_t>(i) * slice + j * n;
                    for (int d = 0; d < n; ++d) e.increments[ib + d] = dw[d];
                }
                if (opt.store_controls) {
                    const std::size_t cb =
                        (static_cast<std::size_t>(i) * n_paths + j) * m;
                    for (int d = 0; d < m; ++d) e.controls[cb + d] = u[d];
                }
                if (opt.check_blowup && (nrm2 > kBlowupThreshold * kBlowupThreshold || !std::isfinite(nrm2))) {
                    blown.record(static_cast<int>(j), i);
                    return;
                }
            }
        }
    });
    throw_if_blown(blown);
    return e;
}

TangentEnsemble simulate_tangent(const ControlledDiffusion& model, const ControlLaw& law,
                                 const PathEnsemble& paths, Vec h, bool use_fd) {
    if (!use_fd && !model.has_analytic_gradients())
        throw EvalError("simulate_tangent: model has no analytic gradients; "
                        "pass use_fd=true to enable the finite-difference fallback");
    if (paths.increments.empty())
        throw EvalError("simulate_tangent: ensemble was simulated without stored increments");
    const int n = model.n, m = model.m;
    TangentEnsemble tan;
    tan.grid = paths.grid;
    tan.n = n;
    tan.n_paths = paths.n_paths;
    tan.h = h;
    const std::size_t slice = static_cast<std::size_t>(paths.n_paths) * n;
    tan.values.resize(slice * (paths.grid.n_steps + 1));

    parallel_blocks(static_cast<std::size_t>(paths.n_paths), [&](std::size_t, std::size_t lo, std::size_t hi) {
        Vec v(n), vnext(n), u(m), mdw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            std::copy(h.begin(), h.end(), tan.values.begin() + j * n);
            std::copy(h.begin(), h.end(), v.begin());
            for (int i = 0; i < paths.grid.n_steps; ++i) {
                const double t = paths.grid.t(i);
                auto x = paths.state_at(i, static_cast<int>(j));
                std::span<const double> uu;
                if (!paths.controls.empty()) {
                    uu = paths.control_at(i, static_cast<int>(j));
                } else {
                    law.eval(t, x, u);
                    uu = u;
                }
                const GradientBundle g = model_gradients(model, t, x, uu);
                auto dw = paths.increment_at(i, static_cast<int>(j));
                // M = sum_k V_k dsigma/dx_k; V_next = V + gx_b V dt + M dW.
                for (int r = 0; r < n; ++r) {
                    double drift = 0.0;
                    for (int c = 0; c < n; ++c) drift += g.gx_b(r, c) * v[c];
                    double diff = 0.0;
                    for (int k = 0; k < n; ++k) {
                        if (v[k] == 0.0) continue;
                        double row = 0.0;
                        for (int c = 0; c < n; ++c) row += g.gx_sigma[k](r, c) * dw[c];
                        diff += v[k] * row;
                    }
                    vnext[r] = v[r] + drift * paths.grid.dt + diff;
                }
                std::swap(v, vnext);
                const std::size_t base = (static_cast<std::size_t>(i) + 1) * slice + j * n;
                for (int d = 0; d < n; ++d) tan.values[base + d] = v[d];
            }
        }
    });
    return tan;
}

Vec second_moment_curve(const ControlledDiffusion& model, const ControlLaw& law,
                        const TimeGrid& grid, int n_paths, const Vec& x0, std::uint64_t seed,
                        const std::string& stream) {
    const int n = model.n, m = model.m;
    const std::size_t npts = grid.n_steps + 1;
    const std::size_t nblocks = block_count(static_cast<std::size_t>(n_paths));
    std::vector<Vec> partial(nblocks, Vec(npts, 0.0));
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(grid.dt);
    BlowupFlag blown;

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t b, std::size_t lo, std::size_t hi) {
        Vec x(n), u(m), bv(n), sv(n * n), dw(n);
        Vec& acc = partial[b];
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x0.begin(), x0.end(), x.begin());
            acc[0] += norm2sq(x);
            for (int i = 0; i < grid.n_steps; ++i) {
                const double t = grid.t(i);
                law.eval(t, x, u);
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
                acc[i + 1] += nrm2;
                if (nrm2 > kBlowupThreshold * kBlowupThreshold || !std::isfinite(nrm2)) {
                    blown.record(static_cast<int>(j), i);
                    return;
                }
            }
        }
    });
    throw_if_blown(blown);
    Vec m2(npts, 0.0);
    for (std::size_t b = 0; b < nblocks; ++b)
        for (std::size_t i = 0; i < npts; ++i) m2[i] += partial[b][i];
    for (double& v : m2) v /= n_paths;
    return m2;
}

MomentFit estimate_moment_bound(const PathEnsemble& ensemble) {
    const std::size_t npts = ensemble.grid.n_steps + 1;
    Vec times(npts), m2(npts, 0.0);
    for (std::size_t i = 0; i < npts; ++i) {
        times[i] = ensemble.grid.t(static_cast<int>(i));
        double s = 0.0;
        for (int j = 0; j < ensemble.n_paths; ++j)
            s += norm2sq(ensemble.state_at(static_cast<int>(i), j));
        m2[i] = s / ensemble.n_paths;
    }
    return fit_moment_curve(std::move(times), std::move(m2));
}

MomentFit fit_moment_curve(Vec times, Vec m2) {
    MomentFit fit;
    fit.times = std::move(times);
    fit.m2 = std::move(m2);
    const std::size_t npts = fit.m2.size();
    if (npts < 10) {
        fit.inconclusive = true;
        fit.note = "too few grid points";
        return fit;
    }
    // Tail level (and its scatter, the sampling noise floor) from the last 20% of the curve.
    const std::size_t tail = std::max<std::size_t>(1, npts / 5);
    double c = 0.0;
    for (std::size_t i = npts - tail; i < npts; ++i) c += fit.m2[i];
    c /= tail;
    double tail_var = 0.0;
    for (std::size_t i = npts - tail; i < npts; ++i) tail_var += (fit.m2[i] - c) * (fit.m2[i] - c);
    const double tail_sd = tail > 1 ? std::sqrt(tail_var / (tail - 1)) : 0.0;
    fit.c_hat = c;

    const double head = fit.m2.front();
    double peak = 0.0;
    for (double v : fit.m2) peak = std::max(peak, v);
    if (c > 1.5 * std::max(head, 1e-12) && fit.m2.back() > 0.9 * peak) {
        fit.inconclusive = true;
        fit.note = "second moment grows toward the horizon (no dissipative decay)";
        return fit;
    }
    const double excess0 = head - c;
    if (excess0 <= 1e-9 * std::max(1.0, c)) {
        fit.inconclusive = true;
        fit.note = "initial point already at the stationary level; decay rate unidentifiable";
        return fit;
    }
    // Keep only points clearly above both a fixed fraction of the initial excess and
    // the sampling noise floor; otherwise the log of near-zero noise wrecks the fit.
    // Path-average errors are autocorrelated in t, so the margin is generous.
    const double cut = std::max(0.05 * excess0, 5.0 * tail_sd);
    Vec ft, fy;
    for (std::size_t i = 0; i < npts; ++i) {
        const double ex = fit.m2[i] - c;
        if (ex > cut) {
            ft.push_back(fit.times[i]);
            fy.push_back(std::log(ex));
        }
    }
    if (ft.size() < 5) {
        fit.inconclusive = true;
        fit.note = "decay window too short for a rate fit";
        return fit;
    }
    const LineFit lf = fit_line(ft, fy);
    fit.mu_hat = -0.5 * lf.slope;
    fit.r2 = lf.r2;
    if (lf.slope >= 0.0 || lf.r2 < 0.8) {
        fit.inconclusive = true;
        fit.note = "log-excess curve is not a clean exponential decay";
    }
    return fit;
}

LongRunAverage long_run_average(const ControlledDiffusion& model, const ControlLaw& law,
                                double horizon, double dt, int n_paths, const Vec& x0,
                                std::uint64_t seed, double burn_in, const std::string& stream) {
    if (burn_in >= horizon) throw EvalError("long_run_average: burn_in must be below horizon");
    TimeGrid grid{0.0, dt, static_cast<int>(std::lround(horizon / dt))};
    const int n = model.n, m = model.m;
    const int i_burn = grid.index_of(burn_in);
    // Accumulated the same way as the per-step costs so that a unit cost
    // averages to exactly one.
    double span = 0.0;
    for (int i = i_burn; i < grid.n_steps; ++i) span += dt;
    const std::size_t nblocks = block_count(static_cast<std::size_t>(n_paths));
    std::vector<double> sum1(nblocks, 0.0), sum2(nblocks, 0.0);
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(dt);
    BlowupFlag blown;

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec x(n), u(m), bv(n), sv(n * n), dw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x0.begin(), x0.end(), x.begin());
            double acc = 0.0;
            for (int i = 0; i < grid.n_steps; ++i) {
                const double t = grid.t(i);
                law.eval(t, x, u);
                if (i >= i_burn) acc += model.L(t, x, u) * dt;
                model.b(t, x, u, bv);
                model.sigma(t, x, u, sv);
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                double nrm2 = 0.0;
                for (int d = 0; d < n; ++d) {
                    double xi = x[d] + bv[d] * dt;
                    for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                    x[d] = xi;
                    nrm2 += xi * xi;
                }
                if (nrm2 > kBlowupThreshold * kBlowupThreshold || !std::isfinite(nrm2)) {
                    blown.record(static_cast<int>(j), i);
                    return;
                }
            }
            const double lam = acc / span;
            sum1[blk] += lam;
            sum2[blk] += lam * lam;
        }
    });
    throw_if_blown(blown);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < nblocks; ++b) {
        s1 += sum1[b];
        s2 += sum2[b];
    }
    LongRunAverage out;
    out.n_paths = n_paths;
    out.horizon = horizon;
    out.burn_in = burn_in;
    out.lambda_hat = s1 / n_paths;
    const double var = std::max(0.0, s2 / n_paths - out.lambda_hat * out.lambda_hat);
    out.ci_half_width = 1.96 * std::sqrt(var / n_paths);
    return out;
}

}  // namespace ergolab
