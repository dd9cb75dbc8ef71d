#include "ergolab/adjoint.hpp"

#include <algorithm>
#include <cmath>

#include "ergolab/hamiltonian.hpp"
#include "ergolab/rng.hpp"

namespace ergolab {

RegressionBasis RegressionBasis::polynomial(int n, int degree) {
    RegressionBasis b;
    b.n = n;
    b.degree = degree;
    // Multi-indices with total degree <= degree, ordered by total degree.
    std::vector<int> idx(n, 0);
    for (int total = 0; total <= degree; ++total) {
        // Enumerate compositions of `total` into n parts.
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == n - 1) {
                idx[pos] = left;
                b.exponents.push_back(idx);
                return;
            }
            for (int e = left; e >= 0; --e) {
                idx[pos] = e;
                rec(pos + 1, left - e);
            }
        };
        rec(0, total);
    }
    return b;
}

void RegressionBasis::eval(std::span<const double> x, std::span<double> out) const {
    for (std::size_t f = 0; f < exponents.size(); ++f) {
        double v = 1.0;
        for (int d = 0; d < n; ++d)
            for (int e = 0; e < exponents[f][d]; ++e) v *= x[d];
        out[f] = v;
    }
}

namespace {

// Working view of one slice regression: raw features are built once,
// standardized in place, and shared by the Z and Y fits.
struct SliceDesign {
    int n_paths = 0, p = 0;
    Vec F;  // n_paths x p, standardized
    Mat G;  // p x p, with ridge applied if needed
    SliceFit fit;

    void build(const RegressionBasis& basis, const PathEnsemble& e, int slice_index,
               double ridge_condition, BsdeDiagnostics& diag) {
        const int n = e.n;
        n_paths = e.n_paths;
        p = basis.features();
        F.resize(static_cast<std::size_t>(n_paths) * p);
        for (int j = 0; j < n_paths; ++j)
            basis.eval(e.state_at(slice_index, j), std::span<double>(F.data() + static_cast<std::size_t>(j) * p, p));

        fit.f_mean.assign(p, 0.0);
        fit.f_scale.assign(p, 1.0);
        for (int c = 1; c < p; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int j = 0; j < n_paths; ++j) {
                const double v = F[static_cast<std::size_t>(j) * p + c];
                s += v;
                s2 += v * v;
            }
            const double mean = s / n_paths;
            const double var = std::max(0.0, s2 / n_paths - mean * mean);
            fit.f_mean[c] = mean;
            fit.f_scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
        for (int j = 0; j < n_paths; ++j)
            for (int c = 1; c < p; ++c) {
                double& v = F[static_cast<std::size_t>(j) * p + c];
                v = (v - fit.f_mean[c]) / fit.f_scale[c];
            }

        G = Mat(p, p);
        for (int j = 0; j < n_paths; ++j) {
            const double* row = F.data() + static_cast<std::size_t>(j) * p;
            for (int a = 0; a < p; ++a)
                for (int c = a; c < p; ++c) G(a, c) += row[a] * row[c];
        }
        for (int a = 0; a < p; ++a)
            for (int c = 0; c < a; ++c) G(a, c) = G(c, a);

        Vec ev = sym_eigenvalues(G);
        const double lo = std::max(ev.front(), 0.0), hi = std::max(ev.back(), 1e-300);
        fit.cond = lo > 0.0 ? hi / lo : 1e300;
        if (fit.cond > ridge_condition) {
            const double lambda = 1e-8 * hi + 1e-12;
            for (int a = 0; a < p; ++a) G(a, a) += lambda;
            fit.ridged = true;
            ++diag.ridge_count;
        }
        diag.cond_max = std::max(diag.cond_max, fit.cond);
        fit.ginv = invert(G);

        // Clamp range: central 99% of the slice states per dimension.
        fit.clamp_lo.resize(n);
        fit.clamp_hi.resize(n);
        Vec scratch(n_paths);
        for (int d = 0; d < n; ++d) {
            for (int j = 0; j < n_paths; ++j) scratch[j] = e.state(slice_index, j, d);
            const int qlo = static_cast<int>(0.005 * (n_paths - 1));
            const int qhi = static_cast<int>(0.995 * (n_paths - 1));
            std::nth_element(scratch.begin(), scratch.begin() + qlo, scratch.end());
            fit.clamp_lo[d] = scratch[qlo];
            std::nth_element(scratch.begin(), scratch.begin() + qhi, scratch.end());
            fit.clamp_hi[d] = scratch[qhi];
        }
    }

    // Least squares for K targets stored path-major in `targets`
    // (targets[j*K + c]); writes coefficients (K x p), returns worst RMS
    // residual, and optionally leaves fitted values in `fitted`.
    double regress(std::span<const double> targets, int K, Mat& coef, Vec* fitted) const {
        Mat rhs(p, K);
        for (int j = 0; j < n_paths; ++j) {
            const double* row = F.data() + static_cast<std::size_t>(j) * p;
            const double* tj = targets.data() + static_cast<std::size_t>(j) * K;
            for (int a = 0; a < p; ++a)
                for (int c = 0; c < K; ++c) rhs(a, c) += row[a] * tj[c];
        }
        Mat sol;
        if (!cholesky_solve(G, rhs, sol)) {
            // Heavily degenerate even after ridge: fall back to intercept-only.
            sol = Mat(p, K);
            for (int c = 0; c < K; ++c) {
                double s = 0.0;
                for (int j = 0; j < n_paths; ++j) s += targets[static_cast<std::size_t>(j) * K + c];
                sol(0, c) = s / n_paths;
            }
        }
        coef = Mat(K, p);
        for (int a = 0; a < p; ++a)
            for (int c = 0; c < K; ++c) coef(c, a) = sol(a, c);
        Vec rss(K, 0.0);
        if (fitted) fitted->resize(static_cast<std::size_t>(n_paths) * K);
        for (int j = 0; j < n_paths; ++j) {
            const double* row = F.data() + static_cast<std::size_t>(j) * p;
            for (int c = 0; c < K; ++c) {
                double v = 0.0;
                for (int a = 0; a < p; ++a) v += coef(c, a) * row[a];
                if (fitted) (*fitted)[static_cast<std::size_t>(j) * K + c] = v;
                const double r = targets[static_cast<std::size_t>(j) * K + c] - v;
                rss[c] += r * r;
            }
        }
        double worst = 0.0;
        for (int c = 0; c < K; ++c) worst = std::max(worst, std::sqrt(rss[c] / n_paths));
        return worst;
    }
};

}  // namespace

const SliceFit& BsdeSolution::slice_at(double t) const {
    if (t < eval_lo - 0.5 * grid.dt || t > eval_hi + 0.5 * grid.dt)
        throw EvalError("BsdeSolution: evaluation time " + fmt_double(t) +
                        " outside the valid window [" + fmt_double(eval_lo) + ", " +
                        fmt_double(eval_hi) + "]");
    return slices[grid.index_of(t)];
}

void BsdeSolution::features_clamped(const SliceFit& s, std::span<const double> x, Vec& phi) const {
    Vec xc(x.begin(), x.end());
    for (int d = 0; d < n; ++d) xc[d] = std::clamp(xc[d], s.clamp_lo[d], s.clamp_hi[d]);
    phi.resize(basis.features());
    basis.eval(xc, phi);
    for (int c = 1; c < basis.features(); ++c) phi[c] = (phi[c] - s.f_mean[c]) / s.f_scale[c];
}

Vec BsdeSolution::eval_Y(double t, std::span<const double> x) const {
    const SliceFit& s = slice_at(t);
    Vec phi;
    features_clamped(s, x, phi);
    Vec out(s.coef_y.rows, 0.0);
    for (std::size_t c = 0; c < s.coef_y.rows; ++c)
        for (int a = 0; a < basis.features(); ++a) out[c] += s.coef_y(c, a) * phi[a];
    return out;
}

Mat BsdeSolution::eval_Z(double t, std::span<const double> x) const {
    const SliceFit* s = &slice_at(t);
    if (s->coef_z.rows == 0) {
        // Terminal slice carries no Z regression; use the previous slice.
        const int i = grid.index_of(t);
        if (i > 0 && slices[i - 1].coef_z.rows > 0) s = &slices[i - 1];
        else throw EvalError("BsdeSolution: Z was not fitted");
    }
    Vec phi;
    features_clamped(*s, x, phi);
    Mat z(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            double v = 0.0;
            for (int a = 0; a < basis.features(); ++a) v += s->coef_z(r * n + c, a) * phi[a];
            z(r, c) = v;
        }
    return z;
}

namespace {
double fitted_se(const SliceFit& s, const Vec& phi, double resid_sd) {
    double q = 0.0;
    const std::size_t p = phi.size();
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t c = 0; c < p; ++c) q += phi[a] * s.ginv(a, c) * phi[c];
    return resid_sd * std::sqrt(std::max(q, 0.0));
}
}  // namespace

double BsdeSolution::se_Y(double t, std::span<const double> x) const {
    const SliceFit& s = slice_at(t);
    Vec phi;
    features_clamped(s, x, phi);
    return fitted_se(s, phi, s.resid_sd_y);
}

double BsdeSolution::se_Z(double t, std::span<const double> x) const {
    const SliceFit& s = slice_at(t);
    Vec phi;
    features_clamped(s, x, phi);
    return fitted_se(s, phi, s.resid_sd_z);
}

void BsdeSolution::restrict(double t_lo, double t_hi) {
    const int i_lo = grid.index_of(t_lo);
    const int i_hi = grid.index_of(t_hi);
    if (i_hi <= i_lo) throw EvalError("BsdeSolution::restrict: empty window");
    slices = std::vector<SliceFit>(slices.begin() + i_lo, slices.begin() + i_hi + 1);
    grid.t_start = grid.t(i_lo);
    grid.n_steps = i_hi - i_lo;
    eval_lo = grid.t_start;
    eval_hi = grid.t_end();
}

BsdeSolution solve_fh_adjoint(const ControlledDiffusion& model, const ControlLaw& law,
                              const PathEnsemble& ensemble, const RegressionBasis& basis,
                              const TerminalGradient& terminal_grad,
                              const FhAdjointOptions& opt) {
    const int n = model.n, m = model.m;
    const int ky = opt.y_dim > 0 ? opt.y_dim : n;
    const int N = ensemble.n_paths;
    const int S = ensemble.grid.n_steps;
    const double dt = ensemble.grid.dt;
    const bool fit_z = opt.fit_z;
    if (fit_z && ensemble.increments.empty())
        throw EvalError("solve_fh_adjoint: Z regression needs stored Brownian increments");
    if (!opt.custom_driver && ky != n)
        throw EvalError("solve_fh_adjoint: Hamiltonian driver requires y_dim == n");

    BsdeSolution sol;
    sol.grid = ensemble.grid;
    sol.basis = basis;
    sol.n = n;
    sol.model_fingerprint = ensemble.model_fingerprint;
    sol.slices.resize(S + 1);
    sol.eval_lo = ensemble.grid.t_start;
    sol.eval_hi = ensemble.grid.t_end();

    Vec y_next(static_cast<std::size_t>(N) * ky, 0.0);
    if (terminal_grad) {
        Vec g(ky);
        for (int j = 0; j < N; ++j) {
            terminal_grad(ensemble.state_at(S, j), g);
            std::copy(g.begin(), g.end(), y_next.begin() + static_cast<std::size_t>(j) * ky);
        }
    }

    // Terminal slice: regress the terminal values so eval_Y works uniformly.
    {
        SliceDesign d;
        d.build(basis, ensemble, S, opt.ridge_condition, sol.diagnostics);
        d.fit.resid_sd_y = d.regress(y_next, ky, d.fit.coef_y, nullptr);
        sol.slices[S] = std::move(d.fit);
    }

    Vec z_targets, z_fitted, y_targets(static_cast<std::size_t>(N) * ky), u(m), driver(ky);
    if (fit_z) {
        z_targets.resize(static_cast<std::size_t>(N) * n * n);
        z_fitted.resize(static_cast<std::size_t>(N) * n * n);
    }
    Mat zmat(n, n);

    for (int i = S - 1; i >= 0; --i) {
        const double t = ensemble.grid.t(i);
        SliceDesign d;
        d.build(basis, ensemble, i, opt.ridge_condition, sol.diagnostics);

        if (fit_z) {
            // Z_i ~ E[ Y_{i+1} dW_i^T ] / dt, regressed on the slice state.
            for (int j = 0; j < N; ++j) {
                auto dw = ensemble.increment_at(i, j);
                const double* yj = y_next.data() + static_cast<std::size_t>(j) * ky;
                double* zj = z_targets.data() + static_cast<std::size_t>(j) * n * n;
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < n; ++c) zj[r * n + c] = yj[r] * dw[c] / dt;
            }
            d.fit.resid_sd_z = d.regress(z_targets, n * n, d.fit.coef_z, &z_fitted);
        }

        for (int pic = 0; pic <= opt.picard_iterations; ++pic) {
            const Vec& y_source = y_next;  // explicit scheme drives with Y_{i+1}
            for (int j = 0; j < N; ++j) {
                auto x = ensemble.state_at(i, j);
                std::span<const double> uu;
                if (!ensemble.controls.empty()) {
                    uu = ensemble.control_at(i, j);
                } else {
                    law.eval(t, x, u);
                    uu = u;
                }
                const double* yj = y_source.data() + static_cast<std::size_t>(j) * ky;
                if (fit_z)
                    std::copy(z_fitted.begin() + static_cast<std::size_t>(j) * n * n,
                              z_fitted.begin() + static_cast<std::size_t>(j + 1) * n * n,
                              zmat.a.begin());
                if (opt.custom_driver) {
                    opt.custom_driver(t, x, uu, std::span<const double>(yj, ky), zmat, driver);
                } else {
                    const GradientBundle g = model_gradients(model, t, x, uu);
                    const Vec gh = grad_H_x(g, std::span<const double>(yj, ky), zmat);
                    std::copy(gh.begin(), gh.end(), driver.begin());
                }
                for (int c = 0; c < ky; ++c)
                    y_targets[static_cast<std::size_t>(j) * ky + c] = yj[c] + driver[c] * dt;
            }
            Vec y_fitted;
            d.fit.resid_sd_y = d.regress(y_targets, ky, d.fit.coef_y, &y_fitted);
            if (pic == opt.picard_iterations) y_next = std::move(y_fitted);
        }
        sol.slices[i] = std::move(d.fit);
    }
    return sol;
}

namespace {

// Fixed evaluation set for Cauchy gaps: the slice states of the first
// `eval_paths` paths at the probe times, plus per-dimension grids spanning
// the central quantiles with the other coordinates at the median.
std::vector<Vec> build_eval_points(const PathEnsemble& e, int slice_index, int eval_paths,
                                   int grid_points) {
    std::vector<Vec> pts;
    const int n = e.n;
    const int np = std::min(eval_paths, e.n_paths);
    for (int j = 0; j < np; ++j) {
        auto x = e.state_at(slice_index, j);
        pts.emplace_back(x.begin(), x.end());
    }
    Vec med(n), qlo(n), qhi(n), scratch(e.n_paths);
    for (int d = 0; d < n; ++d) {
        for (int j = 0; j < e.n_paths; ++j) scratch[j] = e.state(slice_index, j, d);
        auto q = [&](double f) {
            const int idx = static_cast<int>(f * (e.n_paths - 1));
            std::nth_element(scratch.begin(), scratch.begin() + idx, scratch.end());
            return scratch[idx];
        };
        qlo[d] = q(0.01);
        qhi[d] = q(0.99);
        med[d] = q(0.5);
    }
    for (int d = 0; d < n; ++d)
        for (int g = 0; g < grid_points; ++g) {
            Vec x = med;
            x[d] = qlo[d] + (qhi[d] - qlo[d]) * g / (grid_points - 1);
            pts.push_back(std::move(x));
        }
    return pts;
}

}  // namespace

IhAdjointSolution solve_ih_adjoint(const ControlledDiffusion& model, const ControlLaw& law,
                                   const IhAdjointOptions& opt) {
    if (opt.k <= 0.0)
        throw AssumptionError("solve_ih_adjoint: requires a verified dissipativity rate k > 0");
    const double spawn = opt.spawn > 0.0 ? opt.spawn : 4.0 / opt.k;
    const double T_init = opt.T_init > 0.0
                              ? opt.T_init
                              : std::max(4.0 / opt.k, opt.T0 + 2.0 / opt.k);
    if (T_init < opt.T0)
        throw EvalError("solve_ih_adjoint: T_init must cover the evaluation window T0");
    Vec x0 = opt.x0.empty() ? Vec(model.n, 0.0) : opt.x0;
    const RegressionBasis basis = RegressionBasis::polynomial(model.n, opt.basis_degree);

    IhAdjointSolution out;
    SimulateOptions sim_opt;
    sim_opt.stream = opt.stream;
    sim_opt.store_controls = false;

    BsdeSolution prev;
    bool have_prev = false;
    std::vector<Vec> eval0, evalT0;
    double gap_prev = 1e300;
    int worse_streak = 0;
    double T = T_init;

    for (int iter = 0; iter < opt.max_solves; ++iter) {
        TimeGrid grid{-spawn, opt.dt, static_cast<int>(std::lround((spawn + T) / opt.dt))};
        PathEnsemble e = simulate_forward(model, law, grid, opt.n_paths, x0, opt.seed, sim_opt);
        FhAdjointOptions fh;
        fh.picard_iterations = opt.picard_iterations;
        BsdeSolution cur = solve_fh_adjoint(model, law, e, basis, nullptr, fh);

        if (!have_prev) {
            eval0 = build_eval_points(e, grid.index_of(0.0), opt.eval_paths, opt.eval_grid_points);
            evalT0 = build_eval_points(e, grid.index_of(opt.T0), opt.eval_paths, opt.eval_grid_points);
            prev = std::move(cur);
            have_prev = true;
            T *= opt.growth;
            continue;
        }

        double gap = 0.0;
        for (const auto& [pts, tt] : {std::pair{&eval0, 0.0}, std::pair{&evalT0, opt.T0}}) {
            for (const Vec& x : *pts) {
                const Vec a = prev.eval_Y(tt, x);
                const Vec b = cur.eval_Y(tt, x);
                double d2 = 0.0;
                for (std::size_t c = 0; c < a.size(); ++c) d2 += (a[c] - b[c]) * (a[c] - b[c]);
                gap = std::max(gap, std::sqrt(d2));
            }
        }
        out.history.push_back({T / opt.growth, gap});

        if (gap >= gap_prev) {
            if (++worse_streak >= 3)
                throw SolverError("solve_ih_adjoint: Cauchy gaps failed to contract over three "
                                  "consecutive horizon extensions (no dissipative contraction)");
        } else {
            worse_streak = 0;
        }
        gap_prev = gap;
        prev = std::move(cur);

        if (gap <= opt.tol && static_cast<int>(out.history.size()) >= opt.min_gaps) {
            out.converged = true;
            out.final_horizon = T;
            break;
        }
        T *= opt.growth;
    }
    if (!out.converged)
        throw SolverError("solve_ih_adjoint: horizon truncation did not reach tolerance " +
                          fmt_double(opt.tol) + " within " + std::to_string(opt.max_solves) +
                          " horizon extensions");

    // Decay-rate diagnostic: log gap vs horizon against the theoretical -2k.
    Vec ts, ls;
    for (const auto& rec : out.history)
        if (rec.gap > 0.0) {
            ts.push_back(rec.horizon);
            ls.push_back(std::log(rec.gap));
        }
    if (ts.size() >= 2) {
        const LineFit lf = fit_line(ts, ls);
        out.decay_slope = lf.slope;
        out.slope_ratio = lf.slope / (-2.0 * opt.k);
        if (out.slope_ratio < 0.1 || out.slope_ratio > 10.0)
            out.warnings.push_back("Cauchy gap decay rate differs from the dissipative rate -2k "
                                   "by more than a factor of 10");
    } else {
        out.warnings.push_back("too few positive Cauchy gaps for a decay-rate fit");
    }

    out.solution = std::move(prev);
    out.solution.restrict(0.0, opt.T0);
    return out;
}

BoundCheck verify_bound(const BsdeSolution& sol, const PathEnsemble& ensemble, double k,
                        std::optional<double> grad_cost_bound) {
    BoundCheck chk;
    if (!grad_cost_bound) {
        chk.skipped = true;
        chk.note = "model declares no gradient-cost bound (||grad_x L|| unbounded); "
                   "the C/k envelope does not apply";
        return chk;
    }
    const double C = *grad_cost_bound;
    chk.bound = C / k;
    // Cross-check the closed form against the epsilon-optimization it came
    // from: min over eps in (0,k) of sqrt(C^2 / (4 eps (k - eps))).
    double num = 1e300;
    for (int i = 1; i < 4096; ++i) {
        const double eps = k * i / 4096.0;
        num = std::min(num, std::sqrt(C * C / (4.0 * eps * (k - eps))));
    }
    if (std::abs(num - chk.bound) > 1e-3 * chk.bound)
        chk.note = "epsilon-optimized envelope disagrees with C/k";

    double sup = 0.0;
    const int i_lo = std::max(0, ensemble.grid.index_of(sol.eval_lo));
    const int i_hi = std::min(ensemble.grid.n_steps, ensemble.grid.index_of(sol.eval_hi));
    for (int i = i_lo; i <= i_hi; ++i) {
        const double t = ensemble.grid.t(i);
        for (int j = 0; j < ensemble.n_paths; ++j) {
            const Vec y = sol.eval_Y(t, ensemble.state_at(i, j));
            sup = std::max(sup, norm2(y));
        }
    }
    chk.sup_norm = sup;
    chk.pass = sup <= chk.slack * chk.bound;
    return chk;
}

}  // namespace ergolab
