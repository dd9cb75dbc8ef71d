#include "ergolab/smp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>

#include "ergolab/parallel.hpp"
#include "ergolab/rng.hpp"

namespace ergolab {

namespace {

struct BlowupFlag {
    std::atomic<bool> hit{false};
    std::atomic<long> path{-1};
    std::atomic<int> step{-1};
    void record(long j, int i) {
        bool expected = false;
        if (hit.compare_exchange_strong(expected, true)) {
            path.store(j);
            step.store(i);
        }
    }
};

double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double frobenius(const Vec& a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

double median_of(Vec v) {
    if (v.empty()) return 0.0;
    const std::size_t k = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + k, v.end());
    double hi = v[k];
    if (v.size() % 2 == 0) {
        std::nth_element(v.begin(), v.begin() + k - 1, v.begin() + k);
        return 0.5 * (v[k - 1] + hi);
    }
    return hi;
}

}  // namespace

MinimalityReport verify_hamiltonian_minimality(const ControlledDiffusion& model,
                                               const ControlLaw& law, const BsdeSolution& sol,
                                               const PathEnsemble& ensemble,
                                               const MinimalityOptions& opt) {
    if (ensemble.model_fingerprint != sol.model_fingerprint)
        throw ConfigError("minimality check: ensemble and solution come from different models");
    const int n = model.n, m = model.m;

    std::vector<int> window;
    for (int i = 0; i <= ensemble.grid.n_steps; ++i) {
        const double t = ensemble.grid.t(i);
        if (t >= sol.eval_lo - 1e-12 && t <= sol.eval_hi + 1e-12) window.push_back(i);
    }
    if (window.empty())
        throw EvalError("minimality check: ensemble does not overlap the solution window");

    std::vector<int> slices;
    const int ns = std::min<int>(opt.n_slices, static_cast<int>(window.size()));
    for (int k = 0; k < ns; ++k) {
        const double pos = ns == 1 ? 0.0
                                   : static_cast<double>(k) * (window.size() - 1) / (ns - 1);
        const int idx = window[static_cast<std::size_t>(std::lround(pos))];
        if (slices.empty() || slices.back() != idx) slices.push_back(idx);
    }

    SeqRng rng(opt.seed, "smp-minimality");
    MinimalityReport rep;
    Vec gaps, habs, ses;
    Vec u(m), sv(n * n), bv(n);
    int not_converged = 0;
    MinimizeOptions mopt;
    mopt.bounds = opt.u_bounds;

    for (int i : slices) {
        const double t = ensemble.grid.t(i);
        for (int s = 0; s < opt.paths_per_slice; ++s) {
            const int j = std::min<int>(ensemble.n_paths - 1,
                                        static_cast<int>(rng.uniform() * ensemble.n_paths));
            const auto x = ensemble.state_at(i, j);
            // Stored controls cover step indices only (the control applied over
            // [t_i, t_{i+1})); at the final grid point fall back to the law.
            if (!ensemble.controls.empty() && i < ensemble.grid.n_steps) {
                const auto uc = ensemble.control_at(i, j);
                std::copy(uc.begin(), uc.end(), u.begin());
            } else {
                law.eval(t, x, u);
            }
            const Vec y = sol.eval_Y(t, x);
            const Mat z = sol.eval_Z(t, x);
            const double h = eval_H(model, t, x, u, y, z);
            const MinimizeResult mr = minimize_H_u(model, t, x, y, z, u, mopt);
            if (!mr.converged) ++not_converged;
            const double gap = h - mr.h_star;

            model.b(t, x, u, bv);
            model.sigma(t, x, u, sv);
            const double se = sol.se_Y(t, x) * std::sqrt(sq_norm(bv)) +
                              sol.se_Z(t, x) * frobenius(sv);
            gaps.push_back(gap);
            habs.push_back(std::abs(h));
            ses.push_back(se);
            if (gap > rep.witness.gap || rep.n_samples == 0) {
                rep.witness.t = t;
                rep.witness.x.assign(x.begin(), x.end());
                rep.witness.u = u;
                rep.witness.u_star = mr.u_star;
                rep.witness.gap = gap;
            }
            ++rep.n_samples;
        }
    }

    if (gaps.empty()) throw ConfigError("minimality check: no samples requested");
    Vec sorted = gaps;
    std::sort(sorted.begin(), sorted.end());
    rep.sup_gap = sorted.back();
    rep.p99_gap = sorted[static_cast<std::size_t>(0.99 * (sorted.size() - 1))];
    double sum = 0.0;
    for (double g : gaps) sum += g;
    rep.mean_gap = sum / gaps.size();
    rep.h_scale = median_of(habs);
    rep.se_median = median_of(ses);
    const double base = opt.tol > 0.0 ? opt.tol : std::max(3.0 * rep.se_median, opt.tol_floor);
    rep.tol_effective = base * (1.0 + rep.h_scale);
    rep.pass = rep.sup_gap <= rep.tol_effective;
    if (not_converged > rep.n_samples / 20)
        rep.warnings.push_back("inner minimizer failed to converge on " +
                               std::to_string(not_converged) + " of " +
                               std::to_string(rep.n_samples) + " samples");
    return rep;
}

std::vector<TransversalityCurve> verify_transversality(
    const ControlledDiffusion& model, const ControlLaw& candidate,
    const std::vector<ControlLaw>& challengers, const BsdeSolution& sol, const Vec& horizons,
    const TransversalityOptions& opt) {
    if (horizons.empty()) throw ConfigError("transversality: no horizons requested");
    if (opt.adjoint_final_horizon <= 0.0)
        throw ConfigError("transversality: solved adjoint horizon must be positive");
    const double limit = opt.max_horizon_factor * opt.adjoint_final_horizon;
    for (double T : horizons) {
        if (T <= 0.0) throw ConfigError("transversality: horizons must be positive");
        if (T > limit + 1e-9)
            throw ConfigError("transversality: horizon " + fmt_double(T) +
                              " exceeds " + fmt_double(opt.max_horizon_factor) +
                              "x the solved adjoint range " +
                              fmt_double(opt.adjoint_final_horizon) +
                              "; refusing to extrapolate");
    }

    const int n = model.n, m = model.m;
    Vec x0 = opt.x0.empty() ? Vec(n, 0.0) : opt.x0;
    if (static_cast<int>(x0.size()) != n)
        throw ConfigError("transversality: x0 dimension mismatch");

    Vec hs = horizons;
    std::sort(hs.begin(), hs.end());
    const int nh = static_cast<int>(hs.size());
    const double dt = opt.dt;
    const double sqdt = std::sqrt(dt);
    const int total_steps = static_cast<int>(std::lround(hs.back() / dt));

    // Step index -> horizon slot, plus the map time and clamp box per horizon.
    std::vector<int> check_step(nh);
    Vec t_map(nh);
    std::vector<const SliceFit*> box(nh);
    for (int h = 0; h < nh; ++h) {
        check_step[h] = std::max(1, static_cast<int>(std::lround(hs[h] / dt)));
        double tm = 0.0;
        if (opt.period && *opt.period > 0.0) {
            tm = std::fmod(hs[h], *opt.period);
            if (tm > sol.eval_hi) tm = sol.eval_hi;
        }
        t_map[h] = tm;
        box[h] = &sol.slices[static_cast<std::size_t>(sol.grid.index_of(tm))];
    }

    const std::uint64_t skey = stream_key(opt.seed, opt.stream + "-transversality");
    const std::size_t np = static_cast<std::size_t>(opt.n_paths);
    const std::size_t nblocks = block_count(np);

    std::vector<TransversalityCurve> curves;
    curves.reserve(challengers.size());
    for (const ControlLaw& chal : challengers) {
        TransversalityCurve cv;
        cv.challenger = chal.name();
        cv.horizons = hs;
        cv.values.assign(nh, 0.0);
        cv.ci_half_width.assign(nh, 0.0);

        std::vector<Vec> psum(nblocks, Vec(nh, 0.0)), psum2(nblocks, Vec(nh, 0.0));
        std::vector<long> clamped(nblocks, 0);
        BlowupFlag flag;

        parallel_blocks(np, [&](std::size_t blk, std::size_t lo, std::size_t hi) {
            Vec xc(n), xu(n), uc(m), uu(m), bc(n), bu(n), sc(n * n), su(n * n), dw(n);
            for (std::size_t j = lo; j < hi; ++j) {
                const PathRng rng(skey, j);
                std::copy(x0.begin(), x0.end(), xc.begin());
                std::copy(x0.begin(), x0.end(), xu.begin());
                int next = 0;
                bool dead = false;
                for (int i = 0; i < total_steps && !dead; ++i) {
                    const double t = i * dt;
                    candidate.eval(t, xc, uc);
                    chal.eval(t, xu, uu);
                    model.b(t, xc, uc, bc);
                    model.b(t, xu, uu, bu);
                    model.sigma(t, xc, uc, sc);
                    model.sigma(t, xu, uu, su);
                    for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                    for (int d = 0; d < n; ++d) {
                        double xi = xc[d] + bc[d] * dt;
                        double yi = xu[d] + bu[d] * dt;
                        for (int c = 0; c < n; ++c) {
                            xi += sc[d * n + c] * dw[c];
                            yi += su[d * n + c] * dw[c];
                        }
                        xc[d] = xi;
                        xu[d] = yi;
                    }
                    if (sq_norm(xc) > kBlowupThreshold * kBlowupThreshold ||
                        sq_norm(xu) > kBlowupThreshold * kBlowupThreshold) {
                        flag.record(static_cast<long>(j), i);
                        dead = true;
                        break;
                    }
                    while (next < nh && check_step[next] == i + 1) {
                        const Vec y = sol.eval_Y(t_map[next], xc);
                        double prod = 0.0;
                        for (int d = 0; d < n; ++d) prod += y[d] * (xu[d] - xc[d]);
                        psum[blk][next] += prod;
                        psum2[blk][next] += prod * prod;
                        for (int d = 0; d < n; ++d)
                            if (xc[d] < box[next]->clamp_lo[d] || xc[d] > box[next]->clamp_hi[d]) {
                                ++clamped[blk];
                                break;
                            }
                        ++next;
                    }
                }
            }
        });

        cv.divergent = flag.hit.load();
        long clamp_total = 0;
        for (long c : clamped) clamp_total += c;
        Vec sum(nh, 0.0), sum2(nh, 0.0);
        for (std::size_t b = 0; b < nblocks; ++b)
            for (int h = 0; h < nh; ++h) {
                sum[h] += psum[b][h];
                sum2[h] += psum2[b][h];
            }
        const double npd = static_cast<double>(np);
        for (int h = 0; h < nh; ++h) {
            const double mean = sum[h] / npd;
            const double var = std::max(0.0, sum2[h] / npd - mean * mean);
            cv.values[h] = mean / hs[h];
            cv.ci_half_width[h] = 1.96 * std::sqrt(var / npd) / hs[h];
        }

        double max_abs = 0.0;
        for (double v : cv.values) max_abs = std::max(max_abs, std::abs(v));
        if (cv.divergent) {
            cv.decays = false;
            cv.note = "state blow-up before the largest horizon";
        } else if (max_abs <= 1e-14) {
            cv.decays = true;
            cv.note = "pairing vanishes identically (paths coincide under common noise)";
        } else {
            Vec lx, ly;
            for (int h = 0; h < nh; ++h)
                if (std::abs(cv.values[h]) > 0.0) {
                    lx.push_back(std::log(hs[h]));
                    ly.push_back(std::log(std::abs(cv.values[h])));
                }
            if (lx.size() < 2) {
                cv.decays = false;
                cv.note = "too few nonzero points to fit a decay rate";
            } else {
                const LineFit fit = fit_line(lx, ly);
                cv.exponent = fit.slope;
                cv.r2 = fit.r2;
                cv.decays = fit.slope <= opt.exponent_threshold;
                if (fit.slope > 0.5) {
                    cv.divergent = true;
                    cv.note = "pairing grows with the horizon";
                }
            }
        }
        const double clamp_frac = static_cast<double>(clamp_total) /
                                  (static_cast<double>(np) * nh);
        if (clamp_frac > 0.2) {
            if (!cv.note.empty()) cv.note += "; ";
            char buf[96];
            std::snprintf(buf, sizeof buf,
                          "adjoint map clamped on %.0f%% of evaluations", 100.0 * clamp_frac);
            cv.note += buf;
        }
        curves.push_back(std::move(cv));
    }
    return curves;
}

CostTable compare_costs(const ControlledDiffusion& model, const ControlLaw& candidate,
                        const std::vector<ControlLaw>& challengers, const CompareOptions& opt) {
    if (opt.burn_in >= opt.horizon)
        throw ConfigError("cost comparison: burn-in must be shorter than the horizon");
    if (opt.n_paths < 2) throw ConfigError("cost comparison: need at least two paths");
    const int n = model.n, m = model.m;
    Vec x0 = opt.x0.empty() ? Vec(n, 0.0) : opt.x0;
    if (static_cast<int>(x0.size()) != n)
        throw ConfigError("cost comparison: x0 dimension mismatch");

    std::vector<const ControlLaw*> laws{&candidate};
    for (const ControlLaw& c : challengers) laws.push_back(&c);
    const int nl = static_cast<int>(laws.size());

    const double dt = opt.dt;
    const double sqdt = std::sqrt(dt);
    const int steps = static_cast<int>(std::lround(opt.horizon / dt));
    const int i0 = static_cast<int>(std::lround(opt.burn_in / dt));

    const std::uint64_t skey = stream_key(opt.seed, opt.stream);
    const std::size_t np = static_cast<std::size_t>(opt.n_paths);
    const std::size_t nblocks = block_count(np);
    std::vector<Vec> sa(nblocks, Vec(nl, 0.0)), sa2(nblocks, Vec(nl, 0.0));
    std::vector<Vec> sg(nblocks, Vec(nl, 0.0)), sg2(nblocks, Vec(nl, 0.0));
    BlowupFlag flag;

    parallel_blocks(np, [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        std::vector<Vec> xs(nl, Vec(n));
        Vec u(m), bv(n), sv(n * n), dw(n), cost(nl);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            for (int l = 0; l < nl; ++l) std::copy(x0.begin(), x0.end(), xs[l].begin());
            std::fill(cost.begin(), cost.end(), 0.0);
            double tsum = 0.0;
            for (int i = 0; i < steps; ++i) {
                const double t = i * dt;
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                if (i >= i0) tsum += dt;
                for (int l = 0; l < nl; ++l) {
                    Vec& x = xs[l];
                    laws[l]->eval(t, x, u);
                    if (i >= i0) cost[l] += model.L(t, x, u) * dt;
                    model.b(t, x, u, bv);
                    model.sigma(t, x, u, sv);
                    for (int d = 0; d < n; ++d) {
                        double xi = x[d] + bv[d] * dt;
                        for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                        x[d] = xi;
                    }
                    if (sq_norm(x) > kBlowupThreshold * kBlowupThreshold)
                        flag.record(static_cast<long>(j), i);
                }
                if (flag.hit.load(std::memory_order_relaxed)) return;
            }
            for (int l = 0; l < nl; ++l) {
                const double a = cost[l] / tsum;
                const double g = a - cost[0] / tsum;
                sa[blk][l] += a;
                sa2[blk][l] += a * a;
                sg[blk][l] += g;
                sg2[blk][l] += g * g;
            }
        }
    });
    if (flag.hit.load())
        throw BlowupError("cost comparison: state norm exceeded 1e8 (divergence) at path " +
                          std::to_string(flag.path.load()) + ", step " +
                          std::to_string(flag.step.load()));

    Vec ma(nl, 0.0), va(nl, 0.0), mg(nl, 0.0), vg(nl, 0.0);
    for (std::size_t b = 0; b < nblocks; ++b)
        for (int l = 0; l < nl; ++l) {
            ma[l] += sa[b][l];
            va[l] += sa2[b][l];
            mg[l] += sg[b][l];
            vg[l] += sg2[b][l];
        }
    const double npd = static_cast<double>(np);
    CostTable table;
    table.horizon = opt.horizon;
    table.burn_in = opt.burn_in;
    table.dt = dt;
    table.n_paths = opt.n_paths;
    for (int l = 0; l < nl; ++l) {
        CostRow row;
        row.law_name = laws[l]->name();
        row.lambda_hat = ma[l] / npd;
        row.ci_half_width =
            1.96 * std::sqrt(std::max(0.0, va[l] / npd - row.lambda_hat * row.lambda_hat) / npd);
        row.gap_vs_candidate = mg[l] / npd;
        row.gap_ci = 1.96 * std::sqrt(
            std::max(0.0, vg[l] / npd - row.gap_vs_candidate * row.gap_vs_candidate) / npd);
        row.beats_candidate = l > 0 && row.gap_vs_candidate < -row.gap_ci;
        if (l == 0)
            table.candidate = row;
        else
            table.challengers.push_back(row);
    }
    return table;
}

std::string to_string(CertificateVerdict v) {
    switch (v) {
        case CertificateVerdict::certified: return "certified";
        case CertificateVerdict::violated: return "violated";
        default: return "inconclusive";
    }
}

SmpCertificate issue_certificate(const ConvexityProbe& convexity,
                                 const MinimalityReport& minimality,
                                 const std::vector<TransversalityCurve>& transversality,
                                 const CostTable& costs) {
    SmpCertificate cert;
    cert.convexity = convexity;
    cert.minimality = minimality;
    cert.transversality = transversality;
    cert.costs = costs;

    if (!convexity.convex) {
        cert.verdict = CertificateVerdict::inconclusive;
        cert.reason = "Hamiltonian is not jointly convex in (x, u): midpoint gap " +
                      fmt_double(convexity.min_gap) + "; optimality hypotheses unmet";
        return cert;
    }
    if (!minimality.pass) {
        cert.verdict = CertificateVerdict::violated;
        cert.reason = "Hamiltonian minimality fails: sup gap " + fmt_double(minimality.sup_gap) +
                      " exceeds tolerance " + fmt_double(minimality.tol_effective) +
                      " (witness at t=" + fmt_double(minimality.witness.t) + ")";
        return cert;
    }
    for (const CostRow& row : costs.challengers)
        if (row.gap_vs_candidate < -3.0 * row.gap_ci && row.gap_vs_candidate < 0.0) {
            cert.verdict = CertificateVerdict::violated;
            cert.reason = "challenger " + row.law_name + " improves the cost by " +
                          fmt_double(-row.gap_vs_candidate) + " (beyond three paired CIs)";
            return cert;
        }
    for (const TransversalityCurve& cv : transversality)
        if (cv.divergent || !cv.decays) {
            cert.verdict = CertificateVerdict::inconclusive;
            cert.reason = "transversality not established against " + cv.challenger +
                          (cv.note.empty() ? "" : " (" + cv.note + ")");
            return cert;
        }
    for (const CostRow& row : costs.challengers)
        if (row.beats_candidate) {
            cert.verdict = CertificateVerdict::inconclusive;
            cert.reason = "challenger " + row.law_name + " is ahead within noise";
            return cert;
        }
    cert.verdict = CertificateVerdict::certified;
    cert.reason = "Hamiltonian minimal along candidate paths, adjoint pairing decays for every "
                  "challenger, and no challenger improves the long-run cost";
    return cert;
}

}  // namespace ergolab
