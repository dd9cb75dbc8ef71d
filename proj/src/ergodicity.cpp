#include "ergolab/ergodicity.hpp"

#include <algorithm>
#include <cmath>

#include "ergolab/parallel.hpp"
#include "ergolab/rng.hpp"

namespace ergolab {

namespace {

struct MeanAccumulator {
    std::vector<double> s1, s2;
    explicit MeanAccumulator(std::size_t nblocks) : s1(nblocks, 0.0), s2(nblocks, 0.0) {}
    GradientEstimate finish(int n_paths, double t) const {
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < s1.size(); ++i) {
            a += s1[i];
            b += s2[i];
        }
        GradientEstimate g;
        g.n_paths = n_paths;
        g.t = t;
        g.estimate = a / n_paths;
        const double var = std::max(0.0, b / n_paths - g.estimate * g.estimate);
        g.ci_half_width = 1.96 * std::sqrt(var / n_paths);
        return g;
    }
};

}  // namespace

GradientEstimate pt_gradient_weight(const ControlledDiffusion& model, const ControlLaw& law,
                                    const Vec& x, const Vec& h, const TestFunction& psi,
                                    double t, double dt, int n_paths, std::uint64_t seed,
                                    const std::string& stream, bool use_fd) {
    if (!use_fd && !model.has_analytic_gradients())
        throw EvalError("pt_gradient_weight: no analytic gradients; pass use_fd=true for the "
                        "finite-difference fallback");
    const int n = model.n, m = model.m;
    const int steps = static_cast<int>(std::lround(t / dt));
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(dt);
    MeanAccumulator acc(block_count(static_cast<std::size_t>(n_paths)));

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec xs(n), v(n), vnext(n), u(m), bv(n), sv(n * n), dw(n), siginv_v(n);
        Mat sig(n, n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x.begin(), x.end(), xs.begin());
            std::copy(h.begin(), h.end(), v.begin());
            double weight = 0.0;
            for (int i = 0; i < steps; ++i) {
                const double tt = i * dt;
                law.eval(tt, xs, u);
                model.b(tt, xs, u, bv);
                model.sigma(tt, xs, u, sv);
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);

                // Martingale weight increment (sigma^{-1} V)^T dW.
                if (n == 1) {
                    siginv_v[0] = v[0] / sv[0];
                } else {
                    sig.a = sv;
                    Vec rhs(v);
                    siginv_v = solve_lu(sig, std::move(rhs));
                }
                for (int d = 0; d < n; ++d) weight += siginv_v[d] * dw[d];

                const GradientBundle g = model_gradients(model, tt, xs, u);
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
                    vnext[r] = v[r] + drift * dt + diff;
                }
                for (int d = 0; d < n; ++d) {
                    double xi = xs[d] + bv[d] * dt;
                    for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                    xs[d] = xi;
                }
                std::swap(v, vnext);
            }
            const double val = psi(xs) * weight / t;
            acc.s1[blk] += val;
            acc.s2[blk] += val * val;
        }
    });
    return acc.finish(n_paths, t);
}

GradientEstimate pt_gradient_fd(const ControlledDiffusion& model, const ControlLaw& law,
                                const Vec& x, const Vec& h, const TestFunction& psi,
                                double t, double dt, int n_paths, double eps,
                                std::uint64_t seed, const std::string& stream) {
    const int n = model.n, m = model.m;
    const int steps = static_cast<int>(std::lround(t / dt));
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(dt);
    MeanAccumulator acc(block_count(static_cast<std::size_t>(n_paths)));

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec xp(n), xm(n), u(m), bv(n), sv(n * n), dw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            for (int d = 0; d < n; ++d) {
                xp[d] = x[d] + eps * h[d];
                xm[d] = x[d] - eps * h[d];
            }
            for (int i = 0; i < steps; ++i) {
                const double tt = i * dt;
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                for (Vec* chain : {&xp, &xm}) {
                    Vec& xs = *chain;
                    law.eval(tt, xs, u);
                    model.b(tt, xs, u, bv);
                    model.sigma(tt, xs, u, sv);
                    for (int d = 0; d < n; ++d) {
                        double xi = xs[d] + bv[d] * dt;
                        for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                        xs[d] = xi;
                    }
                }
            }
            const double val = (psi(xp) - psi(xm)) / (2.0 * eps);
            acc.s1[blk] += val;
            acc.s2[blk] += val * val;
        }
    });
    return acc.finish(n_paths, t);
}

GradientEstimate pt_value(const ControlledDiffusion& model, const ControlLaw& law,
                          const Vec& x, const TestFunction& psi, double t, double dt,
                          int n_paths, std::uint64_t seed, const std::string& stream) {
    const int n = model.n, m = model.m;
    const int steps = static_cast<int>(std::lround(t / dt));
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(dt);
    MeanAccumulator acc(block_count(static_cast<std::size_t>(n_paths)));

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec xs(n), u(m), bv(n), sv(n * n), dw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x.begin(), x.end(), xs.begin());
            for (int i = 0; i < steps; ++i) {
                const double tt = i * dt;
                law.eval(tt, xs, u);
                model.b(tt, xs, u, bv);
                model.sigma(tt, xs, u, sv);
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                for (int d = 0; d < n; ++d) {
                    double xi = xs[d] + bv[d] * dt;
                    for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                    xs[d] = xi;
                }
            }
            const double val = psi(xs);
            acc.s1[blk] += val;
            acc.s2[blk] += val * val;
        }
    });
    return acc.finish(n_paths, t);
}

double feller_gradient_bound(double k, double omega, double sigma_lo, double t) {
    if (t <= 0.0 || sigma_lo <= 0.0) throw EvalError("feller_gradient_bound: need t > 0, sigma_lo > 0");
    const double d = omega - k;
    double integral;
    if (std::abs(d) < 1e-12) integral = t;
    else integral = (std::exp(d * t) - 1.0) / d;
    return std::sqrt(integral) / (sigma_lo * t);
}

HitProbability irreducibility_probe(const ControlledDiffusion& model, const ControlLaw& law,
                                    const Vec& x0, const Vec& center, double radius, double t,
                                    double dt, int n_paths, std::uint64_t seed,
                                    const std::string& stream) {
    const int n = model.n, m = model.m;
    const int steps = static_cast<int>(std::lround(t / dt));
    const std::uint64_t skey = stream_key(seed, stream);
    const double sqdt = std::sqrt(dt);
    const std::size_t nblocks = block_count(static_cast<std::size_t>(n_paths));
    std::vector<long> hits(nblocks, 0);

    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec xs(n), u(m), bv(n), sv(n * n), dw(n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x0.begin(), x0.end(), xs.begin());
            for (int i = 0; i < steps; ++i) {
                const double tt = i * dt;
                law.eval(tt, xs, u);
                model.b(tt, xs, u, bv);
                model.sigma(tt, xs, u, sv);
                for (int d = 0; d < n; ++d) dw[d] = sqdt * rng.normal_at(i, d, n);
                for (int d = 0; d < n; ++d) {
                    double xi = xs[d] + bv[d] * dt;
                    for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dw[c];
                    xs[d] = xi;
                }
            }
            double r2 = 0.0;
            for (int d = 0; d < n; ++d) r2 += (xs[d] - center[d]) * (xs[d] - center[d]);
            if (r2 <= radius * radius) ++hits[blk];
        }
    });
    long total = 0;
    for (long hcount : hits) total += hcount;

    HitProbability hp;
    hp.n_paths = n_paths;
    hp.p_hat = static_cast<double>(total) / n_paths;
    const double z = 1.96, nn = n_paths, ph = hp.p_hat;
    const double denom = 1.0 + z * z / nn;
    const double centerw = (ph + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / denom;
    hp.ci_lo = std::max(0.0, centerw - half);
    hp.ci_hi = std::min(1.0, centerw + half);
    hp.positive = hp.ci_lo > 0.0;
    if (total == 0) {
        hp.detection_bound = 3.0 / nn;
        hp.note = "no hits observed; hit probability below detection bound";
    }
    return hp;
}

namespace {

// Stationary-proxy radius: simulate a short pilot ensemble from the pair
// midpoint for 4/k and take the 90th percentile of the final ||X||.
double calibrate_ball_radius(const ControlledDiffusion& model, const ControlLaw& law,
                             const Vec& x, const Vec& y, double k, double dt,
                             std::uint64_t seed, const std::string& stream) {
    const int n = model.n;
    Vec mid(n);
    for (int d = 0; d < n; ++d) mid[d] = 0.5 * (x[d] + y[d]);
    TimeGrid grid{0.0, dt, static_cast<int>(std::lround(4.0 / k / dt))};
    SimulateOptions so;
    so.stream = stream + "-pilot";
    so.store_increments = false;
    so.store_controls = false;
    PathEnsemble pilot = simulate_forward(model, law, grid, 2000, mid, seed, so);
    Vec norms(pilot.n_paths);
    for (int j = 0; j < pilot.n_paths; ++j)
        norms[j] = norm2(pilot.state_at(grid.n_steps, j));
    const int q = static_cast<int>(0.9 * (pilot.n_paths - 1));
    std::nth_element(norms.begin(), norms.begin() + q, norms.end());
    return norms[q];
}

// Density of N(mean, cov) with cov = L L^T already factored.
double gauss_log_density(const Vec& z, const Vec& mean, const Mat& chol_l) {
    const std::size_t n = z.size();
    // Solve L w = z - mean.
    Vec w(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = z[i] - mean[i];
        for (std::size_t k = 0; k < i; ++k) s -= chol_l(i, k) * w[k];
        w[i] = s / chol_l(i, i);
    }
    double quad = 0.0, logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        quad += w[i] * w[i];
        logdet += std::log(chol_l(i, i));
    }
    return -0.5 * quad - logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TvFit coupling_tv(const ControlledDiffusion& model, const ControlLaw& law,
                  const Vec& x, const Vec& y, const CouplingOptions& opt) {
    const int n = model.n, m = model.m;
    TvFit fit;
    fit.n_pairs = opt.n_pairs;
    const double epoch = opt.epoch > 0.0 ? opt.epoch : 2.0 / opt.k;
    fit.epoch = epoch;
    const double R = opt.ball_radius > 0.0
                         ? opt.ball_radius
                         : calibrate_ball_radius(model, law, x, y, opt.k, opt.dt, opt.seed, opt.stream);
    fit.ball_radius = R;
    const int steps_per_epoch = static_cast<int>(std::lround(epoch / opt.dt));
    const std::uint64_t skey = stream_key(opt.seed, opt.stream);
    const double sqdt = std::sqrt(opt.dt);

    const std::size_t nblocks = block_count(static_cast<std::size_t>(opt.n_pairs));
    std::vector<std::vector<long>> uncoupled(nblocks, std::vector<long>(opt.max_epochs, 0));

    parallel_blocks(static_cast<std::size_t>(opt.n_pairs), [&](std::size_t blk, std::size_t lo, std::size_t hi) {
        Vec a(n), bstate(n), u(m), bv(n), sv(n * n), dwa(n), dwb(n), mean_a(n), mean_b(n);
        Mat sig_a(n, n), sig_b(n, n), chol_a(n, n), chol_b(n, n);
        for (std::size_t j = lo; j < hi; ++j) {
            const PathRng rng(skey, j);
            std::copy(x.begin(), x.end(), a.begin());
            std::copy(y.begin(), y.end(), bstate.begin());
            bool coupled = false;
            std::uint64_t step_ctr = 0;
            std::uint64_t aux_ctr = 0;  // acceptance draws, disjoint counter region
            for (int ep = 0; ep < opt.max_epochs; ++ep) {
                const bool attempt = !coupled && norm2(a) <= R && norm2(bstate) <= R;
                if (coupled) {
                    // Move together: advance one chain, mirror the state.
                    for (int i = 0; i < steps_per_epoch; ++i, ++step_ctr) {
                        const double tt = (ep * steps_per_epoch + i) * opt.dt;
                        law.eval(tt, a, u);
                        model.b(tt, a, u, bv);
                        model.sigma(tt, a, u, sv);
                        for (int d = 0; d < n; ++d) dwa[d] = sqdt * rng.normal_at(step_ctr, d, 2 * n);
                        for (int d = 0; d < n; ++d) {
                            double xi = a[d] + bv[d] * opt.dt;
                            for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dwa[c];
                            a[d] = xi;
                        }
                    }
                    std::copy(a.begin(), a.end(), bstate.begin());
                } else if (attempt && n == 1) {
                    // Reflection coupling: mirrored increments until the
                    // difference changes sign, then merge at that grid point.
                    for (int i = 0; i < steps_per_epoch; ++i, ++step_ctr) {
                        const double tt = (ep * steps_per_epoch + i) * opt.dt;
                        const double diff_before = a[0] - bstate[0];
                        dwa[0] = sqdt * rng.normal_at(step_ctr, 0, 2 * n);
                        law.eval(tt, a, u);
                        model.b(tt, a, u, bv);
                        model.sigma(tt, a, u, sv);
                        a[0] += bv[0] * opt.dt + sv[0] * dwa[0];
                        law.eval(tt, bstate, u);
                        model.b(tt, bstate, u, bv);
                        model.sigma(tt, bstate, u, sv);
                        bstate[0] += bv[0] * opt.dt - sv[0] * dwa[0];
                        if (!coupled) {
                            const double diff_after = a[0] - bstate[0];
                            if (diff_after == 0.0 || (diff_before > 0) != (diff_after > 0)) {
                                coupled = true;
                                bstate[0] = a[0];
                            }
                        } else {
                            bstate[0] = a[0];
                        }
                    }
                } else if (attempt) {
                    // Maximal coupling of the half-epoch Euler kernels, then a
                    // shared-noise fine leg for the rest of the epoch.
                    const double tau = 0.5 * epoch;
                    const double t0 = ep * epoch;
                    law.eval(t0, a, u);
                    model.b(t0, a, u, bv);
                    model.sigma(t0, a, u, sv);
                    sig_a.a = sv;
                    for (int d = 0; d < n; ++d) mean_a[d] = a[d] + bv[d] * tau;
                    law.eval(t0, bstate, u);
                    model.b(t0, bstate, u, bv);
                    model.sigma(t0, bstate, u, sv);
                    sig_b.a = sv;
                    for (int d = 0; d < n; ++d) mean_b[d] = bstate[d] + bv[d] * tau;
                    // Cholesky of tau * sigma sigma^T for both kernels.
                    auto chol_of = [&](const Mat& s, Mat& out) {
                        Mat cov(n, n);
                        for (int r = 0; r < n; ++r)
                            for (int c = 0; c < n; ++c) {
                                double v = 0.0;
                                for (int kk = 0; kk < n; ++kk) v += s(r, kk) * s(c, kk);
                                cov(r, c) = tau * v;
                            }
                        out = Mat(n, n);
                        for (int r = 0; r < n; ++r)
                            for (int c = 0; c <= r; ++c) {
                                double s2 = cov(r, c);
                                for (int kk = 0; kk < c; ++kk) s2 -= out(r, kk) * out(c, kk);
                                if (r == c) out(r, r) = std::sqrt(std::max(s2, 1e-300));
                                else out(r, c) = s2 / out(c, c);
                            }
                    };
                    chol_of(sig_a, chol_a);
                    chol_of(sig_b, chol_b);
                    // Draw Za ~ p; accept as the common value with
                    // probability min(1, q/p); otherwise rejection-sample the
                    // residual of q.
                    Vec za(n), zb(n);
                    auto draw = [&](const Vec& mean, const Mat& chol, Vec& out2) {
                        for (int d = 0; d < n; ++d) dwa[d] = rng.normal_at(step_ctr, d, 2 * n);
                        ++step_ctr;
                        for (int r = 0; r < n; ++r) {
                            double s3 = mean[r];
                            for (int c = 0; c <= r; ++c) s3 += chol(r, c) * dwa[c];
                            out2[r] = s3;
                        }
                    };
                    draw(mean_a, chol_a, za);
                    const double logp = gauss_log_density(za, mean_a, chol_a);
                    const double logq = gauss_log_density(za, mean_b, chol_b);
                    const double uacc = rng.uniform_at((1ull << 61) + aux_ctr++);
                    if (std::log(uacc) <= logq - logp) {
                        coupled = true;
                        std::copy(za.begin(), za.end(), zb.begin());
                    } else {
                        // Residual of q: resample until the density ratio rejects.
                        for (int tries = 0; tries < 64; ++tries) {
                            draw(mean_b, chol_b, zb);
                            const double lq = gauss_log_density(zb, mean_b, chol_b);
                            const double lp = gauss_log_density(zb, mean_a, chol_a);
                            const double u2 = rng.uniform_at((1ull << 61) + aux_ctr++);
                            if (std::log(u2) > lp - lq) break;
                        }
                    }
                    std::copy(za.begin(), za.end(), a.begin());
                    std::copy(zb.begin(), zb.end(), bstate.begin());
                    if (coupled) std::copy(a.begin(), a.end(), bstate.begin());
                    // Fine shared-noise leg over the second half epoch.
                    const int rest = steps_per_epoch / 2;
                    for (int i = 0; i < rest; ++i, ++step_ctr) {
                        const double tt = t0 + tau + i * opt.dt;
                        for (int d = 0; d < n; ++d) dwa[d] = sqdt * rng.normal_at(step_ctr, d, 2 * n);
                        for (Vec* chain : {&a, &bstate}) {
                            Vec& xs = *chain;
                            law.eval(tt, xs, u);
                            model.b(tt, xs, u, bv);
                            model.sigma(tt, xs, u, sv);
                            for (int d = 0; d < n; ++d) {
                                double xi = xs[d] + bv[d] * opt.dt;
                                for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dwa[c];
                                xs[d] = xi;
                            }
                        }
                        if (coupled) std::copy(a.begin(), a.end(), bstate.begin());
                    }
                } else {
                    // Independent phase: separate increments per chain.
                    for (int i = 0; i < steps_per_epoch; ++i, ++step_ctr) {
                        const double tt = (ep * steps_per_epoch + i) * opt.dt;
                        for (int d = 0; d < n; ++d) {
                            dwa[d] = sqdt * rng.normal_at(step_ctr, d, 2 * n);
                            dwb[d] = sqdt * rng.normal_at(step_ctr, n + d, 2 * n);
                        }
                        law.eval(tt, a, u);
                        model.b(tt, a, u, bv);
                        model.sigma(tt, a, u, sv);
                        for (int d = 0; d < n; ++d) {
                            double xi = a[d] + bv[d] * opt.dt;
                            for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dwa[c];
                            a[d] = xi;
                        }
                        law.eval(tt, bstate, u);
                        model.b(tt, bstate, u, bv);
                        model.sigma(tt, bstate, u, sv);
                        for (int d = 0; d < n; ++d) {
                            double xi = bstate[d] + bv[d] * opt.dt;
                            for (int c = 0; c < n; ++c) xi += sv[d * n + c] * dwb[c];
                            bstate[d] = xi;
                        }
                    }
                }
                if (!coupled) ++uncoupled[blk][ep];
            }
        }
    });

    fit.times.resize(opt.max_epochs);
    fit.tv_hat.resize(opt.max_epochs);
    for (int ep = 0; ep < opt.max_epochs; ++ep) {
        long cnt = 0;
        for (std::size_t blkid = 0; blkid < nblocks; ++blkid) cnt += uncoupled[blkid][ep];
        fit.times[ep] = (ep + 1) * epoch;
        fit.tv_hat[ep] = static_cast<double>(cnt) / opt.n_pairs;
    }

    if (fit.tv_hat.back() > 0.95) {
        fit.inconclusive = true;
        fit.note = "chains almost never coupled; no total-variation decay observed";
        return fit;
    }
    // Coupling probability must keep improving; a stalled tail means the chains
    // drift apart as often as they meet and the rate fit would be meaningless.
    const double tv_mid = fit.tv_hat[static_cast<std::size_t>(opt.max_epochs / 2)];
    if (tv_mid > 0.0 && fit.tv_hat.back() >= 0.9 * tv_mid) {
        fit.inconclusive = true;
        fit.note = "total-variation decay stalls (no geometric coupling)";
        return fit;
    }
    Vec ft, fy;
    for (int ep = opt.fit_from_epoch - 1; ep < opt.max_epochs; ++ep)
        if (fit.tv_hat[ep] > 0.0) {
            ft.push_back(fit.times[ep]);
            fy.push_back(std::log(fit.tv_hat[ep]));
        }
    if (ft.size() < 2) {
        fit.inconclusive = true;
        fit.note = "all pairs coupled too fast to fit a decay rate";
        return fit;
    }
    const LineFit lf = fit_line(ft, fy);
    fit.rho_hat = -lf.slope;
    fit.c_hat = std::exp(lf.intercept);
    fit.r2 = lf.r2;
    if (fit.rho_hat <= 0.0) {
        fit.inconclusive = true;
        fit.note = "fitted rate is not positive";
    }
    return fit;
}

}  // namespace ergolab
