#include "ergolab/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ergolab/rng.hpp"

namespace ergolab {

std::uint64_t ControlledDiffusion::fingerprint() const {
    std::ostringstream os;
    os << name << "|n=" << n << "|m=" << m;
    auto add = [&os](const char* tag, const std::optional<double>& v) {
        os << "|" << tag << "=" << (v ? fmt_double(*v) : std::string("-"));
    };
    add("k", decl.dissipativity_k);
    add("omega", decl.diffusion_growth_omega);
    add("slo", decl.sigma_lo);
    add("shi", decl.sigma_hi);
    add("b0", decl.drift_at_zero);
    add("C", decl.grad_cost_bound);
    add("period", decl.period);
    return fnv1a(os.str());
}

ControlLaw ControlLaw::constant(Vec u0, std::string name) {
    ControlLaw law;
    law.kind_ = Kind::constant;
    law.m_ = static_cast<int>(u0.size());
    law.u0_ = std::move(u0);
    law.name_ = std::move(name);
    return law;
}

ControlLaw ControlLaw::open_loop(std::function<void(double, std::span<double>)> u_of_t,
                                 int m, std::string name) {
    ControlLaw law;
    law.kind_ = Kind::open_loop;
    law.m_ = m;
    law.u_t_ = std::move(u_of_t);
    law.name_ = std::move(name);
    return law;
}

ControlLaw ControlLaw::feedback(
    std::function<void(double, std::span<const double>, std::span<double>)> u_of_tx,
    int m, std::string name) {
    ControlLaw law;
    law.kind_ = Kind::feedback;
    law.m_ = m;
    law.u_tx_ = std::move(u_of_tx);
    law.name_ = std::move(name);
    return law;
}

void ControlLaw::eval(double t, std::span<const double> x, std::span<double> out) const {
    switch (kind_) {
        case Kind::constant:
            std::copy(u0_.begin(), u0_.end(), out.begin());
            break;
        case Kind::open_loop:
            u_t_(t, out);
            break;
        case Kind::feedback:
            u_tx_(t, x, out);
            break;
    }
    if (bounds_) {
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = std::clamp(out[i], bounds_->first[i], bounds_->second[i]);
    }
}

void ControlLaw::set_bounds(Vec lo, Vec hi) { bounds_ = {std::move(lo), std::move(hi)}; }

SampleBox SampleBox::centered(int n, double radius) {
    SampleBox b;
    b.lo.assign(n, -radius);
    b.hi.assign(n, radius);
    return b;
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::holds: return "holds";
        case Verdict::fails: return "fails";
        default: return "inconclusive";
    }
}

namespace {

void sample_point(SeqRng& rng, const SampleBox& box, Vec& out) {
    out.resize(box.lo.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform(box.lo[i], box.hi[i]);
}

// Second point of a pair: x + r*d with log-uniform radius and a uniform
// direction, clipped into the box. Small radii probe local quotients, large
// radii global ones.
void sample_pair_point(SeqRng& rng, const SampleBox& box, const Vec& x, Vec& out) {
    const std::size_t n = x.size();
    double diam = 0.0;
    for (std::size_t i = 0; i < n; ++i) diam += (box.hi[i] - box.lo[i]) * (box.hi[i] - box.lo[i]);
    diam = std::sqrt(diam);
    const double r = std::exp(rng.uniform(std::log(1e-3), std::log(diam)));
    Vec d(n);
    double dn = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = rng.normal();
        dn += d[i] * d[i];
    }
    dn = std::sqrt(std::max(dn, 1e-300));
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::clamp(x[i] + r * d[i] / dn, box.lo[i], box.hi[i]);
}

SampleBox default_u_box(const ControlledDiffusion& model, const CheckOptions& opt) {
    return opt.u_box ? *opt.u_box : SampleBox::centered(model.m, 1.0);
}

}  // namespace

DissipativityResult check_dissipativity(const ControlledDiffusion& model,
                                        const SampleBox& x_box, const CheckOptions& opt) {
    DissipativityResult res;
    res.n_samples = opt.n_samples;
    res.seed = opt.seed;
    const int n = model.n;
    SeqRng rng(opt.seed, opt.stream);
    const SampleBox ubox = default_u_box(model, opt);

    Vec x, y, u, bx(n), by(n);
    double worst_pair = -1e300;   // largest <db, dx>/||dx||^2; k_hat = -worst
    double worst_grad = -1e300;   // largest eigenvalue of sym grad_x b
    for (int s = 0; s < opt.n_samples; ++s) {
        sample_point(rng, x_box, x);
        sample_pair_point(rng, x_box, x, y);
        sample_point(rng, ubox, u);
        const double t = opt.t_samples[s % opt.t_samples.size()];

        double dx2 = 0.0;
        for (int i = 0; i < n; ++i) dx2 += (x[i] - y[i]) * (x[i] - y[i]);
        if (dx2 > 1e-24) {
            model.b(t, x, u, bx);
            model.b(t, y, u, by);
            double num = 0.0;
            for (int i = 0; i < n; ++i) num += (bx[i] - by[i]) * (x[i] - y[i]);
            const double q = num / dx2;
            if (q > worst_pair) {
                worst_pair = q;
                res.witness_x = x;
                res.witness_y = y;
            }
        }

        GradientBundle g = model_gradients(model, t, x, u);
        Mat sym(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) sym(i, j) = 0.5 * (g.gx_b(i, j) + g.gx_b(j, i));
        const double lmax = sym_eigenvalues(std::move(sym)).back();
        worst_grad = std::max(worst_grad, lmax);
    }

    res.k_hat_pair = -worst_pair;
    res.k_hat_grad = -worst_grad;
    const double denom = std::max(std::abs(res.k_hat_pair), std::abs(res.k_hat_grad));
    res.agreement_rel = denom > 1e-12 ? std::abs(res.k_hat_pair - res.k_hat_grad) / denom : 0.0;
    const double k_hat = std::min(res.k_hat_pair, res.k_hat_grad);
    if (k_hat > 0.0) {
        res.verdict = Verdict::holds;
        if (res.agreement_rel > 0.10)
            res.warnings.push_back("pairwise and gradient dissipativity rates disagree by more than 10%");
    } else if (std::max(res.k_hat_pair, res.k_hat_grad) <= 0.0) {
        res.verdict = Verdict::fails;
    } else {
        res.verdict = Verdict::inconclusive;
        res.warnings.push_back("dissipativity forms disagree in sign");
    }
    if (model.decl.dissipativity_k && res.verdict == Verdict::holds &&
        k_hat < 0.9 * *model.decl.dissipativity_k)
        res.warnings.push_back("empirical rate below declared k");
    return res;
}

EllipticityResult check_ellipticity(const ControlledDiffusion& model,
                                    const SampleBox& x_box, const CheckOptions& opt) {
    EllipticityResult res;
    res.n_samples = opt.n_samples;
    res.seed = opt.seed;
    const int n = model.n;
    SeqRng rng(opt.seed, opt.stream);
    const SampleBox ubox = default_u_box(model, opt);

    res.sigma_min_hat = 1e300;
    res.sum_lo = 1e300;
    Vec x, u, sig(n * n);
    bool degenerate = false;
    for (int s = 0; s < opt.n_samples; ++s) {
        sample_point(rng, x_box, x);
        sample_point(rng, ubox, u);
        const double t = opt.t_samples[s % opt.t_samples.size()];
        model.sigma(t, x, u, sig);
        Mat S(n, n);
        S.a = sig;
        const double hi = spectral_norm(S);
        const double lo = min_singular_value(S);
        res.sigma_norm_max = std::max(res.sigma_norm_max, hi);
        res.sigma_min_hat = std::min(res.sigma_min_hat, lo);
        const double cond = lo > 1e-300 ? hi / lo : 1e300;
        if (cond > res.cond_max) {
            res.cond_max = cond;
            res.witness_x = x;
        }
        if (lo <= 0.0 || cond > 1e12) degenerate = true;
        const double sum = lo > 1e-300 ? hi + 1.0 / lo : 1e300;
        res.sum_lo = std::min(res.sum_lo, sum);
        res.sum_hi = std::max(res.sum_hi, sum);
    }
    res.verdict = degenerate ? Verdict::fails : Verdict::holds;
    if (degenerate) res.warnings.push_back("sigma (near-)singular at a sampled point");
    if (model.decl.sigma_lo && res.sigma_min_hat < 0.99 * *model.decl.sigma_lo)
        res.warnings.push_back("smallest singular value below declared sigma_lo");
    return res;
}

GrowthLipschitzResult check_growth_lipschitz(const ControlledDiffusion& model,
                                             const SampleBox& x_box, const CheckOptions& opt) {
    GrowthLipschitzResult res;
    res.n_samples = opt.n_samples;
    res.seed = opt.seed;
    const int n = model.n;
    SeqRng rng(opt.seed, opt.stream);
    const SampleBox ubox = default_u_box(model, opt);

    Vec x, y, u, bx(n), by(n), sx(n * n), sy(n * n), zero(n, 0.0);
    for (int s = 0; s < opt.n_samples; ++s) {
        sample_point(rng, x_box, x);
        sample_pair_point(rng, x_box, x, y);
        sample_point(rng, ubox, u);
        const double t = opt.t_samples[s % opt.t_samples.size()];

        model.b(t, zero, u, bx);
        res.c_tilde_hat = std::max(res.c_tilde_hat, norm2(bx));

        model.b(t, x, u, bx);
        model.sigma(t, x, u, sx);
        res.linear_growth_hat =
            std::max(res.linear_growth_hat, (norm2(bx) + norm2(sx)) / (1.0 + norm2(x)));

        double dx = 0.0;
        for (int i = 0; i < n; ++i) dx += (x[i] - y[i]) * (x[i] - y[i]);
        dx = std::sqrt(dx);
        if (dx > 1e-12) {
            model.b(t, y, u, by);
            model.sigma(t, y, u, sy);
            double db = 0.0, ds = 0.0;
            for (int i = 0; i < n; ++i) db += (bx[i] - by[i]) * (bx[i] - by[i]);
            for (int i = 0; i < n * n; ++i) ds += (sx[i] - sy[i]) * (sx[i] - sy[i]);
            res.lipschitz_hat =
                std::max(res.lipschitz_hat, (std::sqrt(db) + std::sqrt(ds)) / dx);
        }

        GradientBundle g = model_gradients(model, t, x, u);
        res.grad_cost_hat = std::max(res.grad_cost_hat, norm2(g.gx_L));
        double zs = 0.0;
        for (const Mat& gs : g.gx_sigma) zs += frob_norm(gs.a) * frob_norm(gs.a);
        res.z_lipschitz_hat = std::max(res.z_lipschitz_hat, std::sqrt(zs));
    }
    res.verdict = Verdict::holds;
    if (model.decl.drift_at_zero && res.c_tilde_hat > *model.decl.drift_at_zero * 1.01) {
        res.warnings.push_back("||b(t,0,u)|| exceeds declared bound");
        res.verdict = Verdict::inconclusive;
    }
    if (model.decl.grad_cost_bound && res.grad_cost_hat > *model.decl.grad_cost_bound * 1.01) {
        res.warnings.push_back("||grad_x L|| exceeds declared bound");
        res.verdict = Verdict::inconclusive;
    }
    return res;
}

AssumptionReport run_assumption_checks(const ControlledDiffusion& model,
                                       const SampleBox& x_box, const CheckOptions& opt) {
    AssumptionReport rep;
    rep.model_name = model.name;
    rep.model_fingerprint = model.fingerprint();
    rep.dissipativity = check_dissipativity(model, x_box, opt);
    rep.ellipticity = check_ellipticity(model, x_box, opt);
    rep.growth = check_growth_lipschitz(model, x_box, opt);
    rep.all_hold = rep.dissipativity.verdict == Verdict::holds &&
                   rep.ellipticity.verdict == Verdict::holds &&
                   rep.growth.verdict == Verdict::holds;
    return rep;
}

namespace {

// One centered-difference column for a vector-valued coefficient.
void fd_column(const DriftFn& f, double t, Vec base, std::span<const double> other,
               bool wiggle_first, std::size_t axis, std::size_t out_len, Vec& col) {
    const double h = 1e-5 * (1.0 + std::abs(base[axis]));
    Vec lo(out_len), hi(out_len);
    base[axis] += h;
    if (wiggle_first) f(t, base, other, hi);
    else f(t, other, base, hi);
    base[axis] -= 2.0 * h;
    if (wiggle_first) f(t, base, other, lo);
    else f(t, other, base, lo);
    base[axis] += h;
    col.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) col[i] = (hi[i] - lo[i]) / (2.0 * h);
}

double fd_scalar(const CostFn& f, double t, Vec base, std::span<const double> other,
                 bool wiggle_first, std::size_t axis) {
    const double h = 1e-5 * (1.0 + std::abs(base[axis]));
    base[axis] += h;
    const double hi = wiggle_first ? f(t, base, other) : f(t, other, base);
    base[axis] -= 2.0 * h;
    const double lo = wiggle_first ? f(t, base, other) : f(t, other, base);
    return (hi - lo) / (2.0 * h);
}

}  // namespace

GradientBundle finite_difference_gradients(const ControlledDiffusion& model, double t,
                                           std::span<const double> x, std::span<const double> u) {
    const int n = model.n, m = model.m;
    GradientBundle g;
    g.gx_b = Mat(n, n);
    g.gu_b = Mat(n, m);
    g.gx_sigma.assign(n, Mat(n, n));
    g.gu_sigma.assign(m, Mat(n, n));
    g.gx_L.resize(n);
    g.gu_L.resize(m);
    Vec xv(x.begin(), x.end()), uv(u.begin(), u.end()), col;
    for (int k = 0; k < n; ++k) {
        fd_column(model.b, t, xv, uv, true, k, n, col);
        for (int i = 0; i < n; ++i) g.gx_b(i, k) = col[i];
        fd_column(model.sigma, t, xv, uv, true, k, n * n, col);
        g.gx_sigma[k].a = col;
        g.gx_L[k] = fd_scalar(model.L, t, xv, uv, true, k);
    }
    for (int k = 0; k < m; ++k) {
        fd_column(model.b, t, uv, xv, false, k, n, col);
        for (int i = 0; i < n; ++i) g.gu_b(i, k) = col[i];
        fd_column(model.sigma, t, uv, xv, false, k, n * n, col);
        g.gu_sigma[k].a = col;
        g.gu_L[k] = fd_scalar(model.L, t, uv, xv, false, k);
    }
    return g;
}

GradientBundle model_gradients(const ControlledDiffusion& model, double t,
                               std::span<const double> x, std::span<const double> u) {
    if (!model.has_analytic_gradients()) return finite_difference_gradients(model, t, x, u);
    const int n = model.n, m = model.m;
    GradientBundle g;
    Vec buf(n * n);
    g.gx_b = Mat(n, n);
    model.grads.grad_x_b(t, x, u, std::span<double>(g.gx_b.a));
    g.gu_b = Mat(n, m);
    model.grads.grad_u_b(t, x, u, std::span<double>(g.gu_b.a));
    Vec big(n * n * n);
    model.grads.grad_x_sigma(t, x, u, big);
    g.gx_sigma.assign(n, Mat(n, n));
    for (int k = 0; k < n; ++k)
        std::copy(big.begin() + k * n * n, big.begin() + (k + 1) * n * n, g.gx_sigma[k].a.begin());
    big.resize(m * n * n);
    model.grads.grad_u_sigma(t, x, u, big);
    g.gu_sigma.assign(m, Mat(n, n));
    for (int k = 0; k < m; ++k)
        std::copy(big.begin() + k * n * n, big.begin() + (k + 1) * n * n, g.gu_sigma[k].a.begin());
    g.gx_L.resize(n);
    model.grads.grad_x_L(t, x, u, g.gx_L);
    g.gu_L.resize(m);
    model.grads.grad_u_L(t, x, u, g.gu_L);
    return g;
}

double validate_gradients(const ControlledDiffusion& model, const SampleBox& x_box,
                          int n_samples, std::uint64_t seed) {
    if (!model.has_analytic_gradients()) return 0.0;
    SeqRng rng(seed, "model-check");
    SampleBox ubox = SampleBox::centered(model.m, 1.0);
    double worst = 0.0;
    Vec x, u;
    auto rel = [](double a, double b) {
        const double d = std::max({std::abs(a), std::abs(b), 1.0});
        return std::abs(a - b) / d;
    };
    for (int s = 0; s < n_samples; ++s) {
        sample_point(rng, x_box, x);
        sample_point(rng, ubox, u);
        GradientBundle ga = model_gradients(model, 0.0, x, u);
        GradientBundle gf = finite_difference_gradients(model, 0.0, x, u);
        for (int i = 0; i < model.n; ++i)
            for (int j = 0; j < model.n; ++j) worst = std::max(worst, rel(ga.gx_b(i, j), gf.gx_b(i, j)));
        for (int i = 0; i < model.n; ++i)
            for (int j = 0; j < model.m; ++j) worst = std::max(worst, rel(ga.gu_b(i, j), gf.gu_b(i, j)));
        for (int k = 0; k < model.n; ++k)
            for (int i = 0; i < model.n * model.n; ++i)
                worst = std::max(worst, rel(ga.gx_sigma[k].a[i], gf.gx_sigma[k].a[i]));
        for (int k = 0; k < model.m; ++k)
            for (int i = 0; i < model.n * model.n; ++i)
                worst = std::max(worst, rel(ga.gu_sigma[k].a[i], gf.gu_sigma[k].a[i]));
        for (int i = 0; i < model.n; ++i) worst = std::max(worst, rel(ga.gx_L[i], gf.gx_L[i]));
        for (int i = 0; i < model.m; ++i) worst = std::max(worst, rel(ga.gu_L[i], gf.gu_L[i]));
    }
    return worst;
}

}  // namespace ergolab
