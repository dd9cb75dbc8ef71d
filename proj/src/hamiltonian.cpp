#include "ergolab/hamiltonian.hpp"

#include <algorithm>
#include <cmath>

#include "ergolab/rng.hpp"

namespace ergolab {

double eval_H(const ControlledDiffusion& model, double t, std::span<const double> x,
              std::span<const double> u, std::span<const double> y, const Mat& z) {
    const int n = model.n;
    Vec bv(n), sv(n * n);
    model.b(t, x, u, bv);
    model.sigma(t, x, u, sv);
    return dot(bv, y) + frob_dot(sv, z.a) + model.L(t, x, u);
}

Vec grad_H_x(const GradientBundle& g, std::span<const double> y, const Mat& z) {
    const std::size_t n = g.gx_L.size();
    Vec out(n);
    for (std::size_t k = 0; k < n; ++k) {
        double s = g.gx_L[k];
        for (std::size_t i = 0; i < n; ++i) s += g.gx_b(i, k) * y[i];
        s += frob_dot(g.gx_sigma[k].a, z.a);
        out[k] = s;
    }
    return out;
}

Vec grad_H_x(const ControlledDiffusion& model, double t, std::span<const double> x,
             std::span<const double> u, std::span<const double> y, const Mat& z) {
    return grad_H_x(model_gradients(model, t, x, u), y, z);
}

Vec grad_H_u(const GradientBundle& g, std::span<const double> y, const Mat& z) {
    const std::size_t m = g.gu_L.size();
    const std::size_t n = g.gx_L.size();
    Vec out(m);
    for (std::size_t k = 0; k < m; ++k) {
        double s = g.gu_L[k];
        for (std::size_t i = 0; i < n; ++i) s += g.gu_b(i, k) * y[i];
        s += frob_dot(g.gu_sigma[k].a, z.a);
        out[k] = s;
    }
    return out;
}

Vec grad_H_u(const ControlledDiffusion& model, double t, std::span<const double> x,
             std::span<const double> u, std::span<const double> y, const Mat& z) {
    return grad_H_u(model_gradients(model, t, x, u), y, z);
}

namespace {

Vec project(Vec u, const std::optional<SampleBox>& box) {
    if (box)
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = std::clamp(u[i], box->lo[i], box->hi[i]);
    return u;
}

bool on_box_boundary(const Vec& u, const std::optional<SampleBox>& box) {
    if (!box) return false;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double w = box->hi[i] - box->lo[i];
        if (u[i] <= box->lo[i] + 1e-9 * w || u[i] >= box->hi[i] - 1e-9 * w) return true;
    }
    return false;
}

}  // namespace

MinimizeResult minimize_H_u(const ControlledDiffusion& model, double t,
                            std::span<const double> x, std::span<const double> y, const Mat& z,
                            std::span<const double> u_init, const MinimizeOptions& opt) {
    const int m = model.m;
    auto H = [&](const Vec& u) { return eval_H(model, t, x, u, y, z); };

    MinimizeResult res;
    Vec u(u_init.begin(), u_init.end());
    u = project(std::move(u), opt.bounds);
    double h = H(u);

    // Coarse-to-fine grid scan when the control is low-dimensional and boxed.
    if (opt.bounds && m <= 2) {
        Vec lo = opt.bounds->lo, hi = opt.bounds->hi;
        for (int level = 0; level < opt.refine_levels; ++level) {
            Vec best = u;
            double hbest = h;
            Vec cand(m);
            const int g = opt.grid_points;
            if (m == 1) {
                for (int i = 0; i < g; ++i) {
                    cand[0] = lo[0] + (hi[0] - lo[0]) * i / (g - 1);
                    const double hv = H(cand);
                    if (hv < hbest) {
                        hbest = hv;
                        best = cand;
                    }
                }
            } else {
                for (int i = 0; i < g; ++i)
                    for (int j = 0; j < g; ++j) {
                        cand[0] = lo[0] + (hi[0] - lo[0]) * i / (g - 1);
                        cand[1] = lo[1] + (hi[1] - lo[1]) * j / (g - 1);
                        const double hv = H(cand);
                        if (hv < hbest) {
                            hbest = hv;
                            best = cand;
                        }
                    }
            }
            u = best;
            h = hbest;
            // Shrink the box around the incumbent for the next level.
            for (int d = 0; d < m; ++d) {
                const double w = (hi[d] - lo[d]) / (g - 1);
                lo[d] = std::max(opt.bounds->lo[d], u[d] - 2.0 * w);
                hi[d] = std::min(opt.bounds->hi[d], u[d] + 2.0 * w);
            }
        }
    }

    // Projected gradient descent with Armijo backtracking.
    double step = 1.0;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const Vec g = grad_H_u(model, t, x, u, y, z);
        // Projected gradient: zero out components pushing outside the box.
        Vec pg = g;
        if (opt.bounds) {
            for (int d = 0; d < m; ++d) {
                const double w = opt.bounds->hi[d] - opt.bounds->lo[d];
                if (u[d] <= opt.bounds->lo[d] + 1e-12 * w && g[d] > 0) pg[d] = 0;
                if (u[d] >= opt.bounds->hi[d] - 1e-12 * w && g[d] < 0) pg[d] = 0;
            }
        }
        if (norm2(pg) <= opt.tol * (1.0 + std::abs(h))) {
            res.converged = true;
            break;
        }
        bool moved = false;
        for (int bt = 0; bt < 40; ++bt) {
            Vec trial(m);
            for (int d = 0; d < m; ++d) trial[d] = u[d] - step * g[d];
            trial = project(std::move(trial), opt.bounds);
            const double ht = H(trial);
            double decr = 0.0;
            for (int d = 0; d < m; ++d) decr += (u[d] - trial[d]) * g[d];
            if (ht <= h - 1e-4 * decr && ht < h) {
                u = std::move(trial);
                h = ht;
                moved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if (!moved) {
            // No descent direction at working precision.
            const Vec g2 = grad_H_u(model, t, x, u, y, z);
            res.converged = norm2(g2) <= 100.0 * opt.tol * (1.0 + std::abs(h));
            break;
        }
    }
    res.u_star = u;
    res.h_star = h;
    res.iterations = it;
    res.on_boundary = on_box_boundary(u, opt.bounds);
    if (it >= opt.max_iterations) res.converged = false;
    return res;
}

ConvexityProbe probe_convexity(const ControlledDiffusion& model, const SampleBox& x_box,
                               const SampleBox& u_box, int n_samples, std::uint64_t seed) {
    if (static_cast<int>(x_box.lo.size()) != model.n ||
        static_cast<int>(u_box.lo.size()) != model.m)
        throw ConfigError("convexity probe: sample box dimension mismatch");
    const int n = model.n;
    const int m = model.m;
    SeqRng rng(seed, "convexity");
    ConvexityProbe probe;
    probe.n_samples = n_samples;
    probe.min_gap = 1e300;
    Vec px(n), qx(n), mx(n), pu(m), qu(m), mu(m), y(n);
    Mat z(n, n);
    for (int s = 0; s < n_samples; ++s) {
        for (int d = 0; d < n; ++d) px[d] = rng.uniform(x_box.lo[d], x_box.hi[d]);
        for (int d = 0; d < n; ++d) qx[d] = rng.uniform(x_box.lo[d], x_box.hi[d]);
        for (int d = 0; d < m; ++d) pu[d] = rng.uniform(u_box.lo[d], u_box.hi[d]);
        for (int d = 0; d < m; ++d) qu[d] = rng.uniform(u_box.lo[d], u_box.hi[d]);
        const double theta = rng.uniform(0.01, 0.99);
        const double t = rng.uniform(0.0, model.decl.period.value_or(1.0));
        // Convexity of H in (x, u) must hold whatever the adjoint pair is.
        for (int d = 0; d < n; ++d) y[d] = 2.0 * rng.normal();
        for (int a = 0; a < n; ++a)
            for (int bd = 0; bd < n; ++bd) z(a, bd) = 2.0 * rng.normal();
        for (int d = 0; d < n; ++d) mx[d] = theta * px[d] + (1.0 - theta) * qx[d];
        for (int d = 0; d < m; ++d) mu[d] = theta * pu[d] + (1.0 - theta) * qu[d];
        const double hp = eval_H(model, t, px, pu, y, z);
        const double hq = eval_H(model, t, qx, qu, y, z);
        const double hm = eval_H(model, t, mx, mu, y, z);
        const double gap = theta * hp + (1.0 - theta) * hq - hm;
        if (gap < probe.min_gap) {
            probe.min_gap = gap;
            probe.witness_px = px;
            probe.witness_pu = pu;
            probe.witness_qx = qx;
            probe.witness_qu = qu;
            probe.witness_theta = theta;
        }
    }
    probe.convex = probe.min_gap >= -1e-9;
    return probe;
}

}  // namespace ergolab
