#include "ergolab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "ergolab/adjoint.hpp"
#include "ergolab/ebsde.hpp"
#include "ergolab/ergodicity.hpp"
#include "ergolab/parallel.hpp"
#include "ergolab/report.hpp"
#include "ergolab/scenarios.hpp"
#include "ergolab/smp.hpp"

namespace ergolab {

namespace {

struct StageContext {
    Scenario sc;
    std::uint64_t seed = 7;
    std::optional<AssumptionReport> check;
    std::optional<IhAdjointSolution> adjoint;
    std::optional<PathEnsemble> adjoint_ensemble;  // pre-rolled, controls stored
    std::vector<std::pair<std::string, std::string>> summary;  // stage -> headline
};

double declared_k(const Scenario& sc) {
    return sc.model.decl.dissipativity_k.value_or(1.0);
}

std::string fd3(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

void stage_check(const Config& cfg, StageContext& ctx, ReportBundle& bundle) {
    CheckOptions copt;
    copt.n_samples = cfg.get_int("check", "n_samples", 4000);
    copt.seed = ctx.seed;
    copt.u_box = ctx.sc.u_box;
    if (ctx.sc.model.decl.period) {
        const double p = *ctx.sc.model.decl.period;
        copt.t_samples = {0.0, 0.25 * p, 0.5 * p, 0.75 * p};
    }
    SampleBox xb = ctx.sc.x_box;
    if (cfg.has("check", "radius"))
        xb = SampleBox::centered(ctx.sc.model.n, cfg.get_double("check", "radius", 3.0));

    const AssumptionReport rep = run_assumption_checks(ctx.sc.model, xb, copt);
    bundle.write_text("assumptions.json", rep.to_json());
    bundle.log("check: dissipativity=" + to_string(rep.dissipativity.verdict) +
               " k_pair=" + fmt_double(rep.dissipativity.k_hat_pair) +
               " k_grad=" + fmt_double(rep.dissipativity.k_hat_grad));
    bundle.log("check: ellipticity=" + to_string(rep.ellipticity.verdict) +
               " sigma_min=" + fmt_double(rep.ellipticity.sigma_min_hat));
    bundle.log("check: growth=" + to_string(rep.growth.verdict) +
               " lipschitz=" + fmt_double(rep.growth.lipschitz_hat));
    ctx.check = rep;
    ctx.summary.emplace_back(
        "check", rep.all_hold
                     ? "all structural assumptions hold (k_pair=" +
                           fd3(rep.dissipativity.k_hat_pair) + ", sigma_min=" +
                           fd3(rep.ellipticity.sigma_min_hat) + ")"
                     : "FAILED: dissipativity=" + to_string(rep.dissipativity.verdict) +
                           ", ellipticity=" + to_string(rep.ellipticity.verdict) +
                           ", growth=" + to_string(rep.growth.verdict));
    if (!rep.all_hold)
        throw AssumptionError("scenario '" + ctx.sc.name +
                              "' fails structural checks; see assumptions.json in " +
                              bundle.dir());
}

void stage_simulate(const Config& cfg, StageContext& ctx, ReportBundle& bundle) {
    const double dt = cfg.get_double("simulate", "dt", 0.01);
    const double horizon = cfg.get_double("simulate", "horizon", 10.0);
    const int n_paths = cfg.get_int("simulate", "n_paths", 20000);
    TimeGrid grid{0.0, dt, static_cast<int>(std::lround(horizon / dt))};
    SimulateOptions sopt;
    sopt.store_increments = false;
    sopt.store_controls = false;
    const PathEnsemble ens =
        simulate_forward(ctx.sc.model, ctx.sc.law, grid, n_paths, ctx.sc.x0, ctx.seed, sopt);
    const MomentFit fit = estimate_moment_bound(ens);
    const LongRunAverage lra =
        long_run_average(ctx.sc.model, ctx.sc.law, horizon, dt, std::min(n_paths, 4096),
                         ctx.sc.x0, ctx.seed, 0.2 * horizon);
    bundle.write_text("simulate.json", to_json(fit, lra));
    bundle.log("simulate: mu_hat=" + fmt_double(fit.mu_hat) + " c_hat=" + fmt_double(fit.c_hat) +
               (fit.inconclusive ? " (inconclusive: " + fit.note + ")" : ""));
    bundle.log("simulate: lambda~=" + fmt_double(lra.lambda_hat) + " +/- " +
               fmt_double(lra.ci_half_width));
    ctx.summary.emplace_back(
        "simulate", fit.inconclusive
                        ? "moment fit inconclusive (" + fit.note + ")"
                        : "second moment settles at " + fd3(fit.c_hat) + " (rate " +
                              fd3(fit.mu_hat) + "); lambda~=" + fd3(lra.lambda_hat));
}

void stage_adjoint(const Config& cfg, StageContext& ctx, ReportBundle& bundle) {
    IhAdjointOptions aopt;
    aopt.k = declared_k(ctx.sc);
    aopt.T0 = cfg.get_double("adjoint", "T0", 1.0);
    aopt.T_init = cfg.get_double("adjoint", "T_init", 0.0);
    aopt.tol = cfg.get_double("adjoint", "tol", 0.005);
    aopt.dt = cfg.get_double("adjoint", "dt", 0.02);
    aopt.n_paths = cfg.get_int("adjoint", "n_paths", 20000);
    aopt.basis_degree = cfg.get_int("adjoint", "basis_degree", 3);
    aopt.max_solves = cfg.get_int("adjoint", "max_solves", 12);
    aopt.x0 = ctx.sc.x0;
    aopt.seed = ctx.seed;
    IhAdjointSolution ih = solve_ih_adjoint(ctx.sc.model, ctx.sc.law, aopt);

    const double spawn = 4.0 / aopt.k;
    TimeGrid grid{-spawn, aopt.dt,
                  static_cast<int>(std::lround((spawn + aopt.T0) / aopt.dt))};
    SimulateOptions sopt;
    sopt.store_increments = false;
    PathEnsemble ens = simulate_forward(ctx.sc.model, ctx.sc.law, grid, 4096, ctx.sc.x0,
                                        ctx.seed, sopt);
    const BoundCheck bc = verify_bound(ih.solution, ens, aopt.k,
                                       ctx.sc.model.decl.grad_cost_bound);
    bundle.write_text("adjoint.json", to_json(ih, bc));
    bundle.log("adjoint: converged=" + std::string(ih.converged ? "true" : "false") +
               " final_horizon=" + fmt_double(ih.final_horizon) +
               " slope_ratio=" + fmt_double(ih.slope_ratio));
    if (!bc.skipped)
        bundle.log("adjoint: sup||Y||=" + fmt_double(bc.sup_norm) + " bound=" +
                   fmt_double(bc.bound) + (bc.pass ? " (within bound)" : " (EXCEEDS bound)"));
    ctx.adjoint = std::move(ih);
    ctx.adjoint_ensemble = std::move(ens);
    ctx.summary.emplace_back(
        "adjoint", "converged at T=" + fd3(ctx.adjoint->final_horizon) + " after " +
                       std::to_string(ctx.adjoint->history.size()) + " solves; decay slope " +
                       fd3(ctx.adjoint->decay_slope) +
                       (bc.skipped ? "" : (bc.pass ? "; Y within C/k" : "; Y EXCEEDS C/k")));
}

void stage_ergodicity(const Config& cfg, StageContext& ctx, ReportBundle& bundle) {
    const double t = cfg.get_double("ergodicity", "t", 1.0);
    const double dt = cfg.get_double("ergodicity", "dt", 0.01);
    const int n_paths = cfg.get_int("ergodicity", "n_paths", 20000);
    const int n_pairs = cfg.get_int("ergodicity", "n_pairs", 20000);
    const int max_epochs = cfg.get_int("ergodicity", "max_epochs", 10);
    const ControlledDiffusion& model = ctx.sc.model;
    const ControlLaw& law = ctx.sc.law;
    const int n = model.n;

    struct Psi {
        std::string name;
        TestFunction fn;
    };
    const std::vector<Psi> psis = {
        {"tanh", [](std::span<const double> x) { return std::tanh(x[0]); }},
        {"gauss",
         [](std::span<const double> x) {
             double s = 0.0;
             for (double v : x) s += v * v;
             return std::exp(-s);
         }},
        {"clipped-sin",
         [](std::span<const double> x) {
             return std::clamp(std::sin(3.0 * x[0]), -0.8, 0.8);
         }},
    };
    Vec h(n, 0.0);
    h[0] = 1.0;
    double bound = std::numeric_limits<double>::quiet_NaN();
    if (model.decl.dissipativity_k)
        bound = feller_gradient_bound(*model.decl.dissipativity_k,
                                      model.decl.diffusion_growth_omega.value_or(0.0),
                                      model.decl.sigma_lo.value_or(1.0), t);
    std::vector<std::vector<std::string>> grows;
    for (const Psi& p : psis) {
        const GradientEstimate gw =
            pt_gradient_weight(model, law, ctx.sc.x0, h, p.fn, t, dt, n_paths, ctx.seed);
        const GradientEstimate gf = pt_gradient_fd(model, law, ctx.sc.x0, h, p.fn, t, dt,
                                                   n_paths, 1e-3, ctx.seed);
        grows.push_back({p.name, fmt_double(gw.estimate), fmt_double(gw.ci_half_width),
                         fmt_double(gf.estimate), fmt_double(gf.ci_half_width),
                         fmt_double(bound)});
        bundle.log("ergodicity: grad[" + p.name + "] weight=" + fmt_double(gw.estimate) +
                   " fd=" + fmt_double(gf.estimate));
    }
    bundle.write_csv("ergodicity/gradient.csv",
                     {"psi", "weight_estimate", "weight_ci", "fd_estimate", "fd_ci", "bound"},
                     grows);

    Vec center(n, 0.0);
    double radius = 1.0;
    if (ctx.sc.ou) {
        center[0] = ctx.sc.ou->mean(ctx.sc.x0[0], t);
        radius = std::sqrt(ctx.sc.ou->variance(t));
    }
    const HitProbability near =
        irreducibility_probe(model, law, ctx.sc.x0, center, radius, t, dt, n_paths, ctx.seed);
    Vec far = center;
    far[0] += 8.0 * radius;
    const HitProbability tail = irreducibility_probe(model, law, ctx.sc.x0, far, 0.5 * radius,
                                                     t, dt, n_paths, ctx.seed);
    std::vector<std::vector<std::string>> hrows;
    hrows.push_back({"one-sd", fmt_double(near.p_hat), fmt_double(near.ci_lo),
                     fmt_double(near.ci_hi), near.positive ? "true" : "false",
                     fmt_double(near.detection_bound), std::to_string(near.n_paths)});
    hrows.push_back({"tail", fmt_double(tail.p_hat), fmt_double(tail.ci_lo),
                     fmt_double(tail.ci_hi), tail.positive ? "true" : "false",
                     fmt_double(tail.detection_bound), std::to_string(tail.n_paths)});
    bundle.write_csv("ergodicity/hit.csv",
                     {"ball", "p_hat", "ci_lo", "ci_hi", "positive", "detection_bound",
                      "n_paths"},
                     hrows);
    bundle.log("ergodicity: hit[one-sd]=" + fmt_double(near.p_hat) + " hit[tail]=" +
               fmt_double(tail.p_hat) +
               (tail.note.empty() ? "" : " (" + tail.note + ")"));

    CouplingOptions copt;
    copt.k = declared_k(ctx.sc);
    copt.dt = dt;
    copt.n_pairs = n_pairs;
    copt.max_epochs = max_epochs;
    copt.seed = ctx.seed;
    Vec y0 = ctx.sc.x0;
    for (double& v : y0) v = -v;
    const TvFit tv = coupling_tv(model, law, ctx.sc.x0, y0, copt);
    std::vector<std::vector<std::string>> crows;
    for (std::size_t i = 0; i < tv.times.size(); ++i) {
        std::string oracle = "";
        if (ctx.sc.ou)
            oracle = fmt_double(ctx.sc.ou->tv_distance(ctx.sc.x0[0], y0[0], tv.times[i]));
        crows.push_back({fmt_double(tv.times[i]), fmt_double(tv.tv_hat[i]), oracle});
    }
    bundle.write_csv("ergodicity/coupling.csv", {"t", "tv_hat", "oracle_tv"}, crows);
    bundle.log("ergodicity: coupling rho_hat=" + fmt_double(tv.rho_hat) + " c_hat=" +
               fmt_double(tv.c_hat) + " r2=" + fmt_double(tv.r2) +
               (tv.inconclusive ? " (inconclusive: " + tv.note + ")" : ""));
    ctx.summary.emplace_back(
        "ergodicity",
        tv.inconclusive
            ? "mixing inconclusive (" + tv.note + ")"
            : "hit(one-sd)=" + fd3(near.p_hat) + "; tv decay rate " + fd3(tv.rho_hat) +
                  " (r2=" + fd3(tv.r2) + ")");
}

void stage_ebsde(const Config& cfg, StageContext& ctx, ReportBundle& bundle) {
    EbsdeOptions eopt;
    eopt.alpha_schedule = cfg.get_double_list("ebsde", "alphas", {0.4, 0.2, 0.1, 0.05});
    eopt.dt = cfg.get_double("ebsde", "dt", 0.02);
    eopt.n_paths = cfg.get_int("ebsde", "n_paths", 4096);
    eopt.mc_paths = eopt.n_paths;
    eopt.k = declared_k(ctx.sc);
    eopt.x0 = ctx.sc.x0;
    eopt.seed = ctx.seed;
    const ErgodicSolution es = solve_ebsde(ctx.sc.model, ctx.sc.law, eopt);

    ConsistencyOptions copt;
    copt.k = eopt.k;
    copt.dt = eopt.dt;
    copt.fh_horizon = cfg.get_double("ebsde", "fh_horizon", 0.0);
    copt.lra_horizon = cfg.get_double("ebsde", "lra_horizon", 0.0);
    copt.n_paths = eopt.n_paths;
    copt.x0 = ctx.sc.x0;
    copt.seed = ctx.seed;
    const LambdaConsistency lc = check_lambda_consistency(ctx.sc.model, ctx.sc.law, es, copt);

    std::optional<PeriodicFeatureCheck> pfc;
    if (ctx.sc.model.decl.period)
        pfc = check_periodic_features(ctx.sc.model, ctx.sc.law, es, eopt);

    bundle.write_text("ebsde.json", to_json(es, lc, pfc ? &*pfc : nullptr));
    bundle.log("ebsde: lambda_hat=" + fmt_double(es.lambda_hat) + " +/- " +
               fmt_double(es.lambda_ci_half_width) +
               (es.inconclusive ? " (inconclusive: " + es.note + ")" : ""));
    for (const LambdaRoute& r : lc.routes)
        bundle.log("ebsde: route " + r.name + " = " + fmt_double(r.value) + " +/- " +
                   fmt_double(r.ci_half_width));
    ctx.summary.emplace_back(
        "ebsde", "lambda=" + fd3(es.lambda_hat) + " +/- " + fd3(es.lambda_ci_half_width) +
                     "; routes " + (lc.consistent ? "agree" : "DISAGREE") +
                     " (worst gap " + fd3(lc.worst_gap_over_ci) + " joint CIs)");
}

void stage_smp(const Config& cfg, StageContext& ctx, ReportBundle& bundle) {
    if (!ctx.adjoint || !ctx.adjoint_ensemble)
        throw ConfigError("stage 'smp' requires the 'adjoint' stage results");
    const ControlledDiffusion& model = ctx.sc.model;
    const ControlLaw& law = ctx.sc.law;

    const ConvexityProbe cp = probe_convexity(model, ctx.sc.x_box, ctx.sc.u_box, 4000, ctx.seed);

    MinimalityOptions mopt;
    mopt.seed = ctx.seed;
    const MinimalityReport mr = verify_hamiltonian_minimality(
        model, law, ctx.adjoint->solution, *ctx.adjoint_ensemble, mopt);

    const Vec params = cfg.get_double_list("smp", "challengers", {0.2, 0.8, 1.2});
    std::vector<ControlLaw> challengers;
    for (double p : params) {
        if (ctx.sc.riccati)
            challengers.push_back(make_lq_scenario(p).law);
        else
            challengers.push_back(ControlLaw::constant(Vec{p}, "level-" + fmt_double(p)));
    }

    TransversalityOptions topt;
    topt.n_paths = cfg.get_int("smp", "n_paths", 4000);
    topt.x0 = ctx.sc.x0;
    topt.seed = ctx.seed;
    topt.adjoint_final_horizon = ctx.adjoint->final_horizon;
    topt.period = model.decl.period;
    const Vec horizons = cfg.get_double_list("smp", "horizons", {2, 4, 8, 16});
    const std::vector<TransversalityCurve> curves =
        verify_transversality(model, law, challengers, ctx.adjoint->solution, horizons, topt);

    CompareOptions copt;
    copt.horizon = cfg.get_double("smp", "cost_horizon", 150.0);
    copt.n_paths = cfg.get_int("smp", "cost_paths", 2000);
    copt.x0 = ctx.sc.x0;
    copt.seed = ctx.seed;
    const CostTable costs = compare_costs(model, law, challengers, copt);

    const SmpCertificate cert = issue_certificate(cp, mr, curves, costs);
    bundle.write_text("smp.json", to_json(cert));
    bundle.log("smp: verdict=" + to_string(cert.verdict) + " (" + cert.reason + ")");
    bundle.log("smp: sup_gap=" + fmt_double(mr.sup_gap) + " tol=" +
               fmt_double(mr.tol_effective));
    for (const CostRow& row : costs.challengers)
        bundle.log("smp: challenger " + row.law_name + " lambda=" + fmt_double(row.lambda_hat) +
                   " gap=" + fmt_double(row.gap_vs_candidate));
    ctx.summary.emplace_back("smp", to_string(cert.verdict) + ": " + cert.reason);
}

std::string render_summary(const std::string& scenario, std::uint64_t seed,
                           const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ostringstream out;
    out << "scenario " << scenario << " (seed " << seed << ")\n";
    std::size_t w = 8;
    for (const auto& [stage, line] : rows) w = std::max(w, stage.size());
    for (const auto& [stage, line] : rows)
        out << "  " << stage << std::string(w - stage.size() + 2, ' ') << line << "\n";
    return out.str();
}

}  // namespace

const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages = {"check",      "simulate", "adjoint",
                                                    "ergodicity", "ebsde",    "smp"};
    return stages;
}

std::vector<std::string> resolve_stages(std::vector<std::string> requested) {
    if (requested.empty()) throw ConfigError("no stages requested");
    bool all = false;
    for (const std::string& s : requested)
        if (s == "all") all = true;
    std::vector<std::string> picked;
    if (all) {
        picked = pipeline_stages();
    } else {
        for (const std::string& s : requested) {
            if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) ==
                pipeline_stages().end()) {
                std::string known = "all";
                for (const std::string& k : pipeline_stages()) known += ", " + k;
                throw ConfigError("unknown stage '" + s + "'; known stages: " + known);
            }
            if (std::find(picked.begin(), picked.end(), s) == picked.end()) picked.push_back(s);
        }
        std::sort(picked.begin(), picked.end(), [](const std::string& a, const std::string& b) {
            const auto& order = pipeline_stages();
            return std::find(order.begin(), order.end(), a) <
                   std::find(order.begin(), order.end(), b);
        });
    }
    const auto has = [&](const char* s) {
        return std::find(picked.begin(), picked.end(), s) != picked.end();
    };
    if (!has("check"))
        throw ConfigError("stage '" + picked.front() +
                          "' requires the 'check' stage to run first; add check to the stage "
                          "list or use 'all'");
    if (has("smp") && !has("adjoint"))
        throw ConfigError("stage 'smp' requires the 'adjoint' stage (the certificate evaluates "
                          "the solved adjoint); add adjoint to the stage list or use 'all'");
    return picked;
}

RunResult run_pipeline(const Config& cfg, const std::string& bundle_dir_override) {
    cfg.validate();
    const std::string scenario = cfg.get_string("run", "scenario");
    const std::vector<std::string> stages =
        resolve_stages(cfg.get_string_list("run", "stages", {"all"}));
    const std::uint64_t seed = cfg.get_u64("run", "seed", 7);
    set_max_threads(cfg.get_int("run", "threads", 0));

    std::string bundle_dir = bundle_dir_override;
    if (bundle_dir.empty()) {
        std::string root = cfg.get_string("run", "out", "");
        if (root.empty()) {
            const char* env = std::getenv("ERGOLAB_OUT");
            root = env && *env ? env : "ergolab-out";
        }
        bundle_dir = root + "/" + scenario + "-s" + std::to_string(seed);
    }

    StageContext ctx;
    ctx.sc = make_scenario(scenario);
    ctx.seed = seed;
    ReportBundle bundle(bundle_dir);

    RunResult res;
    res.bundle_dir = bundle.dir();
    try {
        for (const std::string& stage : stages) {
            if (stage == "check") stage_check(cfg, ctx, bundle);
            else if (stage == "simulate") stage_simulate(cfg, ctx, bundle);
            else if (stage == "adjoint") stage_adjoint(cfg, ctx, bundle);
            else if (stage == "ergodicity") stage_ergodicity(cfg, ctx, bundle);
            else if (stage == "ebsde") stage_ebsde(cfg, ctx, bundle);
            else if (stage == "smp") stage_smp(cfg, ctx, bundle);
        }
    } catch (...) {
        // Keep the partial bundle inspectable: flush what completed, then
        // surface the failure to the exit-code mapping.
        bundle.finalize(cfg, scenario, seed, stages);
        throw;
    }
    res.manifest_path = bundle.finalize(cfg, scenario, seed, stages);
    res.summary = render_summary(scenario, seed, ctx.summary);
    return res;
}

RunResult replay_manifest(const std::string& manifest_path) {
    const Manifest m = parse_manifest(manifest_path);
    Config cfg = m.config;
    cfg.set("run", "scenario", m.scenario);
    cfg.set("run", "seed", std::to_string(m.seed));
    std::string joined;
    for (const std::string& s : m.stages) joined += (joined.empty() ? "" : ",") + s;
    cfg.set("run", "stages", joined);

    const std::filesystem::path orig_dir = std::filesystem::path(manifest_path).parent_path();
    const std::string replay_dir =
        orig_dir.empty() ? std::string("replay") : orig_dir.string() + "-replay";

    RunResult rr = run_pipeline(cfg, replay_dir);

    const Manifest fresh = parse_manifest(rr.manifest_path);
    std::size_t verified = 0;
    for (const auto& [rel, hash] : m.outputs) {
        const auto it = std::find_if(fresh.outputs.begin(), fresh.outputs.end(),
                                     [&](const auto& o) { return o.first == rel; });
        if (it == fresh.outputs.end())
            throw SolverError("replay did not produce recorded output '" + rel + "'");
        if (it->second != hash)
            throw SolverError("replay mismatch: '" + rel + "' differs from the recorded run");
        const std::filesystem::path orig_file = orig_dir / rel;
        if (std::filesystem::exists(orig_file)) {
            std::ifstream a(orig_file, std::ios::binary);
            std::ifstream b(std::filesystem::path(rr.bundle_dir) / rel, std::ios::binary);
            std::stringstream sa, sb;
            sa << a.rdbuf();
            sb << b.rdbuf();
            if (sa.str() != sb.str())
                throw SolverError("replay mismatch: '" + rel +
                                  "' bytes differ from the recorded run");
        }
        ++verified;
    }
    for (const auto& [rel, hash] : fresh.outputs) {
        (void)hash;
        const auto it = std::find_if(m.outputs.begin(), m.outputs.end(),
                                     [&](const auto& o) { return o.first == rel; });
        if (it == m.outputs.end())
            throw SolverError("replay produced unrecorded output '" + rel + "'");
    }
    rr.summary += "replay verified: " + std::to_string(verified) + " outputs byte-identical\n";
    return rr;
}

}  // namespace ergolab
