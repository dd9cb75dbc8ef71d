#include "ergolab/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace ergolab {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json jnum(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

ordered_json jvec(const Vec& v) {
    ordered_json arr = ordered_json::array();
    for (double x : v) arr.push_back(jnum(x));
    return arr;
}

ordered_json jwarnings(const Warnings& w) {
    ordered_json arr = ordered_json::array();
    for (const std::string& s : w) arr.push_back(s);
    return arr;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

ReportBundle::ReportBundle(std::string dir) : dir_(std::move(dir)) {
    while (!dir_.empty() && dir_.back() == '/') dir_.pop_back();
    if (dir_.empty()) throw ConfigError("report bundle: empty output directory");
    std::filesystem::create_directories(dir_);
}

void ReportBundle::write_text(const std::string& rel_path, const std::string& text) {
    const std::filesystem::path full = std::filesystem::path(dir_) / rel_path;
    if (full.has_parent_path()) std::filesystem::create_directories(full.parent_path());
    std::ofstream out(full, std::ios::binary);
    if (!out) throw ConfigError("report bundle: cannot write '" + full.string() + "'");
    out << text;
    out.close();
    const std::uint64_t h = fnv1a(text);
    for (auto& [rel, hash] : outputs_)
        if (rel == rel_path) {
            hash = h;
            return;
        }
    outputs_.emplace_back(rel_path, h);
}

void ReportBundle::write_csv(const std::string& rel_path, const std::vector<std::string>& header,
                             const std::vector<Vec>& rows) {
    std::string text;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) text += ',';
        text += header[i];
    }
    text += '\n';
    for (const Vec& row : rows) {
        if (row.size() != header.size())
            throw ConfigError("report bundle: csv row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) text += ',';
            text += fmt_double(row[i]);
        }
        text += '\n';
    }
    write_text(rel_path, text);
}

void ReportBundle::write_csv(const std::string& rel_path,
                             const std::vector<std::string>& header,
                             const std::vector<std::vector<std::string>>& rows) {
    std::string text;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) text += ',';
        text += header[i];
    }
    text += '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw ConfigError("report bundle: csv row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) text += ',';
            text += row[i];
        }
        text += '\n';
    }
    write_text(rel_path, text);
}

void ReportBundle::log(const std::string& line) { log_lines_.push_back(line); }

std::string ReportBundle::finalize(const Config& cfg, const std::string& scenario,
                                   std::uint64_t seed, const std::vector<std::string>& stages) {
    std::string logtext;
    for (const std::string& line : log_lines_) logtext += line + "\n";
    write_text("logs/run.log", logtext);

    ordered_json m;
    m["version"] = kVersion;
    m["scenario"] = scenario;
    m["seed"] = seed;
    ordered_json js = ordered_json::array();
    for (const std::string& s : stages) js.push_back(s);
    m["stages"] = js;
    ordered_json jc;
    for (const auto& [section, kv] : cfg.data()) {
        ordered_json jsec;
        for (const auto& [key, value] : kv) jsec[key] = value;
        jc[section] = jsec;
    }
    m["config"] = jc;
    ordered_json jo = ordered_json::array();
    for (const auto& [rel, hash] : outputs_)
        jo.push_back({{"path", rel}, {"fnv1a", hex64(hash)}});
    m["outputs"] = jo;

    const std::filesystem::path full = std::filesystem::path(dir_) / "manifest.json";
    std::ofstream out(full, std::ios::binary);
    if (!out) throw ConfigError("report bundle: cannot write '" + full.string() + "'");
    out << dump(m);
    return full.string();
}

Manifest parse_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open manifest '" + path + "'");
    ordered_json m;
    try {
        in >> m;
    } catch (const std::exception& e) {
        throw ConfigError("malformed manifest '" + path + "': " + e.what());
    }
    Manifest out;
    try {
        out.version = m.at("version").get<std::string>();
        out.scenario = m.at("scenario").get<std::string>();
        out.seed = m.at("seed").get<std::uint64_t>();
        for (const auto& s : m.at("stages")) out.stages.push_back(s.get<std::string>());
        for (const auto& [section, kv] : m.at("config").items())
            for (const auto& [key, value] : kv.items())
                out.config.set(section, key, value.get<std::string>());
        for (const auto& o : m.at("outputs"))
            out.outputs.emplace_back(o.at("path").get<std::string>(),
                                     std::stoull(o.at("fnv1a").get<std::string>(), nullptr, 16));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("manifest '" + path + "' is missing required fields: " + e.what());
    }
    return out;
}

std::string AssumptionReport::to_json() const {
    ordered_json j;
    j["model"] = model_name;
    j["fingerprint"] = hex64(model_fingerprint);
    ordered_json d;
    d["verdict"] = ergolab::to_string(dissipativity.verdict);
    d["k_hat_pair"] = jnum(dissipativity.k_hat_pair);
    d["k_hat_grad"] = jnum(dissipativity.k_hat_grad);
    d["agreement_rel"] = jnum(dissipativity.agreement_rel);
    d["witness_x"] = jvec(dissipativity.witness_x);
    d["witness_y"] = jvec(dissipativity.witness_y);
    d["n_samples"] = dissipativity.n_samples;
    d["warnings"] = jwarnings(dissipativity.warnings);
    j["dissipativity"] = d;
    ordered_json e;
    e["verdict"] = ergolab::to_string(ellipticity.verdict);
    e["sigma_min_hat"] = jnum(ellipticity.sigma_min_hat);
    e["sigma_norm_max"] = jnum(ellipticity.sigma_norm_max);
    e["sum_lo"] = jnum(ellipticity.sum_lo);
    e["sum_hi"] = jnum(ellipticity.sum_hi);
    e["cond_max"] = jnum(ellipticity.cond_max);
    e["witness_x"] = jvec(ellipticity.witness_x);
    e["n_samples"] = ellipticity.n_samples;
    e["warnings"] = jwarnings(ellipticity.warnings);
    j["ellipticity"] = e;
    ordered_json g;
    g["verdict"] = ergolab::to_string(growth.verdict);
    g["c_tilde_hat"] = jnum(growth.c_tilde_hat);
    g["lipschitz_hat"] = jnum(growth.lipschitz_hat);
    g["linear_growth_hat"] = jnum(growth.linear_growth_hat);
    g["grad_cost_hat"] = jnum(growth.grad_cost_hat);
    g["z_lipschitz_hat"] = jnum(growth.z_lipschitz_hat);
    g["n_samples"] = growth.n_samples;
    g["warnings"] = jwarnings(growth.warnings);
    j["growth"] = g;
    j["all_hold"] = all_hold;
    return dump(j);
}

std::string to_json(const MomentFit& fit, const LongRunAverage& lra) {
    ordered_json j;
    ordered_json f;
    f["mu_hat"] = jnum(fit.mu_hat);
    f["c_hat"] = jnum(fit.c_hat);
    f["r2"] = jnum(fit.r2);
    f["inconclusive"] = fit.inconclusive;
    f["note"] = fit.note;
    f["times"] = jvec(fit.times);
    f["m2"] = jvec(fit.m2);
    j["moment_fit"] = f;
    ordered_json l;
    l["lambda_hat"] = jnum(lra.lambda_hat);
    l["ci_half_width"] = jnum(lra.ci_half_width);
    l["n_paths"] = lra.n_paths;
    l["horizon"] = jnum(lra.horizon);
    l["burn_in"] = jnum(lra.burn_in);
    j["long_run_average"] = l;
    return dump(j);
}

std::string to_json(const IhAdjointSolution& sol, const BoundCheck& bound) {
    ordered_json j;
    j["converged"] = sol.converged;
    j["final_horizon"] = jnum(sol.final_horizon);
    j["decay_slope"] = jnum(sol.decay_slope);
    j["slope_ratio"] = jnum(sol.slope_ratio);
    ordered_json h = ordered_json::array();
    for (const CauchyRecord& r : sol.history)
        h.push_back({{"horizon", jnum(r.horizon)}, {"gap", jnum(r.gap)}});
    j["history"] = h;
    j["eval_window"] = {jnum(sol.solution.eval_lo), jnum(sol.solution.eval_hi)};
    ordered_json b;
    b["bound"] = jnum(bound.bound);
    b["sup_norm"] = jnum(bound.sup_norm);
    b["slack"] = jnum(bound.slack);
    b["pass"] = bound.pass;
    b["skipped"] = bound.skipped;
    b["note"] = bound.note;
    j["bound_check"] = b;
    j["warnings"] = jwarnings(sol.warnings);
    return dump(j);
}

std::string to_json(const ErgodicSolution& sol, const LambdaConsistency& lc,
                    const PeriodicFeatureCheck* periodic) {
    ordered_json j;
    j["lambda_hat"] = jnum(sol.lambda_hat);
    j["lambda_ci_half_width"] = jnum(sol.lambda_ci_half_width);
    ordered_json sch = ordered_json::array();
    for (const AlphaRecord& r : sol.schedule)
        sch.push_back({{"alpha", jnum(r.alpha)},
                       {"lambda_alpha", jnum(r.lambda_alpha)},
                       {"ci_half_width", jnum(r.ci_half_width)},
                       {"mc_lambda", jnum(r.mc_lambda)}});
    j["schedule"] = sch;
    j["v_ref"] = jnum(sol.v_ref);
    j["x_ref"] = jvec(sol.x_ref);
    ordered_json g;
    g["c_prime"] = jnum(sol.growth.c_prime);
    g["r2"] = jnum(sol.growth.r2);
    g["n_points"] = sol.growth.n_points;
    j["growth"] = g;
    j["monotone_ok"] = sol.monotone_ok;
    j["inconclusive"] = sol.inconclusive;
    j["note"] = sol.note;
    ordered_json c;
    ordered_json routes = ordered_json::array();
    for (const LambdaRoute& r : lc.routes)
        routes.push_back({{"name", r.name},
                          {"value", jnum(r.value)},
                          {"ci_half_width", jnum(r.ci_half_width)}});
    c["routes"] = routes;
    c["fh_raw"] = jnum(lc.fh_raw);
    c["fh_correction"] = jnum(lc.fh_correction);
    c["max_pairwise_gap"] = jnum(lc.max_pairwise_gap);
    c["worst_gap_over_ci"] = jnum(lc.worst_gap_over_ci);
    c["consistent"] = lc.consistent;
    c["start_a"] = {{"lambda_hat", jnum(lc.start_a.lambda_hat)},
                    {"ci_half_width", jnum(lc.start_a.ci_half_width)}};
    c["start_b"] = {{"lambda_hat", jnum(lc.start_b.lambda_hat)},
                    {"ci_half_width", jnum(lc.start_b.ci_half_width)}};
    c["x0_independent"] = lc.x0_independent;
    c["warnings"] = jwarnings(lc.warnings);
    j["consistency"] = c;
    if (periodic) {
        ordered_json p;
        p["resid_plain"] = jnum(periodic->resid_plain);
        p["resid_periodic"] = jnum(periodic->resid_periodic);
        p["reduction"] = jnum(periodic->reduction);
        p["improves"] = periodic->improves;
        p["n_points"] = periodic->n_points;
        j["periodic_features"] = p;
    } else {
        j["periodic_features"] = nullptr;
    }
    j["warnings"] = jwarnings(sol.warnings);
    return dump(j);
}

std::string to_json(const SmpCertificate& cert) {
    ordered_json j;
    j["verdict"] = to_string(cert.verdict);
    j["reason"] = cert.reason;
    ordered_json cx;
    cx["convex"] = cert.convexity.convex;
    cx["min_gap"] = jnum(cert.convexity.min_gap);
    cx["n_samples"] = cert.convexity.n_samples;
    j["convexity"] = cx;
    ordered_json mn;
    mn["pass"] = cert.minimality.pass;
    mn["sup_gap"] = jnum(cert.minimality.sup_gap);
    mn["mean_gap"] = jnum(cert.minimality.mean_gap);
    mn["p99_gap"] = jnum(cert.minimality.p99_gap);
    mn["tol_effective"] = jnum(cert.minimality.tol_effective);
    mn["h_scale"] = jnum(cert.minimality.h_scale);
    mn["se_median"] = jnum(cert.minimality.se_median);
    mn["n_samples"] = cert.minimality.n_samples;
    ordered_json w;
    w["t"] = jnum(cert.minimality.witness.t);
    w["x"] = jvec(cert.minimality.witness.x);
    w["u"] = jvec(cert.minimality.witness.u);
    w["u_star"] = jvec(cert.minimality.witness.u_star);
    w["gap"] = jnum(cert.minimality.witness.gap);
    mn["witness"] = w;
    mn["warnings"] = jwarnings(cert.minimality.warnings);
    j["minimality"] = mn;
    ordered_json tv = ordered_json::array();
    for (const TransversalityCurve& cv : cert.transversality) {
        ordered_json t;
        t["challenger"] = cv.challenger;
        t["horizons"] = jvec(cv.horizons);
        t["values"] = jvec(cv.values);
        t["ci_half_width"] = jvec(cv.ci_half_width);
        t["exponent"] = jnum(cv.exponent);
        t["r2"] = jnum(cv.r2);
        t["decays"] = cv.decays;
        t["divergent"] = cv.divergent;
        t["note"] = cv.note;
        tv.push_back(t);
    }
    j["transversality"] = tv;
    ordered_json costs;
    costs["horizon"] = jnum(cert.costs.horizon);
    costs["burn_in"] = jnum(cert.costs.burn_in);
    costs["dt"] = jnum(cert.costs.dt);
    costs["n_paths"] = cert.costs.n_paths;
    auto row_json = [](const CostRow& r) {
        ordered_json o;
        o["law"] = r.law_name;
        o["lambda_hat"] = jnum(r.lambda_hat);
        o["ci_half_width"] = jnum(r.ci_half_width);
        o["gap_vs_candidate"] = jnum(r.gap_vs_candidate);
        o["gap_ci"] = jnum(r.gap_ci);
        o["beats_candidate"] = r.beats_candidate;
        return o;
    };
    costs["candidate"] = row_json(cert.costs.candidate);
    ordered_json rows = ordered_json::array();
    for (const CostRow& r : cert.costs.challengers) rows.push_back(row_json(r));
    costs["challengers"] = rows;
    j["costs"] = costs;
    return dump(j);
}

}  // namespace ergolab
