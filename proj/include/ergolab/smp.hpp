#pragma once

// Optimality certification for a candidate feedback law: Hamiltonian
// minimality along the candidate's own paths, transversality of the adjoint
// pairing against challenger laws, and paired long-run cost comparison.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ergolab/adjoint.hpp"
#include "ergolab/hamiltonian.hpp"
#include "ergolab/model.hpp"
#include "ergolab/simulate.hpp"

namespace ergolab {

struct MinimalityWitness {
    double t = 0.0;
    Vec x, u, u_star;
    double gap = 0.0;
};

struct MinimalityReport {
    double sup_gap = 0.0;
    double mean_gap = 0.0;
    double p99_gap = 0.0;
    double tol_effective = 0.0;  // tolerance after scale normalization
    double h_scale = 0.0;        // median |H| over the sampled points
    double se_median = 0.0;      // median propagated solver error of H
    MinimalityWitness witness;   // worst sampled point
    int n_samples = 0;
    bool pass = false;
    Warnings warnings;
};

struct MinimalityOptions {
    int n_slices = 24;          // time slices sampled from the solution window
    int paths_per_slice = 64;   // paths sampled per slice
    double tol = 0.0;           // 0 = auto: 3x median solver standard error of H
    double tol_floor = 1e-4;    // lower bound for the auto tolerance
    std::optional<SampleBox> u_bounds;  // passed to the inner minimizer
    std::uint64_t seed = 5;
};

// Gap report for H(t, X, u_law, Y, Z) - min_u H along the candidate ensemble.
// The gap is nonnegative by construction; pass iff sup <= tol*(1 + |H| scale).
MinimalityReport verify_hamiltonian_minimality(const ControlledDiffusion& model,
                                               const ControlLaw& law, const BsdeSolution& sol,
                                               const PathEnsemble& ensemble,
                                               const MinimalityOptions& opt = {});

struct TransversalityCurve {
    std::string challenger;
    Vec horizons;
    Vec values;         // (1/T) E[ Ybar(Xbar_T) . (X^u_T - Xbar_T) ]
    Vec ci_half_width;
    double exponent = 0.0;  // fitted log|value| vs log T slope
    double r2 = 0.0;
    bool decays = false;
    bool divergent = false;
    std::string note;
};

struct TransversalityOptions {
    double dt = 0.01;
    int n_paths = 4000;
    Vec x0;  // empty = origin
    std::uint64_t seed = 9;
    std::string stream = "smp";
    double exponent_threshold = -0.8;   // decay verdict needs slope <= this
    double max_horizon_factor = 2.0;    // refuse horizons beyond this x solved range
    double adjoint_final_horizon = 0.0; // largest horizon the adjoint solve reached
    std::optional<double> period;       // map time = T mod period when set
};

// For each challenger, simulates candidate and challenger paths under common
// noise from the same start and estimates the adjoint pairing at each horizon.
std::vector<TransversalityCurve> verify_transversality(
    const ControlledDiffusion& model, const ControlLaw& candidate,
    const std::vector<ControlLaw>& challengers, const BsdeSolution& sol, const Vec& horizons,
    const TransversalityOptions& opt = {});

struct CostRow {
    std::string law_name;
    double lambda_hat = 0.0;
    double ci_half_width = 0.0;
    double gap_vs_candidate = 0.0;  // challenger minus candidate, paired
    double gap_ci = 0.0;            // 95% half-width of the paired gap
    bool beats_candidate = false;   // gap < -gap_ci
};

struct CostTable {
    CostRow candidate;
    std::vector<CostRow> challengers;
    double horizon = 0.0, burn_in = 0.0, dt = 0.0;
    int n_paths = 0;
};

struct CompareOptions {
    double horizon = 150.0;
    double burn_in = 10.0;
    double dt = 0.005;
    int n_paths = 2000;
    Vec x0;  // empty = origin
    std::uint64_t seed = 13;
    std::string stream = "smp-costs";
};

// Long-run average cost per law, all laws driven by the same Brownian
// increments so the per-path cost differences cancel the shared noise.
CostTable compare_costs(const ControlledDiffusion& model, const ControlLaw& candidate,
                        const std::vector<ControlLaw>& challengers,
                        const CompareOptions& opt = {});

enum class CertificateVerdict { certified, violated, inconclusive };

std::string to_string(CertificateVerdict v);

struct SmpCertificate {
    CertificateVerdict verdict = CertificateVerdict::inconclusive;
    std::string reason;
    ConvexityProbe convexity;
    MinimalityReport minimality;
    std::vector<TransversalityCurve> transversality;
    CostTable costs;
};

// Pure fold over the sub-reports:
//   convexity fails            -> inconclusive (hypothesis unmet, gaps moot)
//   minimality fails           -> violated, witness attached
//   challenger wins beyond 3x its paired CI -> violated
//   all curves decay and nobody beats the candidate -> certified
//   anything else              -> inconclusive
SmpCertificate issue_certificate(const ConvexityProbe& convexity,
                                 const MinimalityReport& minimality,
                                 const std::vector<TransversalityCurve>& transversality,
                                 const CostTable& costs);

}  // namespace ergolab
