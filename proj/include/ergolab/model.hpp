// Controlled diffusion models, admissible control laws, and the structural
// assumption checks (dissipativity, ellipticity, growth/Lipschitz bounds)
// that gate every downstream stage.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ergolab/common.hpp"
#include "ergolab/linalg.hpp"

namespace ergolab {

// Coefficient callables write into caller-provided buffers; no per-call
// allocation in simulation hot loops.
//   drift:      out has n entries.
//   diffusion:  out has n*n entries, row-major.
//   cost:       returns the running cost value.
using DriftFn = std::function<void(double t, std::span<const double> x,
                                   std::span<const double> u, std::span<double> out)>;
using DiffusionFn = DriftFn;
using CostFn = std::function<double(double t, std::span<const double> x,
                                    std::span<const double> u)>;

// Optional analytic derivatives. Layouts:
//   grad_x_b:     out[i*n+j]   = d b_i / d x_j          (n x n)
//   grad_u_b:     out[i*m+j]   = d b_i / d u_j          (n x m)
//   grad_x_sigma: out[k*n*n + i*n + j] = d sigma_ij / d x_k
//   grad_u_sigma: out[k*n*n + i*n + j] = d sigma_ij / d u_k
//   grad_x_L:     out[j] = d L / d x_j                  (n)
//   grad_u_L:     out[j] = d L / d u_j                  (m)
struct AnalyticGradients {
    DriftFn grad_x_b, grad_u_b, grad_x_sigma, grad_u_sigma;
    DriftFn grad_x_L, grad_u_L;
};

// Constants the modeler asserts up front; checks estimate empirical
// counterparts and compare where both exist.
struct DeclaredConstants {
    std::optional<double> dissipativity_k;   // contraction rate k > 0
    std::optional<double> diffusion_growth_omega;  // tangent expansion rate
    std::optional<double> sigma_lo;          // lower bound on singular values of sigma
    std::optional<double> sigma_hi;          // upper bound on ||sigma||
    std::optional<double> drift_at_zero;     // sup_t,u ||b(t,0,u)||
    std::optional<double> grad_cost_bound;   // sup ||grad_x L|| (absent if unbounded)
    std::optional<double> period;            // coefficients periodic in t with this period
};

struct ControlledDiffusion {
    std::string name;
    int n = 1;  // state dimension
    int m = 1;  // control dimension
    DriftFn b;
    DiffusionFn sigma;
    CostFn L;
    AnalyticGradients grads;  // members may be empty; finite differences fill in
    DeclaredConstants decl;

    bool has_analytic_gradients() const { return static_cast<bool>(grads.grad_x_b); }
    std::uint64_t fingerprint() const;
};

// Admissible control laws: constant, deterministic open-loop, or Markov
// feedback. Optional box bounds clip the emitted control.
class ControlLaw {
  public:
    enum class Kind { constant, open_loop, feedback };

    static ControlLaw constant(Vec u0, std::string name = "constant");
    static ControlLaw open_loop(std::function<void(double, std::span<double>)> u_of_t,
                                int m, std::string name = "open-loop");
    static ControlLaw feedback(std::function<void(double, std::span<const double>, std::span<double>)> u_of_tx,
                               int m, std::string name = "feedback");

    void eval(double t, std::span<const double> x, std::span<double> out) const;
    Kind kind() const { return kind_; }
    int dim() const { return m_; }
    const std::string& name() const { return name_; }

    void set_bounds(Vec lo, Vec hi);
    const std::optional<std::pair<Vec, Vec>>& bounds() const { return bounds_; }

  private:
    Kind kind_ = Kind::constant;
    int m_ = 1;
    std::string name_;
    Vec u0_;
    std::function<void(double, std::span<double>)> u_t_;
    std::function<void(double, std::span<const double>, std::span<double>)> u_tx_;
    std::optional<std::pair<Vec, Vec>> bounds_;
};

// Axis-aligned sampling region for checks.
struct SampleBox {
    Vec lo, hi;
    static SampleBox centered(int n, double radius);
};

enum class Verdict { holds, fails, inconclusive };
std::string to_string(Verdict v);

struct DissipativityResult {
    Verdict verdict = Verdict::inconclusive;
    double k_hat_pair = 0.0;   // from <b(x,u)-b(y,u), x-y> quotients
    double k_hat_grad = 0.0;   // from largest eigenvalue of sym grad_x b
    double agreement_rel = 0.0;  // |pair-grad| / max(|pair|,|grad|)
    Vec witness_x, witness_y;  // most adverse pair (quotient maximizer)
    int n_samples = 0;
    std::uint64_t seed = 0;
    Warnings warnings;
};

struct EllipticityResult {
    Verdict verdict = Verdict::inconclusive;
    double sigma_min_hat = 0.0;   // min over samples of smallest singular value
    double sigma_norm_max = 0.0;  // max over samples of ||sigma||
    double sum_lo = 0.0, sum_hi = 0.0;  // range of ||sigma|| + ||sigma^-1||
    double cond_max = 0.0;
    Vec witness_x;
    int n_samples = 0;
    std::uint64_t seed = 0;
    Warnings warnings;
};

struct GrowthLipschitzResult {
    Verdict verdict = Verdict::inconclusive;
    double c_tilde_hat = 0.0;   // sup ||b(t,0,u)||
    double lipschitz_hat = 0.0; // sup pair quotient of ||db|| + ||dsigma|| over ||dx||
    double linear_growth_hat = 0.0;  // sup (||b|| + ||sigma||) / (1 + ||x||)
    double grad_cost_hat = 0.0;      // sup ||grad_x L||
    double z_lipschitz_hat = 0.0;    // sup ||grad_x sigma|| (z-slope of the H gradient)
    int n_samples = 0;
    std::uint64_t seed = 0;
    Warnings warnings;
};

struct AssumptionReport {
    std::string model_name;
    std::uint64_t model_fingerprint = 0;
    DissipativityResult dissipativity;
    EllipticityResult ellipticity;
    GrowthLipschitzResult growth;
    bool all_hold = false;
    std::string to_json() const;
};

struct CheckOptions {
    int n_samples = 4000;
    std::uint64_t seed = 1;
    std::string stream = "model-check";
    std::optional<SampleBox> u_box;  // default [-1,1]^m
    Vec t_samples = {0.0};           // times to probe (periodic models pass a grid)
};

DissipativityResult check_dissipativity(const ControlledDiffusion& model,
                                        const SampleBox& x_box, const CheckOptions& opt = {});
EllipticityResult check_ellipticity(const ControlledDiffusion& model,
                                    const SampleBox& x_box, const CheckOptions& opt = {});
GrowthLipschitzResult check_growth_lipschitz(const ControlledDiffusion& model,
                                             const SampleBox& x_box, const CheckOptions& opt = {});
AssumptionReport run_assumption_checks(const ControlledDiffusion& model,
                                       const SampleBox& x_box, const CheckOptions& opt = {});

// Centered finite differences for all six derivative blocks at one point.
// Step h = 1e-5 * (1 + |coordinate|) per axis; error is O(h^2).
struct GradientBundle {
    Mat gx_b;        // n x n
    Mat gu_b;        // n x m
    std::vector<Mat> gx_sigma;  // n entries of n x n (index = x-axis)
    std::vector<Mat> gu_sigma;  // m entries of n x n
    Vec gx_L;        // n
    Vec gu_L;        // m
};

GradientBundle finite_difference_gradients(const ControlledDiffusion& model, double t,
                                           std::span<const double> x, std::span<const double> u);

// Analytic gradients when present, finite differences otherwise.
GradientBundle model_gradients(const ControlledDiffusion& model, double t,
                               std::span<const double> x, std::span<const double> u);

// Max relative disagreement between analytic and finite-difference gradients
// over sampled points; models advertising analytic derivatives should stay
// below 1e-4.
double validate_gradients(const ControlledDiffusion& model, const SampleBox& x_box,
                          int n_samples, std::uint64_t seed);

}  // namespace ergolab
