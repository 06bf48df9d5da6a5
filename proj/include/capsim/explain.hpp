#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "capsim/policy.hpp"
#include "capsim/scenario.hpp"

namespace capsim {

// The attribution engines are model-agnostic: they consume callables so the
// same code explains the neural policy and the hand-built reference models
// used in tests. Rows of the input matrix are observations; the model
// returns one row of action outputs per observation.
using BatchVectorModel = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;
using VectorModel = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using GradientModel = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

BatchVectorModel policy_batch_model(const PolicyParams& params);
VectorModel policy_action_model(const PolicyParams& params);
GradientModel policy_gradient_model(const PolicyParams& params);

// Uniform sampler over the valid observation box: normalized pressure in
// [-0.3, 0.3], forecast and level entries in [0, 1].
struct ObservationSampler {
  int horizon = 1;
  int n_compressors = 1;
  double pressure_norm_lo = -0.3;
  double pressure_norm_hi = 0.3;

  int dim() const { return 1 + horizon + n_compressors; }
  Eigen::VectorXd sample(Rng& rng) const;
  Eigen::MatrixXd sample_matrix(Rng& rng, int n) const;

  static ObservationSampler for_scenario(const Scenario& scenario);
};

struct ExplainConfig {
  int n_background = 1024;
  int n_test = 120;
  int n_saliency_states = 800;
  int n_permutations = 2000;
  int background_subsample = 0;  // 0 = use the full background
  std::uint64_t seed = 0;
  int threads = 2;

  void validate() const;  // all counts must be positive
};

// ---- input perturbation testing ----

struct SweepSpec {
  std::vector<double> fixed_pressures_bar;  // probe pressures
  std::vector<double> flow_grid_m3s;        // ascending demand sweep
  Eigen::VectorXd levels_template;          // levels held fixed

  // probe pressures 7.9..8.3 bar; flow grid spanning [0, 3 * max unit flow]
  static SweepSpec defaults(const Scenario& scenario, int grid_points = 121);
};

struct SweepRow {
  double pressure_bar = 0.0;
  double flow_m3s = 0.0;
  Eigen::VectorXd setpoints;
};

std::vector<SweepRow> perturbation_sweep(const VectorModel& model,
                                         const SweepSpec& spec,
                                         const Scenario& scenario);

// ---- gradient saliency ----

struct SensitivityProfile {
  Eigen::VectorXd mean_abs_gradient;
  long n_samples = 0;   // samples that entered the average
  long n_discarded = 0; // non-finite gradients
  std::vector<std::string> labels;
};

// Mean absolute input gradient over sampled states. More than 1% discarded
// samples is a hard failure (DataError).
SensitivityProfile saliency_profile(const GradientModel& model,
                                    const ExplainConfig& config,
                                    const ObservationSampler& sampler,
                                    const std::vector<std::string>& labels);

// ---- Shapley attribution ----

struct AttributionResult {
  Eigen::VectorXd phi;            // per feature, summed over action outputs
  Eigen::MatrixXd phi_per_action; // features x actions
  double baseline = 0.0;          // E[f(X)] over the background
  double output = 0.0;            // f(s)
  std::string method;             // "exact" or "permutation"
  int sample_count = 0;           // permutations drawn (0 for exact)
  Eigen::VectorXd stderr_phi;     // per feature, permutation method only
};

// Exact interventional Shapley values by full subset enumeration.
// Restricted to at most 12 features; beyond that, callers are pointed to
// shap_sampled.
AttributionResult shap_exact(const BatchVectorModel& model,
                             const Eigen::VectorXd& state,
                             const Eigen::MatrixXd& background,
                             int background_subsample = 0);

// Permutation-sampling estimator for the same value function, with
// per-feature standard errors. Deterministic for a fixed seed.
AttributionResult shap_sampled(const BatchVectorModel& model,
                               const Eigen::VectorXd& state,
                               const Eigen::MatrixXd& background,
                               int n_permutations, std::uint64_t seed,
                               int background_subsample = 0);

// ---- aggregated analyses ----

struct GlobalAttribution {
  Eigen::VectorXd mean_abs_phi;     // per feature over the test states
  Eigen::MatrixXd states;           // n_test x features
  Eigen::MatrixXd per_state_phi;    // n_test x features (summed output)
  Eigen::VectorXd per_state_output; // f(s) per test state
  double baseline = 0.0;            // E[f(X)] over the shared background
  std::vector<std::string> labels;
};

GlobalAttribution global_attribution(const BatchVectorModel& model,
                                     const ExplainConfig& config,
                                     const ObservationSampler& sampler,
                                     const std::vector<std::string>& labels);

struct CaseAttribution {
  std::string pressure_label;  // p_min / p_nom / p_max
  double pressure_bar = 0.0;
  double forecast_fraction = 0.0;
  Eigen::VectorXd state;
  AttributionResult result;
  std::vector<int> waterfall_order;  // feature indices by |phi| descending
};

// The nine boundary/reference cases: pressures {p_min, p_nom, p_max} times
// forecast levels {0%, 50%, 100%}.
std::vector<CaseAttribution> case_attribution(const BatchVectorModel& model,
                                              const Scenario& scenario,
                                              const ExplainConfig& config);

enum class TimeSweep { DemandSweepConstP, PressureSweepConstD };

struct TimeResolvedRow {
  int t = 0;
  double excitation = 0.0;  // demand fraction or pressure in bar
  Eigen::VectorXd phi;
};

// Shapley attribution along a scripted excitation: a demand ramp-and-hold
// under constant pressure, or a wave-like pressure profile under constant
// demand. The plant is bypassed so the excitation is exactly controlled.
std::vector<TimeResolvedRow> time_resolved_attribution(
    const BatchVectorModel& model, TimeSweep sweep, int length,
    const Scenario& scenario, const ExplainConfig& config);

// ---- output writers (deterministic bytes for fixed inputs) ----

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     int n_compressors);
void write_saliency_csv(const std::string& path, const SensitivityProfile& profile);
void write_global_csv(const std::string& path, const GlobalAttribution& global,
                      const SensitivityProfile& saliency);
void write_pattern_json(const std::string& path, const GlobalAttribution& global,
                        const std::string& method);
void write_case_json(const std::string& path,
                     const std::vector<CaseAttribution>& cases,
                     const std::vector<std::string>& labels);
void write_time_csv(const std::string& path,
                    const std::vector<TimeResolvedRow>& rows,
                    const std::vector<std::string>& labels);

// Spearman rank correlation (average ranks over ties) and Pearson
// correlation; shared by the validation suites.
double spearman_correlation(const std::vector<double>& x,
                            const std::vector<double>& y);
double pearson_correlation(const std::vector<double>& x,
                           const std::vector<double>& y);

}  // namespace capsim
