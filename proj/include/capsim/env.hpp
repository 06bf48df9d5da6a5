#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "capsim/plant.hpp"

namespace capsim {

struct RewardConfig {
  double alpha_penalty = 5.0;           // overpressure weight, Eq.-style ratio
  double low_pressure_weight = 5.0;     // boundary weight below p_min
  double switch_penalty_weight = 0.05;  // EUR-equivalent per violation event
  double electricity_price_eur_kwh = 0.30;

  void validate() const;
};

struct RewardBreakdown {
  double energy_cost = 0.0;
  double pressure_penalty = 0.0;
  double switching_penalty = 0.0;
  double total = 0.0;  // always -(energy + pressure + switching)
};

struct Observation {
  double pressure_norm = 0.0;   // (p - p_ref) / p_ref
  Eigen::VectorXd forecast;     // next Y demand samples / ceiling
  Eigen::VectorXd levels;       // current flow fraction per compressor

  Eigen::VectorXd flatten() const;
  static Observation unflatten(const Eigen::VectorXd& v, int horizon,
                               int n_compressors);
};

struct DemandProfile {
  std::vector<double> samples;  // consumer flow in m3/s at dt spacing
  double ceiling = 0.0;         // normalization bound, >= max(samples)

  void validate() const;
};

enum class DemandPattern { DailyWave, StepLoads, Mixed };

DemandPattern demand_pattern_from_string(const std::string& name);
std::string to_string(DemandPattern pattern);

struct DemandGenOptions {
  double ceiling_m3s = 0.025;
  double dt_s = 5.0;
  double base_fraction = 0.3;
  double wave_amplitude_fraction = 0.2;
  double wave_period_s = 86400.0;
  double step_amplitude_fraction = 0.35;
  double mean_step_duration_s = 600.0;
  double noise_fraction = 0.04;
};

DemandProfile generate_demand(std::uint64_t seed, int length,
                              DemandPattern pattern,
                              const DemandGenOptions& options);

// CSV with header "timestamp,flow_m3s", one row per dt. A malformed row is a
// DataError naming the line. Ceiling is max(min_ceiling, max sample).
DemandProfile load_demand_csv(const std::string& path, double min_ceiling);

double energy_cost(const std::vector<double>& powers_kw,
                   const RewardConfig& config, double dt_s);

double pressure_penalty(double p_actual_bar, double p_ref_bar, double alpha);

// Boundary penalty for dropping below the permissible minimum pressure.
double under_pressure_penalty(double p_actual_bar, double p_min_bar,
                              double weight);

struct SwitchUpdate {
  std::vector<double> allowance;
  int violations = 0;
};

// Refills each fixed-speed allowance by max_switches_per_hour * dt/3600
// (capped at the hourly limit), then charges one unit per on/off transition.
// A transition without a full unit of allowance is a violation and clamps
// the allowance at zero.
SwitchUpdate update_switch_counter(const PlantState& state,
                                   const std::vector<double>& new_levels,
                                   const std::vector<CompressorSpec>& specs,
                                   double dt_s);

struct StepResult {
  PlantState next;
  RewardBreakdown reward;
  bool terminated = false;           // pressure left the guard band
  std::vector<double> flows_m3s;     // per compressor
  std::vector<double> powers_kw;     // per compressor
  double demand_m3s = 0.0;
};

// One plant transition: realize setpoints, update switch budgets, integrate
// the tank pressure and price the step. Pure function of its inputs.
StepResult env_step(const PlantState& state, const std::vector<double>& action,
                    double demand_now_m3s, const SystemConfig& system,
                    const RewardConfig& reward);

// Throws std::out_of_range once the profile cannot cover the horizon.
Observation make_observation(const PlantState& state,
                             const DemandProfile& profile, int horizon,
                             double p_ref_bar);

struct EpisodeConfig {
  int episode_length = 720;  // one simulated hour at dt = 5 s
  int horizon = 1;           // forecast steps in the observation
  // Reset pressure range; zeros mean [p_min, p_ref].
  double reset_pressure_lo_bar = 0.0;
  double reset_pressure_hi_bar = 0.0;
};

// Episodic wrapper owning one plant state and one demand profile. A single
// instance must not be shared mid-episode; run one per rollout worker.
class Environment {
 public:
  Environment(SystemConfig system, RewardConfig reward, EpisodeConfig episode);

  Observation reset(DemandProfile profile, double initial_pressure_bar);
  Observation reset(DemandProfile profile, Rng& rng);

  struct EnvStep {
    Observation obs;
    RewardBreakdown reward;
    bool done = false;
    StepResult detail;
  };

  // Throws std::logic_error if the episode already ended.
  EnvStep step(const std::vector<double>& action);

  bool done() const { return done_; }
  const PlantState& state() const { return state_; }
  const DemandProfile& profile() const { return profile_; }
  const SystemConfig& system() const { return system_; }
  const RewardConfig& reward_config() const { return reward_; }
  const EpisodeConfig& episode_config() const { return episode_; }
  double current_demand() const;
  int obs_dim() const;
  int action_dim() const { return system_.n_compressors(); }

 private:
  SystemConfig system_;
  RewardConfig reward_;
  EpisodeConfig episode_;
  DemandProfile profile_;
  PlantState state_;
  bool done_ = true;
};

}  // namespace capsim
