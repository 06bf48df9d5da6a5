#pragma once

#include <memory>
#include <string>
#include <vector>

#include "capsim/baseline.hpp"
#include "capsim/env.hpp"
#include "capsim/policy.hpp"
#include "capsim/scenario.hpp"

namespace capsim {

// A controller maps the current plant situation to per-compressor setpoints.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() = 0;
  virtual std::vector<double> act(const PlantState& state,
                                  const Observation& obs,
                                  double demand_now_m3s) = 0;
  virtual std::string name() const = 0;
};

// Deterministic policy evaluation with the recurrent state carried along.
class PolicyController : public Controller {
 public:
  explicit PolicyController(PolicyParams params);
  void reset() override;
  std::vector<double> act(const PlantState& state, const Observation& obs,
                          double demand_now_m3s) override;
  std::string name() const override { return "policy"; }

 private:
  PolicyParams params_;
  RecurrentState rec_;
};

class BandBaselineController : public Controller {
 public:
  BandBaselineController(const SystemConfig& system, BandControllerConfig config);
  void reset() override;
  std::vector<double> act(const PlantState& state, const Observation& obs,
                          double demand_now_m3s) override;
  std::string name() const override { return "baseline"; }

 private:
  BandController band_;
};

class RandomController : public Controller {
 public:
  RandomController(int n_compressors, std::uint64_t seed);
  void reset() override;
  std::vector<double> act(const PlantState& state, const Observation& obs,
                          double demand_now_m3s) override;
  std::string name() const override { return "random"; }

 private:
  int n_;
  std::uint64_t seed_;
  Rng rng_;
};

struct TrajectoryRow {
  double t_s = 0.0;
  double pressure_bar = 0.0;
  double demand_m3s = 0.0;
  std::vector<double> flows_m3s;
  std::vector<double> powers_kw;
  double reward = 0.0;
  double energy_cost = 0.0;
  double pressure_penalty = 0.0;
  double switching_penalty = 0.0;
};

struct SimSummary {
  long steps = 0;
  double total_energy_kwh = 0.0;
  double total_energy_eur = 0.0;
  double mean_pressure_bar = 0.0;
  double max_pressure_bar = 0.0;
  double min_pressure_bar = 0.0;
  double frac_steps_at_or_below_pmax = 0.0;
  long switch_violations = 0;
  long fixed_speed_switches = 0;
  double total_reward = 0.0;
  bool diverged = false;
};

// Runs one controller over one demand profile as a single continuous trace
// starting from p_ref. rows may be null when only the summary matters.
SimSummary simulate_trace(const Scenario& scenario, Controller& controller,
                          const DemandProfile& profile, int n_steps,
                          std::vector<TrajectoryRow>* rows);

// Episode returns of a controller over freshly generated demand profiles,
// with randomized initial pressures; used for policy-vs-random comparisons.
std::vector<double> evaluate_episode_returns(const Scenario& scenario,
                                             Controller& controller,
                                             DemandPattern pattern,
                                             int n_episodes,
                                             std::uint64_t seed);

void write_trajectory_csv(const std::string& path,
                          const std::vector<TrajectoryRow>& rows,
                          int n_compressors);
void write_summary_json(const std::string& path, const SimSummary& summary,
                        const std::string& controller_name);

}  // namespace capsim
