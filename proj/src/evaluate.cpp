#include "capsim/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace capsim {

PolicyController::PolicyController(PolicyParams params)
    : params_(std::move(params)), rec_(RecurrentState::zero(params_.dims.lstm)) {}

void PolicyController::reset() {
  rec_ = RecurrentState::zero(params_.dims.lstm);
}

std::vector<double> PolicyController::act(const PlantState&,
                                          const Observation& obs, double) {
  const ForwardResult fw = policy_forward(params_, obs.flatten(), rec_);
  rec_ = fw.rec;
  std::vector<double> action(fw.action_mean.size());
  for (int k = 0; k < fw.action_mean.size(); ++k) action[k] = fw.action_mean(k);
  return action;
}

BandBaselineController::BandBaselineController(const SystemConfig& system,
                                               BandControllerConfig config)
    : band_(system, std::move(config)) {}

void BandBaselineController::reset() { band_.reset(); }

std::vector<double> BandBaselineController::act(const PlantState& state,
                                                const Observation&,
                                                double demand_now_m3s) {
  return band_.action(state, demand_now_m3s);
}

RandomController::RandomController(int n_compressors, std::uint64_t seed)
    : n_(n_compressors), seed_(seed), rng_(seed) {}

void RandomController::reset() { rng_ = Rng(seed_); }

std::vector<double> RandomController::act(const PlantState&,
                                          const Observation&, double) {
  std::vector<double> action(n_);
  for (int k = 0; k < n_; ++k) action[k] = rng_.uniform();
  return action;
}

SimSummary simulate_trace(const Scenario& scenario, Controller& controller,
                          const DemandProfile& profile, int n_steps,
                          std::vector<TrajectoryRow>* rows) {
  if (n_steps <= 0) throw ConfigError("simulate_trace: n_steps must be > 0");
  if (static_cast<int>(profile.samples.size()) <
      n_steps + scenario.horizon()) {
    throw ConfigError("simulate_trace: demand profile too short for n_steps");
  }

  EpisodeConfig episode = scenario.episode;
  episode.episode_length = n_steps;
  Environment env(scenario.system, scenario.reward, episode);
  controller.reset();
  Observation obs = env.reset(profile, scenario.system.p_ref_bar);

  SimSummary summary;
  summary.min_pressure_bar = scenario.system.p_ref_bar;
  summary.max_pressure_bar = scenario.system.p_ref_bar;
  double pressure_sum = 0.0;
  long steps_at_or_below = 0;
  std::vector<double> prev_levels(scenario.n_compressors(), 0.0);

  if (rows != nullptr) {
    rows->clear();
    rows->reserve(n_steps);
  }

  while (!env.done()) {
    const double demand = env.current_demand();
    const std::vector<double> action = controller.act(env.state(), obs, demand);
    const Environment::EnvStep es = env.step(action);

    const double p = es.detail.next.pressure_bar;
    pressure_sum += p;
    summary.max_pressure_bar = std::max(summary.max_pressure_bar, p);
    summary.min_pressure_bar = std::min(summary.min_pressure_bar, p);
    if (p <= scenario.system.p_max_bar) ++steps_at_or_below;

    double power_kw = 0.0;
    for (double pw : es.detail.powers_kw) power_kw += pw;
    summary.total_energy_kwh += power_kw * scenario.system.dt_s / 3600.0;
    summary.total_energy_eur += es.reward.energy_cost;
    summary.total_reward += es.reward.total;
    if (es.reward.switching_penalty > 0.0) {
      summary.switch_violations += static_cast<long>(std::lround(
          es.reward.switching_penalty / scenario.reward.switch_penalty_weight));
    }
    for (int i = 0; i < scenario.n_compressors(); ++i) {
      if (scenario.system.compressors[i].kind == CompressorKind::FixedSpeed &&
          (prev_levels[i] >= 0.5) != (es.detail.next.levels[i] >= 0.5)) {
        ++summary.fixed_speed_switches;
      }
      prev_levels[i] = es.detail.next.levels[i];
    }

    if (rows != nullptr) {
      TrajectoryRow row;
      row.t_s = static_cast<double>(summary.steps) * scenario.system.dt_s;
      row.pressure_bar = p;
      row.demand_m3s = demand;
      row.flows_m3s = es.detail.flows_m3s;
      row.powers_kw = es.detail.powers_kw;
      row.reward = es.reward.total;
      row.energy_cost = es.reward.energy_cost;
      row.pressure_penalty = es.reward.pressure_penalty;
      row.switching_penalty = es.reward.switching_penalty;
      rows->push_back(std::move(row));
    }

    ++summary.steps;
    if (es.detail.terminated) {
      summary.diverged = true;
      break;
    }
    obs = es.obs;
  }

  summary.mean_pressure_bar = pressure_sum / static_cast<double>(summary.steps);
  summary.frac_steps_at_or_below_pmax =
      static_cast<double>(steps_at_or_below) / static_cast<double>(summary.steps);
  return summary;
}

std::vector<double> evaluate_episode_returns(const Scenario& scenario,
                                             Controller& controller,
                                             DemandPattern pattern,
                                             int n_episodes,
                                             std::uint64_t seed) {
  Rng rng(seed);
  Environment env(scenario.system, scenario.reward, scenario.episode);
  std::vector<double> returns;
  returns.reserve(n_episodes);
  for (int e = 0; e < n_episodes; ++e) {
    DemandProfile profile = generate_demand(
        rng.next_u64(), scenario.episode.episode_length + scenario.horizon(),
        pattern, scenario.demand);
    controller.reset();
    Observation obs = env.reset(std::move(profile), rng);
    double ret = 0.0;
    while (!env.done()) {
      const Environment::EnvStep es =
          env.step(controller.act(env.state(), obs, env.current_demand()));
      ret += es.reward.total;
      obs = es.obs;
    }
    returns.push_back(ret);
  }
  return returns;
}

void write_trajectory_csv(const std::string& path,
                          const std::vector<TrajectoryRow>& rows,
                          int n_compressors) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << "t,pressure,demand";
  for (int i = 1; i <= n_compressors; ++i) out << ",flow_c" << i;
  for (int i = 1; i <= n_compressors; ++i) out << ",power_c" << i;
  out << ",reward,energy_cost,pressure_penalty,switching_penalty\n";
  for (const auto& row : rows) {
    out << format_double(row.t_s) << ',' << format_double(row.pressure_bar)
        << ',' << format_double(row.demand_m3s);
    for (double f : row.flows_m3s) out << ',' << format_double(f);
    for (double p : row.powers_kw) out << ',' << format_double(p);
    out << ',' << format_double(row.reward) << ','
        << format_double(row.energy_cost) << ','
        << format_double(row.pressure_penalty) << ','
        << format_double(row.switching_penalty) << '\n';
  }
}

void write_summary_json(const std::string& path, const SimSummary& summary,
                        const std::string& controller_name) {
  nlohmann::json j;
  j["controller"] = controller_name;
  j["steps"] = summary.steps;
  j["total_energy_kwh"] = summary.total_energy_kwh;
  j["total_energy_eur"] = summary.total_energy_eur;
  j["mean_pressure_bar"] = summary.mean_pressure_bar;
  j["max_pressure_bar"] = summary.max_pressure_bar;
  j["min_pressure_bar"] = summary.min_pressure_bar;
  j["frac_steps_at_or_below_pmax"] = summary.frac_steps_at_or_below_pmax;
  j["switch_violations"] = summary.switch_violations;
  j["fixed_speed_switches"] = summary.fixed_speed_switches;
  j["total_reward"] = summary.total_reward;
  j["diverged"] = summary.diverged;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << j.dump(1) << '\n';
}

}  // namespace capsim
