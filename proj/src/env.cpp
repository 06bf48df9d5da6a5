#include "capsim/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace capsim {

void RewardConfig::validate() const {
  if (alpha_penalty < 0.0 || low_pressure_weight < 0.0 ||
      switch_penalty_weight < 0.0 || electricity_price_eur_kwh < 0.0) {
    throw ConfigError("reward weights must be >= 0");
  }
}

Eigen::VectorXd Observation::flatten() const {
  Eigen::VectorXd v(1 + forecast.size() + levels.size());
  v(0) = pressure_norm;
  v.segment(1, forecast.size()) = forecast;
  v.tail(levels.size()) = levels;
  return v;
}

Observation Observation::unflatten(const Eigen::VectorXd& v, int horizon,
                                   int n_compressors) {
  if (v.size() != 1 + horizon + n_compressors) {
    throw std::invalid_argument("unflatten: vector width mismatch");
  }
  Observation obs;
  obs.pressure_norm = v(0);
  obs.forecast = v.segment(1, horizon);
  obs.levels = v.tail(n_compressors);
  return obs;
}

void DemandProfile::validate() const {
  if (samples.empty()) throw ConfigError("demand profile is empty");
  double max_sample = 0.0;
  for (double s : samples) {
    if (!std::isfinite(s) || s < 0.0) {
      throw ConfigError("demand samples must be finite and >= 0");
    }
    max_sample = std::max(max_sample, s);
  }
  if (!(ceiling > 0.0) || ceiling < max_sample) {
    throw ConfigError("demand ceiling must be > 0 and >= max(samples)");
  }
}

DemandPattern demand_pattern_from_string(const std::string& name) {
  if (name == "DailyWave" || name == "dailywave") return DemandPattern::DailyWave;
  if (name == "StepLoads" || name == "steploads") return DemandPattern::StepLoads;
  if (name == "Mixed" || name == "mixed") return DemandPattern::Mixed;
  throw ConfigError("unknown demand pattern: " + name);
}

std::string to_string(DemandPattern pattern) {
  switch (pattern) {
    case DemandPattern::DailyWave: return "DailyWave";
    case DemandPattern::StepLoads: return "StepLoads";
    case DemandPattern::Mixed: return "Mixed";
  }
  return "?";
}

DemandProfile generate_demand(std::uint64_t seed, int length,
                              DemandPattern pattern,
                              const DemandGenOptions& options) {
  if (length <= 0) throw ConfigError("generate_demand: length must be > 0");
  Rng rng(seed);
  DemandProfile profile;
  profile.ceiling = options.ceiling_m3s;
  profile.samples.resize(length);

  const bool wave = pattern != DemandPattern::StepLoads;
  const bool steps = pattern != DemandPattern::DailyWave;
  const bool noise = pattern == DemandPattern::Mixed;

  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  double step_level = steps ? rng.uniform(0.0, options.step_amplitude_fraction)
                            : 0.0;
  int step_remaining = 0;
  const double mean_steps =
      std::max(1.0, options.mean_step_duration_s / options.dt_s);

  for (int t = 0; t < length; ++t) {
    double value = options.base_fraction;
    if (wave) {
      value += options.wave_amplitude_fraction *
               std::sin(2.0 * M_PI * t * options.dt_s / options.wave_period_s +
                        phase);
    }
    if (steps) {
      if (step_remaining <= 0) {
        step_level = rng.uniform(0.0, options.step_amplitude_fraction);
        step_remaining = 1 + static_cast<int>(rng.uniform(0.5, 1.5) * mean_steps);
      }
      --step_remaining;
      value += step_level;
    }
    if (noise) value += options.noise_fraction * rng.normal();
    profile.samples[t] =
        std::clamp(value, 0.0, 1.0) * options.ceiling_m3s;
  }
  profile.validate();
  return profile;
}

DemandProfile load_demand_csv(const std::string& path, double min_ceiling) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open demand CSV: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  // tolerate a UTF-8 BOM and trailing CR
  if (line.size() >= 3 && line.compare(0, 3, "\xef\xbb\xbf") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp,flow_m3s") {
    throw DataError(path + ": line 1: expected header 'timestamp,flow_m3s'");
  }

  DemandProfile profile;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": expected 'timestamp,flow_m3s'");
    }
    const std::string flow_field = line.substr(comma + 1);
    std::size_t consumed = 0;
    double flow = 0.0;
    try {
      flow = std::stod(flow_field, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != flow_field.size() || !std::isfinite(flow) || flow < 0.0) {
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": bad flow value '" + flow_field + "'");
    }
    profile.samples.push_back(flow);
  }
  if (profile.samples.empty()) throw DataError(path + ": no data rows");
  const double max_sample =
      *std::max_element(profile.samples.begin(), profile.samples.end());
  profile.ceiling = std::max(min_ceiling, max_sample);
  profile.validate();
  return profile;
}

double energy_cost(const std::vector<double>& powers_kw,
                   const RewardConfig& config, double dt_s) {
  double sum = 0.0;
  for (double p : powers_kw) {
    sum += p * (dt_s / 3600.0) * config.electricity_price_eur_kwh;
  }
  return sum;
}

double pressure_penalty(double p_actual_bar, double p_ref_bar, double alpha) {
  return alpha * std::max(0.0, p_actual_bar / p_ref_bar - 1.0);
}

double under_pressure_penalty(double p_actual_bar, double p_min_bar,
                              double weight) {
  return weight * std::max(0.0, 1.0 - p_actual_bar / p_min_bar);
}

SwitchUpdate update_switch_counter(const PlantState& state,
                                   const std::vector<double>& new_levels,
                                   const std::vector<CompressorSpec>& specs,
                                   double dt_s) {
  SwitchUpdate out;
  out.allowance = state.switch_allowance;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].kind != CompressorKind::FixedSpeed) continue;
    const double limit = specs[i].max_switches_per_hour;
    double allowance =
        std::min(limit, out.allowance[i] + limit * dt_s / 3600.0);
    const bool was_on = state.levels[i] >= 0.5;
    const bool now_on = new_levels[i] >= 0.5;
    if (was_on != now_on) {
      if (allowance >= 1.0) {
        allowance -= 1.0;
      } else {
        allowance = 0.0;
        ++out.violations;
      }
    }
    out.allowance[i] = allowance;
  }
  return out;
}

StepResult env_step(const PlantState& state, const std::vector<double>& action,
                    double demand_now_m3s, const SystemConfig& system,
                    const RewardConfig& reward) {
  const auto& specs = system.compressors;
  if (action.size() != specs.size()) {
    throw std::invalid_argument("env_step: action width mismatch");
  }
  if (!(demand_now_m3s >= 0.0) || !std::isfinite(demand_now_m3s)) {
    throw std::domain_error("env_step: demand must be finite and >= 0");
  }

  StepResult result;
  result.demand_m3s = demand_now_m3s;
  result.flows_m3s.resize(specs.size());
  result.powers_kw.resize(specs.size());

  std::vector<double> new_levels(specs.size());
  double supply = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double flow = compressor_flow(specs[i], action[i]);
    result.flows_m3s[i] = flow;
    new_levels[i] = flow / specs[i].max_flow_m3s;
    result.powers_kw[i] = compressor_power(specs[i], new_levels[i]);
    supply += flow;
  }

  const SwitchUpdate switches =
      update_switch_counter(state, new_levels, specs, system.dt_s);

  const double net_volume = (supply - demand_now_m3s) * system.dt_s;
  const double next_pressure = pressure_step(state, net_volume, system);

  result.reward.energy_cost = energy_cost(result.powers_kw, reward, system.dt_s);
  // Overpressure per the reference-ratio rule plus the lower-band boundary
  // term; both evaluated on the post-step pressure.
  result.reward.pressure_penalty =
      pressure_penalty(next_pressure, system.p_ref_bar, reward.alpha_penalty) +
      under_pressure_penalty(next_pressure, system.p_min_bar,
                             reward.low_pressure_weight);
  result.reward.switching_penalty =
      switches.violations * reward.switch_penalty_weight;
  result.reward.total = -(result.reward.energy_cost +
                          result.reward.pressure_penalty +
                          result.reward.switching_penalty);

  result.next.pressure_bar = next_pressure;
  result.next.levels = std::move(new_levels);
  result.next.switch_allowance = switches.allowance;
  result.next.step_index = state.step_index + 1;
  result.terminated = next_pressure < 0.5 * system.p_min_bar ||
                      next_pressure > 1.5 * system.p_max_bar;
  return result;
}

Observation make_observation(const PlantState& state,
                             const DemandProfile& profile, int horizon,
                             double p_ref_bar) {
  const long first = state.step_index;
  if (first < 0 ||
      first + horizon > static_cast<long>(profile.samples.size())) {
    throw std::out_of_range("make_observation: demand profile exhausted");
  }
  Observation obs;
  obs.pressure_norm = (state.pressure_bar - p_ref_bar) / p_ref_bar;
  obs.forecast.resize(horizon);
  for (int k = 0; k < horizon; ++k) {
    obs.forecast(k) = profile.samples[first + k] / profile.ceiling;
  }
  obs.levels = Eigen::Map<const Eigen::VectorXd>(state.levels.data(),
                                                 state.levels.size());
  return obs;
}

Environment::Environment(SystemConfig system, RewardConfig reward,
                         EpisodeConfig episode)
    : system_(std::move(system)), reward_(reward), episode_(episode) {
  system_.validate();
  reward_.validate();
  if (episode_.episode_length <= 0 || episode_.horizon <= 0) {
    throw ConfigError("episode_length and horizon must be > 0");
  }
}

Observation Environment::reset(DemandProfile profile,
                               double initial_pressure_bar) {
  profile.validate();
  if (static_cast<int>(profile.samples.size()) <
      episode_.episode_length + episode_.horizon) {
    throw ConfigError("demand profile shorter than episode_length + horizon");
  }
  profile_ = std::move(profile);
  state_ = initial_plant_state(system_, initial_pressure_bar);
  done_ = false;
  return make_observation(state_, profile_, episode_.horizon, system_.p_ref_bar);
}

Observation Environment::reset(DemandProfile profile, Rng& rng) {
  double lo = episode_.reset_pressure_lo_bar;
  double hi = episode_.reset_pressure_hi_bar;
  if (lo <= 0.0 || hi <= 0.0) {
    lo = system_.p_min_bar;
    hi = system_.p_ref_bar;
  }
  return reset(std::move(profile), rng.uniform(lo, hi));
}

Environment::EnvStep Environment::step(const std::vector<double>& action) {
  if (done_) {
    throw std::logic_error("Environment::step: episode already terminated");
  }
  EnvStep out;
  out.detail = env_step(state_, action, current_demand(), system_, reward_);
  state_ = out.detail.next;
  out.reward = out.detail.reward;
  done_ = out.detail.terminated ||
          state_.step_index >= episode_.episode_length;
  out.done = done_;
  out.obs = make_observation(state_, profile_, episode_.horizon,
                             system_.p_ref_bar);
  return out;
}

double Environment::current_demand() const {
  return profile_.samples.at(state_.step_index);
}

int Environment::obs_dim() const {
  return 1 + episode_.horizon + system_.n_compressors();
}

}  // namespace capsim
