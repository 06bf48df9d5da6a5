#include "capsim/plant.hpp"

#include <cmath>
#include <string>

namespace capsim {

void CompressorSpec::validate() const {
  if (!(max_flow_m3s > 0.0)) {
    throw ConfigError("compressor " + std::to_string(id) +
                      ": max_flow_m3s must be > 0");
  }
  if (!(rated_power_kw > 0.0)) {
    throw ConfigError("compressor " + std::to_string(id) +
                      ": rated_power_kw must be > 0");
  }
  if (power_curve_kw.empty()) {
    throw ConfigError("compressor " + std::to_string(id) +
                      ": power_curve_kw must not be empty");
  }
  const double at_full = evaluate_polynomial(power_curve_kw, 1.0);
  if (std::abs(at_full - rated_power_kw) > 1e-9 * rated_power_kw) {
    throw ConfigError("compressor " + std::to_string(id) +
                      ": power curve at fraction 1.0 (" +
                      std::to_string(at_full) + " kW) does not match rated " +
                      std::to_string(rated_power_kw) + " kW");
  }
  if (kind == CompressorKind::VariableSpeed &&
      !(min_flow_fraction > 0.0 && min_flow_fraction <= 1.0)) {
    throw ConfigError("compressor " + std::to_string(id) +
                      ": min_flow_fraction must be in (0,1]");
  }
  if (kind == CompressorKind::FixedSpeed && max_switches_per_hour < 0.0) {
    throw ConfigError("compressor " + std::to_string(id) +
                      ": max_switches_per_hour must be >= 0");
  }
}

double SystemConfig::total_max_flow_m3s() const {
  double sum = 0.0;
  for (const auto& c : compressors) sum += c.max_flow_m3s;
  return sum;
}

void SystemConfig::validate() const {
  if (compressors.empty()) throw ConfigError("system has no compressors");
  for (const auto& c : compressors) c.validate();
  if (!(storage_volume_m3 > 0.0)) {
    throw ConfigError("storage_volume_m3 must be > 0");
  }
  if (!(dt_s > 0.0)) throw ConfigError("dt_s must be > 0");
  if (!(p_min_bar < p_ref_bar && p_ref_bar <= p_max_bar)) {
    throw ConfigError("pressure limits must satisfy p_min < p_ref <= p_max");
  }
  if (!(p_min_bar > 0.0)) throw ConfigError("p_min_bar must be > 0");
  if (electricity_price_eur_kwh < 0.0) {
    throw ConfigError("electricity_price_eur_kwh must be >= 0");
  }
}

PlantState initial_plant_state(const SystemConfig& config, double pressure_bar) {
  PlantState state;
  state.pressure_bar = pressure_bar;
  state.levels.assign(config.compressors.size(), 0.0);
  state.switch_allowance.resize(config.compressors.size());
  for (std::size_t i = 0; i < config.compressors.size(); ++i) {
    state.switch_allowance[i] =
        config.compressors[i].kind == CompressorKind::FixedSpeed
            ? config.compressors[i].max_switches_per_hour
            : 0.0;
  }
  state.step_index = 0;
  return state;
}

double evaluate_polynomial(const std::vector<double>& coeffs, double x) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double pressure_step(double pressure_bar, double net_volume_m3,
                     double storage_volume_m3) {
  if (!std::isfinite(pressure_bar) || !std::isfinite(net_volume_m3) ||
      !std::isfinite(storage_volume_m3)) {
    throw std::domain_error("pressure_step: non-finite input");
  }
  if (!(pressure_bar > 0.0) || !(storage_volume_m3 > 0.0)) {
    throw std::domain_error("pressure_step: pressure and volume must be > 0");
  }
  return pressure_bar + net_volume_m3 * pressure_bar / storage_volume_m3;
}

double pressure_step(const PlantState& state, double net_volume_m3,
                     const SystemConfig& config) {
  return pressure_step(state.pressure_bar, net_volume_m3,
                       config.storage_volume_m3);
}

double compressor_flow(const CompressorSpec& spec, double setpoint) {
  if (!std::isfinite(setpoint) || setpoint < 0.0 || setpoint > 1.0) {
    throw std::domain_error("compressor_flow: setpoint outside [0,1]");
  }
  if (spec.kind == CompressorKind::FixedSpeed) {
    return setpoint >= 0.5 ? spec.max_flow_m3s : 0.0;
  }
  if (setpoint < spec.min_flow_fraction) return 0.0;
  return setpoint * spec.max_flow_m3s;
}

double compressor_power(const CompressorSpec& spec, double flow_fraction) {
  if (!std::isfinite(flow_fraction) || flow_fraction < 0.0 ||
      flow_fraction > 1.0) {
    throw std::domain_error("compressor_power: flow_fraction outside [0,1]");
  }
  if (flow_fraction == 0.0) return 0.0;
  return evaluate_polynomial(spec.power_curve_kw, flow_fraction);
}

}  // namespace capsim
