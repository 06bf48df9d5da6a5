#pragma once

#include <vector>

#include "capsim/common.hpp"

namespace capsim {

enum class CompressorKind { FixedSpeed, VariableSpeed };

// Static description of one compressor. Fixed-speed units deliver either
// zero or max_flow_m3s; variable-speed units run anywhere between
// min_flow_fraction and 1.0 of max_flow_m3s.
struct CompressorSpec {
  int id = 0;
  CompressorKind kind = CompressorKind::VariableSpeed;
  double rated_power_kw = 30.0;
  double max_flow_m3s = 0.025;
  double min_flow_fraction = 0.2;  // lowest stable variable-speed output
  // Electrical power in kW as a polynomial in flow fraction,
  // coefficients in ascending order. Must hit rated_power_kw at fraction 1.
  std::vector<double> power_curve_kw;
  double max_switches_per_hour = 4.0;  // fixed-speed only

  void validate() const;  // throws ConfigError
};

struct SystemConfig {
  std::vector<CompressorSpec> compressors;
  double storage_volume_m3 = 5.0;
  double p_min_bar = 7.0;   // lower bound of the permissible band
  double p_max_bar = 8.2;   // hard upper limit
  double p_ref_bar = 8.0;   // reference pressure for the overpressure penalty
  double dt_s = 5.0;
  double electricity_price_eur_kwh = 0.30;

  int n_compressors() const { return static_cast<int>(compressors.size()); }
  double total_max_flow_m3s() const;
  void validate() const;  // throws ConfigError
};

struct PlantState {
  double pressure_bar = 8.0;
  std::vector<double> levels;            // realized flow fraction per unit
  std::vector<double> switch_allowance;  // rolling budget, fixed-speed only
  long step_index = 0;
};

PlantState initial_plant_state(const SystemConfig& config, double pressure_bar);

double evaluate_polynomial(const std::vector<double>& coeffs, double x);

// Tank pressure after exchanging net_volume_m3 of air at tank conditions.
// Throws std::domain_error on non-finite or non-physical inputs.
double pressure_step(double pressure_bar, double net_volume_m3,
                     double storage_volume_m3);
double pressure_step(const PlantState& state, double net_volume_m3,
                     const SystemConfig& config);

// Volumetric output for a setpoint in [0,1]. Fixed-speed units switch on at
// 0.5; variable-speed units deliver nothing below their stable minimum.
// Setpoints outside [0,1] throw std::domain_error, never clamp.
double compressor_flow(const CompressorSpec& spec, double setpoint);

// Electrical power at a realized flow fraction. A stopped unit draws zero.
double compressor_power(const CompressorSpec& spec, double flow_fraction);

}  // namespace capsim
