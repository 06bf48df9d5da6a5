#pragma once

#include <vector>

#include "capsim/plant.hpp"

namespace capsim {

// Pressure-band cascade controller used as the comparison reference.
struct BandControllerConfig {
  double p_low_bar = 7.9;   // engage below this
  double p_high_bar = 8.1;  // everything off above this
  std::vector<int> cascade_order;  // compressor indices by priority; empty = 0..N-1
  double vs_gain_per_bar = 5.0;    // variable-speed fraction per bar of band headroom

  void validate(const SystemConfig& system) const;
};

// Carries one bit of hysteresis memory per fixed-speed unit: a unit engaged
// below p_low stays on until the pressure recovers past the band midpoint,
// i.e. an on/off cycle requires a swing of (p_high - p_low)/2.
class BandController {
 public:
  BandController(const SystemConfig& system, BandControllerConfig config);

  void reset();
  std::vector<double> action(const PlantState& state, double demand_estimate_m3s);

  const BandControllerConfig& config() const { return config_; }

 private:
  SystemConfig system_;
  BandControllerConfig config_;
  std::vector<int> order_;
  std::vector<bool> fixed_on_;
};

}  // namespace capsim
