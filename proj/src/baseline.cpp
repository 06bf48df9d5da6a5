#include "capsim/baseline.hpp"

#include <algorithm>
#include <cmath>

namespace capsim {

void BandControllerConfig::validate(const SystemConfig& system) const {
  if (!(system.p_min_bar <= p_low_bar && p_low_bar < p_high_bar &&
        p_high_bar <= system.p_max_bar)) {
    throw ConfigError("band controller requires p_min <= p_low < p_high <= p_max");
  }
  if (vs_gain_per_bar < 0.0) throw ConfigError("vs_gain_per_bar must be >= 0");
  if (!cascade_order.empty()) {
    if (static_cast<int>(cascade_order.size()) != system.n_compressors()) {
      throw ConfigError("cascade_order must list every compressor once");
    }
    std::vector<int> sorted = cascade_order;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < static_cast<int>(sorted.size()); ++i) {
      if (sorted[i] != i) {
        throw ConfigError("cascade_order must be a permutation of 0..N-1");
      }
    }
  }
}

BandController::BandController(const SystemConfig& system,
                               BandControllerConfig config)
    : system_(system), config_(std::move(config)) {
  config_.validate(system_);
  order_ = config_.cascade_order;
  if (order_.empty()) {
    // variable-speed units trim first; fixed-speed units engage last
    for (std::size_t i = 0; i < system_.compressors.size(); ++i) {
      if (system_.compressors[i].kind == CompressorKind::VariableSpeed) {
        order_.push_back(static_cast<int>(i));
      }
    }
    for (std::size_t i = 0; i < system_.compressors.size(); ++i) {
      if (system_.compressors[i].kind == CompressorKind::FixedSpeed) {
        order_.push_back(static_cast<int>(i));
      }
    }
  }
  reset();
}

void BandController::reset() {
  fixed_on_.assign(system_.compressors.size(), false);
}

std::vector<double> BandController::action(const PlantState& state,
                                           double demand_estimate_m3s) {
  const double p = state.pressure_bar;
  const double p_mid = 0.5 * (config_.p_low_bar + config_.p_high_bar);
  std::vector<double> setpoints(system_.compressors.size(), 0.0);

  if (p >= config_.p_high_bar) {
    reset();
    return setpoints;
  }

  // Fixed-speed hysteresis: drop out once pressure recovers past mid-band.
  for (std::size_t i = 0; i < system_.compressors.size(); ++i) {
    if (system_.compressors[i].kind == CompressorKind::FixedSpeed &&
        fixed_on_[i] && p >= p_mid) {
      fixed_on_[i] = false;
    }
  }

  const double in_band_fraction =
      std::clamp(config_.vs_gain_per_bar * (config_.p_high_bar - p), 0.0, 1.0);

  if (p < config_.p_low_bar) {
    // Engage down the cascade until the projected supply covers demand;
    // the first unit always runs to arrest the drop.
    double supply = 0.0;
    bool first = true;
    for (int idx : order_) {
      if (!first && supply >= demand_estimate_m3s) break;
      first = false;
      setpoints[idx] = 1.0;
      supply += system_.compressors[idx].max_flow_m3s;
      if (system_.compressors[idx].kind == CompressorKind::FixedSpeed) {
        fixed_on_[idx] = true;
      }
    }
    // Units already latched on by hysteresis keep running.
    for (std::size_t i = 0; i < fixed_on_.size(); ++i) {
      if (fixed_on_[i]) setpoints[i] = 1.0;
    }
    return setpoints;
  }

  // Inside the band: variable-speed units track proportional output,
  // latched fixed-speed units ride until mid-band.
  for (std::size_t i = 0; i < system_.compressors.size(); ++i) {
    if (system_.compressors[i].kind == CompressorKind::VariableSpeed) {
      setpoints[i] = in_band_fraction;
    } else if (fixed_on_[i]) {
      setpoints[i] = 1.0;
    }
  }
  return setpoints;
}

}  // namespace capsim
