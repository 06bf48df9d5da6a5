#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsim/baseline.hpp"
#include "capsim/env.hpp"
#include "capsim/plant.hpp"

namespace capsim {

// A fully resolved experiment setup: plant, reward, episode shape, baseline
// band and demand generator defaults. Presets follow the XCYF naming scheme
// (X compressors, Y forecast steps): 1C1F, 3C1F, 3C3F, 3C5F.
struct Scenario {
  std::string name;
  SystemConfig system;
  RewardConfig reward;
  EpisodeConfig episode;
  BandControllerConfig band;
  DemandGenOptions demand;

  int horizon() const { return episode.horizon; }
  int n_compressors() const { return system.n_compressors(); }
  int obs_dim() const { return 1 + horizon() + n_compressors(); }
  int action_dim() const { return n_compressors(); }

  // Feature names in observation order: PR, F or F1..FY, CL1..CLX.
  std::vector<std::string> feature_labels() const;

  // Identity of everything a saved policy depends on.
  std::uint64_t config_hash() const;

  void validate() const;
};

bool is_preset_name(const std::string& name);
Scenario make_scenario(const std::string& preset);

// Preset plus optional JSON override file. Unknown keys anywhere in the
// file are ConfigErrors. An empty preset name requires the file to name one.
Scenario load_scenario(const std::string& preset,
                       const std::string& config_json_path);

}  // namespace capsim
