#include "capsim/scenario.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace capsim {

namespace {

using nlohmann::json;

CompressorSpec make_compressor(int id, CompressorKind kind) {
  CompressorSpec spec;
  spec.id = id;
  spec.kind = kind;
  spec.rated_power_kw = 30.0;
  spec.max_flow_m3s = 0.01;
  spec.min_flow_fraction = 0.2;
  // affine curve with a 15% idle offset; stand-in for confidential data
  spec.power_curve_kw = {0.15 * spec.rated_power_kw, 0.85 * spec.rated_power_kw};
  spec.max_switches_per_hour = 4.0;
  return spec;
}

void reject_unknown_keys(const json& obj, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

CompressorKind kind_from_string(const std::string& s) {
  if (s == "fixed" || s == "FixedSpeed") return CompressorKind::FixedSpeed;
  if (s == "variable" || s == "VariableSpeed") return CompressorKind::VariableSpeed;
  throw ConfigError("config: unknown compressor kind '" + s + "'");
}

void apply_compressor_overrides(const json& arr, SystemConfig& system) {
  if (!arr.is_array()) throw ConfigError("config: system.compressors must be an array");
  std::vector<CompressorSpec> specs;
  int id = 0;
  for (const auto& entry : arr) {
    reject_unknown_keys(entry, "system.compressors[" + std::to_string(id) + "]",
                        {"kind", "rated_power_kw", "max_flow_m3s",
                         "min_flow_fraction", "power_curve_kw",
                         "max_switches_per_hour"});
    CompressorSpec spec = make_compressor(id, CompressorKind::VariableSpeed);
    if (entry.contains("kind")) spec.kind = kind_from_string(entry.at("kind").get<std::string>());
    read_field(entry, "rated_power_kw", spec.rated_power_kw);
    read_field(entry, "max_flow_m3s", spec.max_flow_m3s);
    read_field(entry, "min_flow_fraction", spec.min_flow_fraction);
    read_field(entry, "power_curve_kw", spec.power_curve_kw);
    read_field(entry, "max_switches_per_hour", spec.max_switches_per_hour);
    if (!entry.contains("power_curve_kw") && entry.contains("rated_power_kw")) {
      spec.power_curve_kw = {0.15 * spec.rated_power_kw, 0.85 * spec.rated_power_kw};
    }
    specs.push_back(std::move(spec));
    ++id;
  }
  system.compressors = std::move(specs);
}

void apply_overrides(const json& root, Scenario& scenario) {
  // "train" and "explain" belong to the CLI layer and are validated there
  reject_unknown_keys(root, "top level",
                      {"scenario", "system", "reward", "episode", "band",
                       "demand", "train", "explain"});
  if (root.contains("system")) {
    const json& sys = root.at("system");
    reject_unknown_keys(sys, "system",
                        {"compressors", "storage_volume_m3", "p_min_bar",
                         "p_max_bar", "p_ref_bar", "dt_s",
                         "electricity_price_eur_kwh"});
    if (sys.contains("compressors")) apply_compressor_overrides(sys.at("compressors"), scenario.system);
    read_field(sys, "storage_volume_m3", scenario.system.storage_volume_m3);
    read_field(sys, "p_min_bar", scenario.system.p_min_bar);
    read_field(sys, "p_max_bar", scenario.system.p_max_bar);
    read_field(sys, "p_ref_bar", scenario.system.p_ref_bar);
    read_field(sys, "dt_s", scenario.system.dt_s);
    read_field(sys, "electricity_price_eur_kwh", scenario.system.electricity_price_eur_kwh);
  }
  if (root.contains("reward")) {
    const json& rew = root.at("reward");
    reject_unknown_keys(rew, "reward",
                        {"alpha_penalty", "low_pressure_weight",
                         "switch_penalty_weight", "electricity_price_eur_kwh"});
    read_field(rew, "alpha_penalty", scenario.reward.alpha_penalty);
    read_field(rew, "low_pressure_weight", scenario.reward.low_pressure_weight);
    read_field(rew, "switch_penalty_weight", scenario.reward.switch_penalty_weight);
    read_field(rew, "electricity_price_eur_kwh", scenario.reward.electricity_price_eur_kwh);
  }
  if (root.contains("episode")) {
    const json& ep = root.at("episode");
    reject_unknown_keys(ep, "episode",
                        {"episode_length", "horizon", "reset_pressure_lo_bar",
                         "reset_pressure_hi_bar"});
    read_field(ep, "episode_length", scenario.episode.episode_length);
    read_field(ep, "horizon", scenario.episode.horizon);
    read_field(ep, "reset_pressure_lo_bar", scenario.episode.reset_pressure_lo_bar);
    read_field(ep, "reset_pressure_hi_bar", scenario.episode.reset_pressure_hi_bar);
  }
  if (root.contains("band")) {
    const json& band = root.at("band");
    reject_unknown_keys(band, "band",
                        {"p_low_bar", "p_high_bar", "cascade_order", "vs_gain_per_bar"});
    read_field(band, "p_low_bar", scenario.band.p_low_bar);
    read_field(band, "p_high_bar", scenario.band.p_high_bar);
    read_field(band, "cascade_order", scenario.band.cascade_order);
    read_field(band, "vs_gain_per_bar", scenario.band.vs_gain_per_bar);
  }
  if (root.contains("demand")) {
    const json& dem = root.at("demand");
    reject_unknown_keys(dem, "demand",
                        {"ceiling_m3s", "base_fraction", "wave_amplitude_fraction",
                         "wave_period_s", "step_amplitude_fraction",
                         "mean_step_duration_s", "noise_fraction"});
    read_field(dem, "ceiling_m3s", scenario.demand.ceiling_m3s);
    read_field(dem, "base_fraction", scenario.demand.base_fraction);
    read_field(dem, "wave_amplitude_fraction", scenario.demand.wave_amplitude_fraction);
    read_field(dem, "wave_period_s", scenario.demand.wave_period_s);
    read_field(dem, "step_amplitude_fraction", scenario.demand.step_amplitude_fraction);
    read_field(dem, "mean_step_duration_s", scenario.demand.mean_step_duration_s);
    read_field(dem, "noise_fraction", scenario.demand.noise_fraction);
  }
}

}  // namespace

std::vector<std::string> Scenario::feature_labels() const {
  std::vector<std::string> labels;
  labels.push_back("PR");
  if (horizon() == 1) {
    labels.push_back("F");
  } else {
    for (int k = 1; k <= horizon(); ++k) labels.push_back("F" + std::to_string(k));
  }
  for (int i = 1; i <= n_compressors(); ++i) labels.push_back("CL" + std::to_string(i));
  return labels;
}

std::uint64_t Scenario::config_hash() const {
  std::ostringstream os;
  os << name << '|' << n_compressors() << '|' << horizon() << '|'
     << format_double(system.p_ref_bar) << '|'
     << format_double(system.dt_s) << '|'
     << format_double(demand.ceiling_m3s);
  for (const auto& c : system.compressors) {
    os << '|' << (c.kind == CompressorKind::FixedSpeed ? 'F' : 'V') << ':'
       << format_double(c.max_flow_m3s) << ':'
       << format_double(c.min_flow_fraction);
  }
  return fnv1a64(os.str());
}

void Scenario::validate() const {
  system.validate();
  reward.validate();
  band.validate(system);
  if (episode.episode_length <= 0 || episode.horizon <= 0) {
    throw ConfigError("episode_length and horizon must be > 0");
  }
  if (!(demand.ceiling_m3s > 0.0)) {
    throw ConfigError("demand ceiling must be > 0");
  }
}

bool is_preset_name(const std::string& name) {
  return name == "1C1F" || name == "3C1F" || name == "3C3F" || name == "3C5F";
}

Scenario make_scenario(const std::string& preset) {
  if (!is_preset_name(preset)) {
    throw ConfigError("unknown scenario preset '" + preset +
                      "' (expected 1C1F, 3C1F, 3C3F or 3C5F)");
  }
  Scenario s;
  s.name = preset;
  s.system.storage_volume_m3 = 5.0;
  s.system.p_min_bar = 7.0;
  s.system.p_max_bar = 8.2;
  s.system.p_ref_bar = 8.0;
  s.system.dt_s = 5.0;
  s.system.electricity_price_eur_kwh = 0.30;

  if (preset == "1C1F") {
    s.system.compressors = {make_compressor(0, CompressorKind::VariableSpeed)};
    s.episode.horizon = 1;
  } else {
    // one fixed-speed and two variable-speed units
    s.system.compressors = {make_compressor(0, CompressorKind::FixedSpeed),
                            make_compressor(1, CompressorKind::VariableSpeed),
                            make_compressor(2, CompressorKind::VariableSpeed)};
    s.episode.horizon = preset == "3C1F" ? 1 : (preset == "3C3F" ? 3 : 5);
  }
  s.episode.episode_length = 720;

  s.reward = RewardConfig{};
  s.reward.electricity_price_eur_kwh = s.system.electricity_price_eur_kwh;

  s.band.p_low_bar = 7.9;
  s.band.p_high_bar = 8.1;
  s.band.vs_gain_per_bar = 5.0;

  s.demand.ceiling_m3s = s.system.total_max_flow_m3s();
  s.demand.dt_s = s.system.dt_s;
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& preset,
                       const std::string& config_json_path) {
  std::string preset_name = preset;
  json root;
  if (!config_json_path.empty()) {
    std::ifstream in(config_json_path);
    if (!in) throw ConfigError("cannot open config file: " + config_json_path);
    try {
      in >> root;
    } catch (const json::exception& e) {
      throw ConfigError("config file " + config_json_path + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config file must hold a JSON object");
    if (root.contains("scenario")) {
      const std::string from_file = root.at("scenario").get<std::string>();
      if (!preset_name.empty() && preset_name != from_file) {
        throw ConfigError("config file names scenario '" + from_file +
                          "' but --scenario says '" + preset_name + "'");
      }
      preset_name = from_file;
    }
  }
  if (preset_name.empty()) {
    throw ConfigError("no scenario given (use --scenario or a config file)");
  }
  Scenario scenario = make_scenario(preset_name);
  if (!root.is_null()) {
    apply_overrides(root, scenario);
    // keep the mirrored electricity price in sync unless overridden apart
    if (root.contains("system") &&
        root.at("system").contains("electricity_price_eur_kwh") &&
        !(root.contains("reward") &&
          root.at("reward").contains("electricity_price_eur_kwh"))) {
      scenario.reward.electricity_price_eur_kwh =
          scenario.system.electricity_price_eur_kwh;
    }
    if (!(root.contains("demand") && root.at("demand").contains("ceiling_m3s"))) {
      scenario.demand.ceiling_m3s = scenario.system.total_max_flow_m3s();
    }
    scenario.demand.dt_s = scenario.system.dt_s;
  }
  scenario.validate();
  return scenario;
}

}  // namespace capsim
