#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "capsim/evaluate.hpp"
#include "capsim/explain.hpp"
#include "capsim/ppo.hpp"
#include "capsim/scenario.hpp"

namespace {

constexpr const char* kToolVersion = "capsim 0.1.0";

using capsim::ConfigError;

struct CommonArgs {
  std::string scenario;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::string policy_path;
  std::string demand = "synthetic:Mixed";
  int iterations = -1;
  int workers = -1;
};

capsim::Scenario resolve_scenario(const CommonArgs& args) {
  return capsim::load_scenario(args.scenario, args.config_path);
}

// "synthetic:PATTERN" or "csv:PATH"
capsim::DemandProfile resolve_demand(const std::string& spec,
                                     const capsim::Scenario& scenario,
                                     std::uint64_t seed, int length) {
  if (spec.rfind("synthetic:", 0) == 0) {
    const auto pattern = capsim::demand_pattern_from_string(spec.substr(10));
    return capsim::generate_demand(seed, length, pattern, scenario.demand);
  }
  if (spec.rfind("csv:", 0) == 0) {
    return capsim::load_demand_csv(spec.substr(4), scenario.demand.ceiling_m3s);
  }
  throw ConfigError("--demand must be 'synthetic:PATTERN' or 'csv:PATH'");
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const std::string& out_dir, const capsim::Scenario& scenario,
                    std::uint64_t seed, const std::string& command,
                    const std::vector<std::string>& artifacts,
                    double wall_seconds) {
  nlohmann::json j;
  j["scenario"] = scenario.name;
  j["config_hash"] = scenario.config_hash();
  j["seed"] = seed;
  j["command"] = command;
  j["artifacts"] = artifacts;
  j["tool_version"] = kToolVersion;
  j["created_utc"] = iso_timestamp();
  j["wall_seconds"] = wall_seconds;
  std::ofstream out(out_dir + "/manifest.json", std::ios::trunc);
  if (!out) throw capsim::DataError("cannot write manifest in " + out_dir);
  out << j.dump(1) << '\n';
}

capsim::TrainConfig train_config_from_json(const std::string& config_path) {
  capsim::TrainConfig config;
  if (config_path.empty()) return config;
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file: " + config_path);
  nlohmann::json root;
  in >> root;
  if (!root.contains("train")) return config;
  const auto& t = root.at("train");
  const std::vector<std::string> allowed = {
      "learning_rate", "gamma", "gae_lambda", "clip", "kl_coeff",
      "entropy_coeff", "vf_coeff", "grad_clip", "rollout_workers",
      "steps_per_iteration", "minibatch_size", "epochs_per_iteration",
      "max_iterations", "early_stop_patience", "bptt_chunk",
      "checkpoint_iteration", "demand_pattern"};
  for (const auto& item : t.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError("config: unknown key '" + item.key() + "' in train");
    }
  }
  auto get = [&](const char* key, auto& out_value) {
    if (t.contains(key)) out_value = t.at(key).get<std::decay_t<decltype(out_value)>>();
  };
  get("learning_rate", config.learning_rate);
  get("gamma", config.gamma);
  get("gae_lambda", config.gae_lambda);
  get("clip", config.clip);
  get("kl_coeff", config.kl_coeff);
  get("entropy_coeff", config.entropy_coeff);
  get("vf_coeff", config.vf_coeff);
  get("grad_clip", config.grad_clip);
  get("rollout_workers", config.rollout_workers);
  get("steps_per_iteration", config.steps_per_iteration);
  get("minibatch_size", config.minibatch_size);
  get("epochs_per_iteration", config.epochs_per_iteration);
  get("max_iterations", config.max_iterations);
  get("early_stop_patience", config.early_stop_patience);
  get("bptt_chunk", config.bptt_chunk);
  get("checkpoint_iteration", config.checkpoint_iteration);
  if (t.contains("demand_pattern")) {
    config.demand_pattern = capsim::demand_pattern_from_string(
        t.at("demand_pattern").get<std::string>());
  }
  return config;
}

capsim::ExplainConfig explain_config_from_json(const std::string& config_path,
                                               std::uint64_t seed) {
  capsim::ExplainConfig config;
  config.seed = seed;
  config.background_subsample = 64;
  if (config_path.empty()) return config;
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file: " + config_path);
  nlohmann::json root;
  in >> root;
  if (!root.contains("explain")) return config;
  const auto& e = root.at("explain");
  const std::vector<std::string> allowed = {
      "n_background", "n_test", "n_saliency_states", "n_permutations",
      "background_subsample", "threads", "time_length"};
  for (const auto& item : e.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError("config: unknown key '" + item.key() + "' in explain");
    }
  }
  auto get = [&](const char* key, auto& out_value) {
    if (e.contains(key)) out_value = e.at(key).get<std::decay_t<decltype(out_value)>>();
  };
  get("n_background", config.n_background);
  get("n_test", config.n_test);
  get("n_saliency_states", config.n_saliency_states);
  get("n_permutations", config.n_permutations);
  get("background_subsample", config.background_subsample);
  get("threads", config.threads);
  return config;
}

int cmd_simulate(const CommonArgs& args, const std::string& controller_kind,
                 int steps) {
  const auto start = std::chrono::steady_clock::now();
  const capsim::Scenario scenario = resolve_scenario(args);
  const int n_steps = steps > 0 ? steps : scenario.episode.episode_length;
  const capsim::DemandProfile profile = resolve_demand(
      args.demand, scenario, args.seed, n_steps + scenario.horizon());

  std::unique_ptr<capsim::Controller> controller;
  if (controller_kind == "baseline") {
    controller = std::make_unique<capsim::BandBaselineController>(
        scenario.system, scenario.band);
  } else if (controller_kind == "random") {
    controller = std::make_unique<capsim::RandomController>(
        scenario.n_compressors(), args.seed);
  } else if (controller_kind == "policy") {
    if (args.policy_path.empty()) {
      throw ConfigError("--controller policy requires --policy <file>");
    }
    controller = std::make_unique<capsim::PolicyController>(
        capsim::load_params(args.policy_path, scenario.config_hash()));
  } else {
    throw ConfigError("unknown controller '" + controller_kind + "'");
  }

  std::filesystem::create_directories(args.out_dir);
  std::vector<capsim::TrajectoryRow> rows;
  const capsim::SimSummary summary =
      capsim::simulate_trace(scenario, *controller, profile, n_steps, &rows);

  const std::string traj_path = args.out_dir + "/trajectory.csv";
  const std::string summary_path = args.out_dir + "/summary.json";
  capsim::write_trajectory_csv(traj_path, rows, scenario.n_compressors());
  capsim::write_summary_json(summary_path, summary, controller->name());
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(args.out_dir, scenario, args.seed, "simulate",
                 {traj_path, summary_path}, wall);

  std::cout << "simulate " << scenario.name << " controller=" << controller_kind
            << " steps=" << summary.steps
            << " energy_kwh=" << summary.total_energy_kwh
            << " mean_p=" << summary.mean_pressure_bar
            << " max_p=" << summary.max_pressure_bar
            << (summary.diverged ? " DIVERGED" : "") << '\n';
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  const capsim::Scenario scenario = resolve_scenario(args);
  capsim::TrainConfig config = train_config_from_json(args.config_path);
  if (args.iterations >= 0) config.max_iterations = args.iterations;
  if (args.workers > 0) config.rollout_workers = args.workers;
  if (args.demand.rfind("synthetic:", 0) == 0) {
    config.demand_pattern =
        capsim::demand_pattern_from_string(args.demand.substr(10));
  } else if (args.demand != "synthetic:Mixed") {
    throw ConfigError("training demand must be synthetic:PATTERN");
  }

  std::filesystem::create_directories(args.out_dir);
  const capsim::TrainResult result =
      capsim::train(scenario, config, args.seed, args.out_dir);

  std::vector<std::string> artifacts = {result.curve_path,
                                        result.checkpoint_final_path};
  if (!result.checkpoint_early_path.empty()) {
    artifacts.push_back(result.checkpoint_early_path);
  }
  if (!result.checkpoint_best_path.empty()) {
    artifacts.push_back(result.checkpoint_best_path);
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(args.out_dir, scenario, args.seed, "train", artifacts, wall);

  const double final_reward =
      result.curve.empty() ? 0.0 : result.curve.back().mean_reward;
  std::cout << "train " << scenario.name << " iterations="
            << result.curve.size() << " mean_reward=" << final_reward
            << (result.stopped_early ? " (early stop)" : "")
            << " divergences=" << result.total_divergences << '\n';
  return 0;
}

int cmd_explain(const CommonArgs& args, const std::string& kind,
                int time_length) {
  const auto start = std::chrono::steady_clock::now();
  const capsim::Scenario scenario = resolve_scenario(args);
  if (args.policy_path.empty()) {
    throw ConfigError("explain requires --policy <file>");
  }
  const capsim::PolicyParams params =
      capsim::load_params(args.policy_path, scenario.config_hash());
  const capsim::ExplainConfig config =
      explain_config_from_json(args.config_path, args.seed);
  const auto sampler = capsim::ObservationSampler::for_scenario(scenario);
  const auto labels = scenario.feature_labels();

  std::filesystem::create_directories(args.out_dir);
  std::vector<std::string> artifacts;

  if (kind == "perturb") {
    const auto spec = capsim::SweepSpec::defaults(scenario);
    const auto rows = capsim::perturbation_sweep(
        capsim::policy_action_model(params), spec, scenario);
    const std::string path = args.out_dir + "/sweep.csv";
    capsim::write_sweep_csv(path, rows, scenario.n_compressors());
    artifacts.push_back(path);
  } else if (kind == "saliency") {
    const auto profile = capsim::saliency_profile(
        capsim::policy_gradient_model(params), config, sampler, labels);
    const std::string path = args.out_dir + "/saliency.csv";
    capsim::write_saliency_csv(path, profile);
    artifacts.push_back(path);
  } else if (kind == "shap-global") {
    const auto global = capsim::global_attribution(
        capsim::policy_batch_model(params), config, sampler, labels);
    const auto saliency = capsim::saliency_profile(
        capsim::policy_gradient_model(params), config, sampler, labels);
    const std::string path = args.out_dir + "/shap_global.csv";
    capsim::write_global_csv(path, global, saliency);
    artifacts.push_back(path);
  } else if (kind == "shap-pattern") {
    const auto global = capsim::global_attribution(
        capsim::policy_batch_model(params), config, sampler, labels);
    const std::string path = args.out_dir + "/shap_pattern.json";
    capsim::write_pattern_json(path, global, "exact");
    artifacts.push_back(path);
  } else if (kind == "shap-case") {
    const auto cases = capsim::case_attribution(
        capsim::policy_batch_model(params), scenario, config);
    const std::string path = args.out_dir + "/shap_case.json";
    capsim::write_case_json(path, cases, labels);
    artifacts.push_back(path);
  } else if (kind == "shap-time") {
    const auto demand_rows = capsim::time_resolved_attribution(
        capsim::policy_batch_model(params), capsim::TimeSweep::DemandSweepConstP,
        time_length, scenario, config);
    const auto pressure_rows = capsim::time_resolved_attribution(
        capsim::policy_batch_model(params), capsim::TimeSweep::PressureSweepConstD,
        time_length, scenario, config);
    const std::string demand_path = args.out_dir + "/shap_time_demand.csv";
    const std::string pressure_path = args.out_dir + "/shap_time_pressure.csv";
    capsim::write_time_csv(demand_path, demand_rows, labels);
    capsim::write_time_csv(pressure_path, pressure_rows, labels);
    artifacts.push_back(demand_path);
    artifacts.push_back(pressure_path);
  } else {
    throw ConfigError("unknown explain kind '" + kind + "'");
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(args.out_dir, scenario, args.seed, "explain " + kind,
                 artifacts, wall);
  std::cout << "explain " << kind << " -> " << args.out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compressed-air plant simulation, PPO control and policy attribution"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string controller_kind = "baseline";
  std::string explain_kind;
  int steps = -1;
  int time_length = 240;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", args.scenario, "preset: 1C1F, 3C1F, 3C3F, 3C5F");
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--seed", args.seed, "random seed");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--policy", args.policy_path, "policy parameter file");
    cmd->add_option("--demand", args.demand, "synthetic:PATTERN or csv:PATH");
    cmd->add_option("--iterations", args.iterations, "training iterations");
    cmd->add_option("--workers", args.workers, "rollout workers");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "run a controller over a demand trace");
  add_common(simulate);
  simulate->add_option("--controller", controller_kind, "baseline | random | policy");
  simulate->add_option("--steps", steps, "trace length in steps");

  CLI::App* train = app.add_subcommand("train", "train the PPO policy");
  add_common(train);

  CLI::App* explain = app.add_subcommand("explain", "run an explainability analysis");
  add_common(explain);
  explain
      ->add_option("kind", explain_kind,
                   "perturb | saliency | shap-global | shap-pattern | shap-case | shap-time")
      ->required();
  explain->add_option("--time-length", time_length, "steps for shap-time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(args, controller_kind, steps);
    if (train->parsed()) return cmd_train(args);
    if (explain->parsed()) return cmd_explain(args, explain_kind, time_length);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
