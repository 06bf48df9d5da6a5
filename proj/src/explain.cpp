#include "capsim/explain.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace capsim {

BatchVectorModel policy_batch_model(const PolicyParams& params) {
  return [params](const Eigen::MatrixXd& obs_rows) {
    return batch_deterministic_actions(params, obs_rows);
  };
}

VectorModel policy_action_model(const PolicyParams& params) {
  return [params](const Eigen::VectorXd& obs) {
    return deterministic_action(params, obs);
  };
}

GradientModel policy_gradient_model(const PolicyParams& params) {
  return [params](const Eigen::VectorXd& obs) {
    return input_gradient(params, obs);
  };
}

void ExplainConfig::validate() const {
  if (n_background <= 0 || n_test <= 0 || n_saliency_states <= 0 ||
      n_permutations <= 0 || threads <= 0) {
    throw ConfigError("explain counts must be > 0");
  }
}

Eigen::VectorXd ObservationSampler::sample(Rng& rng) const {
  Eigen::VectorXd v(dim());
  v(0) = rng.uniform(pressure_norm_lo, pressure_norm_hi);
  for (int k = 0; k < horizon + n_compressors; ++k) v(1 + k) = rng.uniform();
  return v;
}

Eigen::MatrixXd ObservationSampler::sample_matrix(Rng& rng, int n) const {
  Eigen::MatrixXd m(n, dim());
  for (int i = 0; i < n; ++i) m.row(i) = sample(rng).transpose();
  return m;
}

ObservationSampler ObservationSampler::for_scenario(const Scenario& scenario) {
  ObservationSampler s;
  s.horizon = scenario.horizon();
  s.n_compressors = scenario.n_compressors();
  return s;
}

SweepSpec SweepSpec::defaults(const Scenario& scenario, int grid_points) {
  SweepSpec spec;
  spec.fixed_pressures_bar = {7.9, 8.0, 8.1, 8.2, 8.3};
  double max_unit_flow = 0.0;
  for (const auto& c : scenario.system.compressors) {
    max_unit_flow = std::max(max_unit_flow, c.max_flow_m3s);
  }
  const double hi = 3.0 * max_unit_flow;
  spec.flow_grid_m3s.resize(grid_points);
  for (int i = 0; i < grid_points; ++i) {
    spec.flow_grid_m3s[i] = hi * static_cast<double>(i) / (grid_points - 1);
  }
  spec.levels_template = Eigen::VectorXd::Zero(scenario.n_compressors());
  return spec;
}

std::vector<SweepRow> perturbation_sweep(const VectorModel& model,
                                         const SweepSpec& spec,
                                         const Scenario& scenario) {
  if (!std::is_sorted(spec.flow_grid_m3s.begin(), spec.flow_grid_m3s.end())) {
    throw ConfigError("perturbation_sweep: flow grid must be ascending");
  }
  const double p_ref = scenario.system.p_ref_bar;
  const double ceiling = scenario.demand.ceiling_m3s;
  const int horizon = scenario.horizon();

  std::vector<SweepRow> rows;
  rows.reserve(spec.fixed_pressures_bar.size() * spec.flow_grid_m3s.size());
  for (double pressure : spec.fixed_pressures_bar) {
    for (double flow : spec.flow_grid_m3s) {
      Eigen::VectorXd obs(1 + horizon + spec.levels_template.size());
      obs(0) = (pressure - p_ref) / p_ref;
      obs.segment(1, horizon).setConstant(flow / ceiling);
      obs.tail(spec.levels_template.size()) = spec.levels_template;

      SweepRow row;
      row.pressure_bar = pressure;
      row.flow_m3s = flow;
      row.setpoints = model(obs);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

SensitivityProfile saliency_profile(const GradientModel& model,
                                    const ExplainConfig& config,
                                    const ObservationSampler& sampler,
                                    const std::vector<std::string>& labels) {
  if (config.n_saliency_states <= 0) {
    throw ConfigError("n_saliency_states must be > 0");
  }
  Rng rng(config.seed);
  SensitivityProfile profile;
  profile.labels = labels;
  profile.mean_abs_gradient = Eigen::VectorXd::Zero(sampler.dim());

  for (int i = 0; i < config.n_saliency_states; ++i) {
    const Eigen::VectorXd state = sampler.sample(rng);
    const Eigen::VectorXd grad = model(state);
    if (!grad.allFinite()) {
      ++profile.n_discarded;
      continue;
    }
    profile.mean_abs_gradient += grad.cwiseAbs();
    ++profile.n_samples;
  }
  if (profile.n_discarded * 100 > config.n_saliency_states) {
    throw DataError("saliency_profile: more than 1% of gradients non-finite");
  }
  if (profile.n_samples > 0) {
    profile.mean_abs_gradient /= static_cast<double>(profile.n_samples);
  }
  return profile;
}

namespace {

Eigen::MatrixXd subsample_background(const Eigen::MatrixXd& background,
                                     int subsample) {
  if (subsample <= 0 || subsample >= background.rows()) return background;
  // evenly strided, deterministic subset
  Eigen::MatrixXd out(subsample, background.cols());
  for (int i = 0; i < subsample; ++i) {
    const long idx = static_cast<long>(
        (static_cast<double>(i) * background.rows()) / subsample);
    out.row(i) = background.row(idx);
  }
  return out;
}

// weight of a coalition of size k among F features: k!(F-1-k)!/F!
std::vector<double> shapley_weights(int n_features) {
  std::vector<double> w(n_features);
  for (int k = 0; k < n_features; ++k) {
    double binom = 1.0;  // C(F-1, k)
    for (int i = 0; i < k; ++i) {
      binom *= static_cast<double>(n_features - 1 - i) / static_cast<double>(i + 1);
    }
    w[k] = 1.0 / (static_cast<double>(n_features) * binom);
  }
  return w;
}

// mean model output over the background with the coalition's features pinned
// to the explained state
Eigen::VectorXd coalition_value(const BatchVectorModel& model,
                                const Eigen::VectorXd& state,
                                const Eigen::MatrixXd& background,
                                std::uint32_t mask) {
  Eigen::MatrixXd inputs = background;
  for (int j = 0; j < state.size(); ++j) {
    if (mask & (1u << j)) inputs.col(j).setConstant(state(j));
  }
  return model(inputs).colwise().mean();
}

}  // namespace

AttributionResult shap_exact(const BatchVectorModel& model,
                             const Eigen::VectorXd& state,
                             const Eigen::MatrixXd& background,
                             int background_subsample) {
  const int n_features = static_cast<int>(state.size());
  if (n_features > 12) {
    throw std::invalid_argument(
        "shap_exact: more than 12 features; use shap_sampled instead");
  }
  if (background.cols() != n_features || background.rows() == 0) {
    throw std::invalid_argument("shap_exact: background shape mismatch");
  }
  const Eigen::MatrixXd bg = subsample_background(background, background_subsample);

  const std::uint32_t n_masks = 1u << n_features;
  std::vector<Eigen::VectorXd> value(n_masks);
  for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
    value[mask] = coalition_value(model, state, bg, mask);
  }
  const int n_actions = static_cast<int>(value[0].size());

  const std::vector<double> weights = shapley_weights(n_features);
  AttributionResult result;
  result.phi_per_action = Eigen::MatrixXd::Zero(n_features, n_actions);
  for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
    const double w = weights[std::popcount(mask)];
    for (int j = 0; j < n_features; ++j) {
      if (mask & (1u << j)) continue;
      result.phi_per_action.row(j) +=
          w * (value[mask | (1u << j)] - value[mask]).transpose();
    }
  }
  result.phi = result.phi_per_action.rowwise().sum();
  result.baseline = value[0].sum();
  result.output = value[n_masks - 1].sum();
  result.method = "exact";
  result.sample_count = 0;
  result.stderr_phi = Eigen::VectorXd::Zero(n_features);
  return result;
}

AttributionResult shap_sampled(const BatchVectorModel& model,
                               const Eigen::VectorXd& state,
                               const Eigen::MatrixXd& background,
                               int n_permutations, std::uint64_t seed,
                               int background_subsample) {
  if (n_permutations < 50) {
    throw std::invalid_argument("shap_sampled: need at least 50 permutations");
  }
  const int n_features = static_cast<int>(state.size());
  if (background.cols() != n_features || background.rows() == 0) {
    throw std::invalid_argument("shap_sampled: background shape mismatch");
  }
  const Eigen::MatrixXd bg = subsample_background(background, background_subsample);
  Rng rng(seed);

  const Eigen::VectorXd v_empty = model(bg).colwise().mean();
  const int n_actions = static_cast<int>(v_empty.size());

  Eigen::MatrixXd phi_action_sum = Eigen::MatrixXd::Zero(n_features, n_actions);
  Eigen::VectorXd phi_sum = Eigen::VectorXd::Zero(n_features);
  Eigen::VectorXd phi_sumsq = Eigen::VectorXd::Zero(n_features);

  std::vector<int> order(n_features);
  for (int p = 0; p < n_permutations; ++p) {
    std::iota(order.begin(), order.end(), 0);
    for (int i = n_features - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    }
    Eigen::MatrixXd inputs = bg;
    Eigen::VectorXd v_prev = v_empty;
    for (int j : order) {
      inputs.col(j).setConstant(state(j));
      const Eigen::VectorXd v_cur = model(inputs).colwise().mean();
      const Eigen::VectorXd marginal = v_cur - v_prev;
      phi_action_sum.row(j) += marginal.transpose();
      const double total = marginal.sum();
      phi_sum(j) += total;
      phi_sumsq(j) += total * total;
      v_prev = v_cur;
    }
  }

  AttributionResult result;
  const double n = static_cast<double>(n_permutations);
  result.phi_per_action = phi_action_sum / n;
  result.phi = phi_sum / n;
  result.stderr_phi.resize(n_features);
  for (int j = 0; j < n_features; ++j) {
    const double mean = phi_sum(j) / n;
    const double var =
        std::max(0.0, (phi_sumsq(j) - n * mean * mean) / (n - 1.0));
    result.stderr_phi(j) = std::sqrt(var / n);
  }
  result.baseline = v_empty.sum();
  // f(s): every feature pinned to the state
  {
    Eigen::MatrixXd full(1, n_features);
    full.row(0) = state.transpose();
    result.output = model(full).row(0).sum();
  }
  result.method = "permutation";
  result.sample_count = n_permutations;
  return result;
}

GlobalAttribution global_attribution(const BatchVectorModel& model,
                                     const ExplainConfig& config,
                                     const ObservationSampler& sampler,
                                     const std::vector<std::string>& labels) {
  config.validate();
  Rng bg_rng(fnv1a64("background:" + std::to_string(config.seed)));
  Rng test_rng(fnv1a64("test:" + std::to_string(config.seed)));
  const Eigen::MatrixXd background =
      sampler.sample_matrix(bg_rng, config.n_background);
  const Eigen::MatrixXd tests = sampler.sample_matrix(test_rng, config.n_test);

  GlobalAttribution global;
  global.labels = labels;
  global.states = tests;
  global.per_state_phi.resize(config.n_test, sampler.dim());
  global.per_state_output.resize(config.n_test);
  global.mean_abs_phi = Eigen::VectorXd::Zero(sampler.dim());

  std::vector<AttributionResult> results(config.n_test);
  const int n_threads = std::max(1, config.threads);
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < n_threads; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < config.n_test; i = next.fetch_add(1)) {
        results[i] = shap_exact(model, tests.row(i).transpose(), background,
                                config.background_subsample);
      }
    });
  }
  for (auto& t : pool) t.join();

  for (int i = 0; i < config.n_test; ++i) {
    global.per_state_phi.row(i) = results[i].phi.transpose();
    global.per_state_output(i) = results[i].output;
    global.mean_abs_phi += results[i].phi.cwiseAbs();
  }
  global.mean_abs_phi /= static_cast<double>(config.n_test);
  // the background is shared, so the baseline is identical across states
  global.baseline = results.empty() ? 0.0 : results[0].baseline;
  return global;
}

std::vector<CaseAttribution> case_attribution(const BatchVectorModel& model,
                                              const Scenario& scenario,
                                              const ExplainConfig& config) {
  config.validate();
  Rng bg_rng(fnv1a64("background:" + std::to_string(config.seed)));
  const ObservationSampler sampler = ObservationSampler::for_scenario(scenario);
  const Eigen::MatrixXd background =
      sampler.sample_matrix(bg_rng, config.n_background);

  const double p_ref = scenario.system.p_ref_bar;
  const std::vector<std::pair<std::string, double>> pressures = {
      {"p_min", scenario.system.p_min_bar},
      {"p_nom", scenario.system.p_ref_bar},
      {"p_max", scenario.system.p_max_bar}};
  const std::vector<double> forecasts = {0.0, 0.5, 1.0};

  std::vector<CaseAttribution> cases;
  for (const auto& [label, pressure] : pressures) {
    for (double forecast : forecasts) {
      CaseAttribution c;
      c.pressure_label = label;
      c.pressure_bar = pressure;
      c.forecast_fraction = forecast;
      Eigen::VectorXd obs(sampler.dim());
      obs(0) = (pressure - p_ref) / p_ref;
      obs.segment(1, scenario.horizon()).setConstant(forecast);
      obs.tail(scenario.n_compressors()).setConstant(0.5);
      c.state = obs;
      c.result = shap_exact(model, obs, background, config.background_subsample);

      c.waterfall_order.resize(sampler.dim());
      std::iota(c.waterfall_order.begin(), c.waterfall_order.end(), 0);
      std::stable_sort(c.waterfall_order.begin(), c.waterfall_order.end(),
                       [&](int a, int b) {
                         return std::abs(c.result.phi(a)) > std::abs(c.result.phi(b));
                       });
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

std::vector<TimeResolvedRow> time_resolved_attribution(
    const BatchVectorModel& model, TimeSweep sweep, int length,
    const Scenario& scenario, const ExplainConfig& config) {
  if (length <= 0) throw ConfigError("time_resolved_attribution: length must be > 0");
  Rng bg_rng(fnv1a64("background:" + std::to_string(config.seed)));
  const ObservationSampler sampler = ObservationSampler::for_scenario(scenario);
  const Eigen::MatrixXd background =
      sampler.sample_matrix(bg_rng, config.n_background);

  const double p_ref = scenario.system.p_ref_bar;
  const double p_min = scenario.system.p_min_bar;
  const double p_max = scenario.system.p_max_bar;

  std::vector<TimeResolvedRow> rows;
  rows.reserve(length);
  for (int t = 0; t < length; ++t) {
    const double phase = static_cast<double>(t) / std::max(1, length - 1);
    double demand_fraction = 0.5;
    double pressure = p_ref;
    if (sweep == TimeSweep::DemandSweepConstP) {
      // hold low, ramp up, hold high, ramp down, hold low
      if (phase < 0.2) {
        demand_fraction = 0.1;
      } else if (phase < 0.4) {
        demand_fraction = 0.1 + 0.8 * (phase - 0.2) / 0.2;
      } else if (phase < 0.6) {
        demand_fraction = 0.9;
      } else if (phase < 0.8) {
        demand_fraction = 0.9 - 0.8 * (phase - 0.6) / 0.2;
      } else {
        demand_fraction = 0.1;
      }
    } else {
      const double mid = 0.5 * (p_min + p_max);
      const double half = 0.5 * (p_max - p_min);
      pressure = mid + half * std::sin(2.0 * M_PI * 2.0 * phase);
    }

    Eigen::VectorXd obs(sampler.dim());
    obs(0) = (pressure - p_ref) / p_ref;
    obs.segment(1, scenario.horizon()).setConstant(demand_fraction);
    obs.tail(scenario.n_compressors()).setConstant(0.5);

    TimeResolvedRow row;
    row.t = t;
    row.excitation =
        sweep == TimeSweep::DemandSweepConstP ? demand_fraction : pressure;
    row.phi = shap_exact(model, obs, background, config.background_subsample).phi;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- writers ----

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     int n_compressors) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << "pressure_bar,flow_m3s";
  for (int i = 1; i <= n_compressors; ++i) out << ",setpoint_c" << i;
  out << '\n';
  for (const auto& row : rows) {
    out << format_double(row.pressure_bar) << ',' << format_double(row.flow_m3s);
    for (int i = 0; i < row.setpoints.size(); ++i) {
      out << ',' << format_double(row.setpoints(i));
    }
    out << '\n';
  }
}

void write_saliency_csv(const std::string& path,
                        const SensitivityProfile& profile) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << "feature,label,mean_abs_gradient\n";
  for (int j = 0; j < profile.mean_abs_gradient.size(); ++j) {
    out << j << ',' << profile.labels[j] << ','
        << format_double(profile.mean_abs_gradient(j)) << '\n';
  }
}

void write_global_csv(const std::string& path, const GlobalAttribution& global,
                      const SensitivityProfile& saliency) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  // both columns additionally normalized to unit maximum for the
  // side-by-side comparison plot
  const double phi_max = global.mean_abs_phi.maxCoeff();
  const double sal_max = saliency.mean_abs_gradient.maxCoeff();
  out << "feature,label,mean_abs_phi,mean_abs_phi_norm,saliency,saliency_norm\n";
  for (int j = 0; j < global.mean_abs_phi.size(); ++j) {
    const double phi_norm =
        phi_max > 0.0 ? global.mean_abs_phi(j) / phi_max : 0.0;
    const double sal_norm =
        sal_max > 0.0 ? saliency.mean_abs_gradient(j) / sal_max : 0.0;
    out << j << ',' << global.labels[j] << ','
        << format_double(global.mean_abs_phi(j)) << ','
        << format_double(phi_norm) << ','
        << format_double(saliency.mean_abs_gradient(j)) << ','
        << format_double(sal_norm) << '\n';
  }
}

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace

void write_pattern_json(const std::string& path, const GlobalAttribution& global,
                        const std::string& method) {
  nlohmann::json records = nlohmann::json::array();
  for (int i = 0; i < global.states.rows(); ++i) {
    nlohmann::json rec;
    rec["state"] = vector_to_json(global.states.row(i).transpose());
    rec["features"] = global.labels;
    rec["phi"] = vector_to_json(global.per_state_phi.row(i).transpose());
    rec["baseline"] = global.baseline;
    rec["output"] = global.per_state_output(i);
    rec["method"] = method;
    records.push_back(std::move(rec));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << records.dump(1) << '\n';
}

void write_case_json(const std::string& path,
                     const std::vector<CaseAttribution>& cases,
                     const std::vector<std::string>& labels) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& c : cases) {
    nlohmann::json rec;
    rec["pressure_label"] = c.pressure_label;
    rec["pressure_bar"] = c.pressure_bar;
    rec["forecast_fraction"] = c.forecast_fraction;
    rec["state"] = vector_to_json(c.state);
    rec["features"] = labels;
    rec["phi"] = vector_to_json(c.result.phi);
    rec["baseline"] = c.result.baseline;
    rec["output"] = c.result.output;
    rec["method"] = c.result.method;
    rec["waterfall_order"] = c.waterfall_order;
    records.push_back(std::move(rec));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << records.dump(1) << '\n';
}

void write_time_csv(const std::string& path,
                    const std::vector<TimeResolvedRow>& rows,
                    const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << "t,excitation";
  for (const auto& label : labels) out << ",phi_" << label;
  out << '\n';
  for (const auto& row : rows) {
    out << row.t << ',' << format_double(row.excitation);
    for (int j = 0; j < row.phi.size(); ++j) {
      out << ',' << format_double(row.phi(j));
    }
    out << '\n';
  }
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double pearson_correlation(const std::vector<double>& x,
                           const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson_correlation: need matched series");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman_correlation(const std::vector<double>& x,
                            const std::vector<double>& y) {
  return pearson_correlation(ranks_with_ties(x), ranks_with_ties(y));
}

}  // namespace capsim
