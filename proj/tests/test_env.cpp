#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "capsim/env.hpp"
#include "capsim/scenario.hpp"

using namespace capsim;

namespace {

Scenario scenario_1c1f() { return make_scenario("1C1F"); }
Scenario scenario_3c1f() { return make_scenario("3C1F"); }

RewardConfig reward_with_price(double price) {
  RewardConfig config;
  config.electricity_price_eur_kwh = price;
  return config;
}

}  // namespace

TEST_CASE("energy_cost hand cases") {
  const RewardConfig config = reward_with_price(0.30);
  CHECK(energy_cost({0.0, 0.0, 0.0}, config, 5.0) == 0.0);
  CHECK(energy_cost({30.0}, config, 5.0) == doctest::Approx(0.0125).epsilon(1e-12));
  CHECK(energy_cost({30.0, 15.0}, config, 5.0) ==
        doctest::Approx(0.01875).epsilon(1e-12));
}

TEST_CASE("pressure_penalty hand cases") {
  CHECK(pressure_penalty(8.0, 8.0, 1.0) == 0.0);
  CHECK(pressure_penalty(8.4, 8.0, 1.0) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(pressure_penalty(7.5, 8.0, 10.0) == 0.0);
}

TEST_CASE("under_pressure_penalty") {
  CHECK(under_pressure_penalty(7.0, 7.0, 5.0) == 0.0);
  CHECK(under_pressure_penalty(7.5, 7.0, 5.0) == 0.0);
  CHECK(under_pressure_penalty(6.3, 7.0, 1.0) ==
        doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("switch counter refill and transitions") {
  const Scenario s = scenario_3c1f();  // compressor 0 is fixed-speed
  const double refill = 4.0 * 5.0 / 3600.0;

  PlantState state = initial_plant_state(s.system, 8.0);

  SUBCASE("no transition refills") {
    state.switch_allowance[0] = 2.0;
    state.levels[0] = 0.0;
    const auto upd = update_switch_counter(state, {0.0, 0.5, 0.5},
                                           s.system.compressors, 5.0);
    CHECK(upd.allowance[0] == doctest::Approx(2.0 + refill).epsilon(1e-14));
    CHECK(upd.violations == 0);
  }

  SUBCASE("transition with budget") {
    state.switch_allowance[0] = 1.5;
    state.levels[0] = 0.0;
    const auto upd = update_switch_counter(state, {1.0, 0.5, 0.5},
                                           s.system.compressors, 5.0);
    CHECK(upd.allowance[0] == doctest::Approx(0.5 + refill).epsilon(1e-14));
    CHECK(upd.violations == 0);
  }

  SUBCASE("transition without budget is a violation") {
    state.switch_allowance[0] = 0.3;
    state.levels[0] = 1.0;
    const auto upd = update_switch_counter(state, {0.0, 0.5, 0.5},
                                           s.system.compressors, 5.0);
    CHECK(upd.allowance[0] == 0.0);
    CHECK(upd.violations == 1);
  }

  SUBCASE("allowance caps at the hourly limit") {
    state.switch_allowance[0] = 4.0;
    state.levels[0] = 0.0;
    const auto upd = update_switch_counter(state, {0.0, 0.5, 0.5},
                                           s.system.compressors, 5.0);
    CHECK(upd.allowance[0] == 4.0);
  }
}

TEST_CASE("env_step examples") {
  const Scenario s = scenario_1c1f();

  SUBCASE("zero action, zero demand") {
    PlantState state = initial_plant_state(s.system, 7.8);
    const auto result = env_step(state, {0.0}, 0.0, s.system, s.reward);
    CHECK(result.next.pressure_bar == 7.8);
    CHECK(result.reward.energy_cost == 0.0);
  }

  SUBCASE("single variable unit at full output") {
    SystemConfig sys = s.system;
    sys.compressors[0].max_flow_m3s = 0.05;
    PlantState state = initial_plant_state(sys, 7.0);
    const auto result = env_step(state, {1.0}, 0.0, sys, s.reward);
    CHECK(result.next.pressure_bar == doctest::Approx(7.35).epsilon(1e-12));
  }

  SUBCASE("supply equals demand leaves pressure unchanged") {
    PlantState state = initial_plant_state(s.system, 7.9);
    const double flow = compressor_flow(s.system.compressors[0], 0.8);
    const auto result = env_step(state, {0.8}, flow, s.system, s.reward);
    CHECK(result.next.pressure_bar == 7.9);
  }
}

TEST_CASE("reward identity is exact on random steps") {
  const Scenario s = scenario_3c1f();
  Rng rng(11);
  PlantState state = initial_plant_state(s.system, 7.8);
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> action = {rng.uniform(), rng.uniform(), rng.uniform()};
    const double demand = rng.uniform(0.0, s.demand.ceiling_m3s);
    const auto result = env_step(state, action, demand, s.system, s.reward);
    const RewardBreakdown& r = result.reward;
    CHECK(r.total == -(r.energy_cost + r.pressure_penalty + r.switching_penalty));
    CHECK(r.energy_cost >= 0.0);
    CHECK(r.pressure_penalty >= 0.0);
    CHECK(r.switching_penalty >= 0.0);
    CHECK(r.total <= 0.0);
    state = result.next;
    if (result.terminated) state = initial_plant_state(s.system, 7.8);
  }
}

TEST_CASE("termination guard") {
  const Scenario s = scenario_1c1f();
  PlantState state = initial_plant_state(s.system, 0.51 * s.system.p_min_bar);
  // heavy demand with no supply drives pressure below the guard
  auto result = env_step(state, {0.0}, s.demand.ceiling_m3s, s.system, s.reward);
  while (!result.terminated) {
    result = env_step(result.next, {0.0}, s.demand.ceiling_m3s, s.system, s.reward);
  }
  CHECK(result.next.pressure_bar < 0.5 * s.system.p_min_bar);
}

TEST_CASE("idle episode with zero demand accumulates zero reward") {
  const Scenario s = scenario_1c1f();
  Environment env(s.system, s.reward, s.episode);
  DemandProfile profile;
  profile.samples.assign(s.episode.episode_length + s.episode.horizon, 0.0);
  profile.ceiling = s.demand.ceiling_m3s;
  env.reset(profile, s.system.p_ref_bar);
  double total = 0.0;
  while (!env.done()) total += env.step({0.0}).reward.total;
  CHECK(total == 0.0);
}

TEST_CASE("make_observation") {
  const Scenario s = scenario_1c1f();
  DemandProfile profile;
  profile.samples = {0.01, 0.02, 0.025, 0.0};
  profile.ceiling = 0.025;

  PlantState state = initial_plant_state(s.system, 8.0);
  SUBCASE("pressure at reference normalizes to zero") {
    const Observation obs = make_observation(state, profile, 1, 8.0);
    CHECK(obs.pressure_norm == 0.0);
    CHECK(obs.forecast(0) == doctest::Approx(0.4));
  }

  SUBCASE("pressure above reference") {
    state.pressure_bar = 8.3;
    const Observation obs = make_observation(state, profile, 1, 8.0);
    CHECK(obs.pressure_norm == doctest::Approx(0.0375).epsilon(1e-12));
  }

  SUBCASE("forecast sample at the ceiling maps to one") {
    state.step_index = 2;
    const Observation obs = make_observation(state, profile, 1, 8.0);
    CHECK(obs.forecast(0) == 1.0);
  }

  SUBCASE("window follows the step index") {
    state.step_index = 1;
    const Observation obs = make_observation(state, profile, 2, 8.0);
    CHECK(obs.forecast(0) == doctest::Approx(0.8));
    CHECK(obs.forecast(1) == doctest::Approx(1.0));
  }

  SUBCASE("exhausted profile raises") {
    state.step_index = 3;
    CHECK_THROWS_AS(make_observation(state, profile, 2, 8.0), std::out_of_range);
  }
}

TEST_CASE("observation flatten round trip") {
  Observation obs;
  obs.pressure_norm = -0.1;
  obs.forecast = Eigen::Vector3d(0.2, 0.4, 0.6);
  obs.levels = Eigen::Vector2d(0.5, 1.0);
  const Eigen::VectorXd flat = obs.flatten();
  CHECK(flat.size() == 6);
  const Observation back = Observation::unflatten(flat, 3, 2);
  CHECK(back.pressure_norm == obs.pressure_norm);
  CHECK((back.forecast.array() == obs.forecast.array()).all());
  CHECK((back.levels.array() == obs.levels.array()).all());
}

TEST_CASE("generate_demand determinism and bounds") {
  DemandGenOptions options;
  options.ceiling_m3s = 0.025;

  const auto a = generate_demand(42, 500, DemandPattern::Mixed, options);
  const auto b = generate_demand(42, 500, DemandPattern::Mixed, options);
  CHECK(a.samples == b.samples);

  const auto c = generate_demand(43, 500, DemandPattern::Mixed, options);
  CHECK(a.samples != c.samples);

  // one simulated day at dt = 5s
  const auto day = generate_demand(7, 17280, DemandPattern::Mixed, options);
  for (double sample : day.samples) {
    CHECK(sample >= 0.0);
    CHECK(sample <= day.ceiling);
  }
}

TEST_CASE("generate_demand zero-amplitude wave is constant") {
  DemandGenOptions options;
  options.wave_amplitude_fraction = 0.0;
  const auto profile = generate_demand(1, 100, DemandPattern::DailyWave, options);
  for (double sample : profile.samples) {
    CHECK(sample == doctest::Approx(options.base_fraction * options.ceiling_m3s));
  }
}

TEST_CASE("demand CSV ingestion") {
  const std::string good_path = "demand_good_test.csv";
  {
    std::ofstream out(good_path);
    out << "timestamp,flow_m3s\n";
    out << "2026-01-01T00:00:00,0.010\n";
    out << "2026-01-01T00:00:05,0.020\n";
  }
  const auto profile = load_demand_csv(good_path, 0.025);
  CHECK(profile.samples.size() == 2);
  CHECK(profile.samples[1] == doctest::Approx(0.02));
  CHECK(profile.ceiling == doctest::Approx(0.025));
  std::remove(good_path.c_str());

  const std::string bad_path = "demand_bad_test.csv";
  {
    std::ofstream out(bad_path);
    out << "timestamp,flow_m3s\n";
    out << "2026-01-01T00:00:00,0.010\n";
    out << "2026-01-01T00:00:05,not-a-number\n";
  }
  CHECK_THROWS_WITH_AS(load_demand_csv(bad_path, 0.025),
                       doctest::Contains("line 3"), DataError);
  std::remove(bad_path.c_str());

  const std::string bad_header = "demand_header_test.csv";
  {
    std::ofstream out(bad_header);
    out << "time,flow\n0,1\n";
  }
  CHECK_THROWS_AS(load_demand_csv(bad_header, 0.025), DataError);
  std::remove(bad_header.c_str());
}

TEST_CASE("environment refuses stepping after termination") {
  const Scenario s = scenario_1c1f();
  EpisodeConfig episode = s.episode;
  episode.episode_length = 3;
  Environment env(s.system, s.reward, episode);
  DemandProfile profile;
  profile.samples.assign(10, 0.0);
  profile.ceiling = s.demand.ceiling_m3s;
  env.reset(profile, 7.9);
  env.step({0.0});
  env.step({0.0});
  env.step({0.0});
  CHECK(env.done());
  CHECK_THROWS_AS(env.step({0.0}), std::logic_error);
}

TEST_CASE("environment pressure trajectory matches manual re-simulation") {
  const Scenario s = scenario_3c1f();
  Environment env(s.system, s.reward, s.episode);
  const auto profile =
      generate_demand(3, s.episode.episode_length + s.episode.horizon,
                      DemandPattern::Mixed, s.demand);
  env.reset(profile, 7.9);

  Rng rng(4);
  double manual_pressure = 7.9;
  int step = 0;
  while (!env.done() && step < 200) {
    std::vector<double> action(3);
    for (auto& a : action) a = rng.uniform();
    const double demand = env.current_demand();
    const auto result = env.step(action);

    double supply = 0.0;
    for (int i = 0; i < 3; ++i) {
      supply += compressor_flow(s.system.compressors[i], action[i]);
    }
    manual_pressure = pressure_step(
        manual_pressure, (supply - demand) * s.system.dt_s, s.system.storage_volume_m3);
    CHECK(result.detail.next.pressure_bar ==
          doctest::Approx(manual_pressure).epsilon(1e-12));
    ++step;
  }
}

TEST_CASE("doubling storage volume halves relative pressure increments") {
  const Scenario s = scenario_1c1f();
  SystemConfig doubled = s.system;
  doubled.storage_volume_m3 *= 2.0;

  Rng rng(5);
  PlantState a = initial_plant_state(s.system, 7.8);
  PlantState b = initial_plant_state(doubled, 7.8);
  for (int i = 0; i < 100; ++i) {
    const double setpoint = rng.uniform();
    const double demand = rng.uniform(0.0, s.demand.ceiling_m3s);
    const auto ra = env_step(a, {setpoint}, demand, s.system, s.reward);
    const auto rb = env_step(b, {setpoint}, demand, doubled, s.reward);
    const double rel_a = (ra.next.pressure_bar - a.pressure_bar) / a.pressure_bar;
    const double rel_b = (rb.next.pressure_bar - b.pressure_bar) / b.pressure_bar;
    if (rel_a != 0.0) {
      CHECK(rel_b == doctest::Approx(0.5 * rel_a).epsilon(1e-12));
    } else {
      CHECK(rel_b == 0.0);
    }
    a = ra.next;
    b = rb.next;
    if (ra.terminated || rb.terminated) break;
  }
}

TEST_CASE("switch allowance stays within bounds under random actions") {
  const Scenario s = scenario_3c1f();
  Environment env(s.system, s.reward, s.episode);
  const auto profile =
      generate_demand(6, s.episode.episode_length + s.episode.horizon,
                      DemandPattern::Mixed, s.demand);
  env.reset(profile, 7.9);
  Rng rng(6);
  while (!env.done()) {
    std::vector<double> action(3);
    for (auto& a : action) a = rng.uniform();
    env.step(action);
    const auto& allowance = env.state().switch_allowance;
    CHECK(allowance[0] >= 0.0);
    CHECK(allowance[0] <= s.system.compressors[0].max_switches_per_hour);
  }
}
