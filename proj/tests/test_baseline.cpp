#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "capsim/baseline.hpp"
#include "capsim/env.hpp"
#include "capsim/scenario.hpp"

using namespace capsim;

TEST_CASE("all off above the band") {
  const Scenario s = make_scenario("3C1F");
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 8.15);
  const auto setpoints = controller.action(state, 0.02);
  for (double sp : setpoints) CHECK(sp == 0.0);
}

TEST_CASE("first cascade unit engages below the band") {
  const Scenario s = make_scenario("3C1F");
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 7.8);
  const auto setpoints = controller.action(state, 0.0);
  // default cascade: variable-speed units first
  CHECK(setpoints[1] == 1.0);
  CHECK(setpoints[0] == 0.0);

  const Scenario single = make_scenario("1C1F");
  BandController single_controller(single.system, single.band);
  PlantState single_state = initial_plant_state(single.system, 7.8);
  CHECK(single_controller.action(single_state, 0.0)[0] == 1.0);
}

TEST_CASE("cascade engages until projected supply covers demand") {
  const Scenario s = make_scenario("3C1F");
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 7.8);
  // demand beyond one unit's capacity pulls in the second variable unit
  const auto mid = controller.action(state, 0.015);
  CHECK(mid[1] == 1.0);
  CHECK(mid[2] == 1.0);
  CHECK(mid[0] == 0.0);

  // demand beyond both variable units pulls in the fixed-speed unit
  controller.reset();
  const auto high = controller.action(state, 0.025);
  CHECK(high[1] == 1.0);
  CHECK(high[2] == 1.0);
  CHECK(high[0] == 1.0);
}

TEST_CASE("proportional variable-speed output inside the band") {
  Scenario s = make_scenario("3C1F");
  s.band.vs_gain_per_bar = 1.0;
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 8.0);
  const auto setpoints = controller.action(state, 0.01);
  // (p_high - p) * gain = (8.1 - 8.0) * 1.0
  CHECK(setpoints[1] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(setpoints[2] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("fixed-speed hysteresis") {
  const Scenario s = make_scenario("3C1F");
  const double p_mid = 0.5 * (s.band.p_low_bar + s.band.p_high_bar);
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 7.8);

  // engaged below the band once demand exceeds the variable units
  auto setpoints = controller.action(state, 0.025);
  CHECK(setpoints[0] == 1.0);

  // still on just above p_low but below mid-band
  state.pressure_bar = 0.5 * (s.band.p_low_bar + p_mid);
  setpoints = controller.action(state, 0.025);
  CHECK(setpoints[0] == 1.0);

  // drops out once mid-band is reached
  state.pressure_bar = p_mid;
  setpoints = controller.action(state, 0.06);
  CHECK(setpoints[0] == 0.0);

  // and does not re-engage until pressure falls below p_low again
  state.pressure_bar = s.band.p_low_bar + 0.01;
  setpoints = controller.action(state, 0.06);
  CHECK(setpoints[0] == 0.0);
}

TEST_CASE("transitions only happen at the configured thresholds") {
  const Scenario s = make_scenario("3C1F");
  const double p_mid = 0.5 * (s.band.p_low_bar + s.band.p_high_bar);
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 8.0);

  Rng rng(21);
  bool was_on = false;
  for (int i = 0; i < 2000; ++i) {
    state.pressure_bar = rng.uniform(7.6, 8.3);
    const auto setpoints = controller.action(state, rng.uniform(0.0, 0.03));
    const bool now_on = setpoints[0] >= 0.5;
    if (!was_on && now_on) CHECK(state.pressure_bar < s.band.p_low_bar);
    if (was_on && !now_on) CHECK(state.pressure_bar >= p_mid);
    was_on = now_on;
  }
}

TEST_CASE("band config validation") {
  const Scenario s = make_scenario("3C1F");
  BandControllerConfig bad = s.band;
  bad.p_low_bar = bad.p_high_bar;
  CHECK_THROWS_AS(bad.validate(s.system), ConfigError);

  bad = s.band;
  bad.p_high_bar = s.system.p_max_bar + 0.5;
  CHECK_THROWS_AS(bad.validate(s.system), ConfigError);

  bad = s.band;
  bad.cascade_order = {0, 0, 1};
  CHECK_THROWS_AS(bad.validate(s.system), ConfigError);

  BandControllerConfig good = s.band;
  good.cascade_order = {2, 1, 0};
  CHECK_NOTHROW(good.validate(s.system));
}

TEST_CASE("custom cascade order is honored") {
  Scenario s = make_scenario("3C1F");
  s.band.cascade_order = {1, 2, 0};
  BandController controller(s.system, s.band);
  PlantState state = initial_plant_state(s.system, 7.8);
  const auto setpoints = controller.action(state, 0.0);
  CHECK(setpoints[1] == 1.0);
  CHECK(setpoints[0] == 0.0);
}
