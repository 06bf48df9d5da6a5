#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "capsim/policy.hpp"
#include "test_util.hpp"

using namespace capsim;

namespace {

NetworkDims small_dims(int obs = 4, int action = 2) {
  NetworkDims dims;
  dims.obs = obs;
  dims.action = action;
  dims.hidden = 12;
  dims.lstm = 10;
  return dims;
}

}  // namespace

TEST_CASE("zero network forces mid-range action") {
  const PolicyParams params = zero_params(small_dims());
  const Eigen::VectorXd obs = Eigen::VectorXd::Constant(4, 0.3);
  const Eigen::VectorXd action = deterministic_action(params, obs);
  for (int k = 0; k < action.size(); ++k) CHECK(action(k) == 0.5);
}

TEST_CASE("forward is deterministic and pure") {
  Rng rng(1);
  const PolicyParams params = init_params(small_dims(), rng);
  Eigen::VectorXd obs(4);
  obs << 0.1, -0.2, 0.7, 0.4;
  const RecurrentState rec = RecurrentState::zero(10);

  const ForwardResult a = policy_forward(params, obs, rec);
  const ForwardResult b = policy_forward(params, obs, rec);
  CHECK(same_bits(a.action_mean, b.action_mean));
  CHECK(a.value == b.value);
  CHECK(same_bits(a.rec.h, b.rec.h));
  CHECK(same_bits(a.rec.c, b.rec.c));
}

TEST_CASE("outputs stay finite and squashed for random networks") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const PolicyParams params = init_params(small_dims(), rng);
    Eigen::VectorXd obs(4);
    for (int i = 0; i < 4; ++i) obs(i) = rng.uniform(-2.0, 2.0);
    const Eigen::VectorXd action = deterministic_action(params, obs);
    for (int k = 0; k < action.size(); ++k) {
      CHECK(std::isfinite(action(k)));
      CHECK(action(k) >= 0.0);
      CHECK(action(k) <= 1.0);
    }
  }
}

TEST_CASE("recurrent state influences the output") {
  Rng rng(3);
  const PolicyParams params = init_params(small_dims(), rng);
  Eigen::VectorXd obs(4);
  obs << 0.1, 0.2, 0.3, 0.4;

  RecurrentState rec = RecurrentState::zero(10);
  const ForwardResult first = policy_forward(params, obs, rec);
  const ForwardResult second = policy_forward(params, obs, first.rec);
  CHECK_FALSE(same_bits(first.action_mean, second.action_mean));
}

TEST_CASE("input gradient matches central finite differences") {
  Rng rng(4);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const NetworkDims dims = small_dims(3 + trial % 4, 1 + trial % 3);
    const PolicyParams params = init_params(dims, rng);
    Eigen::VectorXd obs(dims.obs);
    for (int i = 0; i < dims.obs; ++i) obs(i) = rng.uniform(-1.0, 1.0);

    const Eigen::VectorXd grad = input_gradient(params, obs);
    const double h = 1e-5;
    for (int j = 0; j < dims.obs; ++j) {
      Eigen::VectorXd hi = obs, lo = obs;
      hi(j) += h;
      lo(j) -= h;
      const double fd = (deterministic_action(params, hi).sum() -
                         deterministic_action(params, lo).sum()) /
                        (2.0 * h);
      const double scale = std::max({std::abs(fd), std::abs(grad(j)), 1e-8});
      CHECK(std::abs(grad(j) - fd) / scale < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("dead input column") {
  Rng rng(5);
  PolicyParams params = init_params(small_dims(), rng);
  params.w1.col(2).setZero();

  Eigen::VectorXd obs(4);
  obs << 0.1, 0.2, 0.3, 0.4;
  const Eigen::VectorXd grad = input_gradient(params, obs);
  CHECK(grad(2) == 0.0);

  Eigen::VectorXd other = obs;
  other(2) = -5.0;
  CHECK(same_bits(deterministic_action(params, obs), deterministic_action(params, other)));
}

TEST_CASE("symmetric wiring is a negative control for input sensitivity") {
  Rng rng(6);
  PolicyParams params = init_params(small_dims(4, 1), rng);

  Eigen::VectorXd obs(4);
  obs << 0.0, 0.3, 0.8, 0.5;
  Eigen::VectorXd swapped = obs;
  std::swap(swapped(1), swapped(2));

  // generic network distinguishes the two inputs
  CHECK_FALSE(same_bits(deterministic_action(params, obs),
                        deterministic_action(params, swapped)));

  // identically wired columns do not
  params.w1.col(2) = params.w1.col(1);
  CHECK(same_bits(deterministic_action(params, obs),
                  deterministic_action(params, swapped)));
}

TEST_CASE("batch forward agrees with single forward") {
  Rng rng(7);
  const PolicyParams params = init_params(small_dims(5, 3), rng);
  Eigen::MatrixXd obs_rows(8, 5);
  for (int i = 0; i < obs_rows.size(); ++i) {
    obs_rows(i / 5, i % 5) = rng.uniform(-1.0, 1.0);
  }
  const Eigen::MatrixXd batch = batch_deterministic_actions(params, obs_rows);
  for (int i = 0; i < obs_rows.rows(); ++i) {
    const Eigen::VectorXd single =
        deterministic_action(params, obs_rows.row(i).transpose());
    for (int k = 0; k < single.size(); ++k) {
      CHECK(batch(i, k) == doctest::Approx(single(k)).epsilon(1e-12));
    }
  }
}

TEST_CASE("parameter round trip is bit exact") {
  Rng rng(8);
  PolicyParams params = init_params(small_dims(), rng);
  params.scenario_hash = 0xdeadbeefcafe1234ull;
  const std::string path = "params_roundtrip_test.bin";
  save_params(params, path);
  const PolicyParams loaded = load_params(path);
  CHECK(same_params(params, loaded));
  CHECK(loaded.dims == params.dims);
  std::remove(path.c_str());
}

TEST_CASE("hash mismatch is refused") {
  Rng rng(9);
  PolicyParams params = init_params(small_dims(), rng);
  params.scenario_hash = 111;
  const std::string path = "params_hash_test.bin";
  save_params(params, path);
  CHECK_NOTHROW(load_params(path, 111));
  CHECK_THROWS_AS(load_params(path, 222), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("truncated parameter file is rejected without partial load") {
  Rng rng(10);
  const PolicyParams params = init_params(small_dims(), rng);
  const std::string path = "params_trunc_test.bin";
  save_params(params, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_params(path), DataError);

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a parameter file at all";
  }
  CHECK_THROWS_AS(load_params(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("shape mismatch against the network is a configuration error") {
  Rng rng(11);
  const PolicyParams params = init_params(small_dims(4, 2), rng);
  const Eigen::VectorXd obs = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(policy_forward(params, obs, RecurrentState::zero(10)),
                  ConfigError);
}
