#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "capsim/ppo.hpp"
#include "test_util.hpp"

using namespace capsim;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

// independent oracle: directly telescoped lambda-weighted sum of deltas
std::vector<double> gae_brute_force(const std::vector<double>& rewards,
                                    const std::vector<double>& values,
                                    const std::vector<std::uint8_t>& dones,
                                    double gamma, double lambda,
                                    double bootstrap) {
  const std::size_t n = rewards.size();
  std::vector<double> deltas(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next_value = (t + 1 < n) ? values[t + 1] : bootstrap;
    deltas[t] = rewards[t] + gamma * next_value * (dones[t] ? 0.0 : 1.0) - values[t];
  }
  std::vector<double> advantages(n);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    double weight = 1.0;
    for (std::size_t l = t; l < n; ++l) {
      acc += weight * deltas[l];
      if (dones[l]) break;
      weight *= gamma * lambda;
    }
    advantages[t] = acc;
  }
  return advantages;
}

NetworkDims tiny_dims(int obs, int action) {
  NetworkDims dims;
  dims.obs = obs;
  dims.action = action;
  dims.hidden = 6;
  dims.lstm = 5;
  return dims;
}

// batch with rollout-like but arbitrary contents; chunk structure included
RolloutBatch random_batch(const NetworkDims& dims, int n_steps, Rng& rng,
                          int chunk_len) {
  RolloutBatch batch;
  batch.obs.resize(n_steps, dims.obs);
  batch.raw_action.resize(n_steps, dims.action);
  batch.old_raw_mean.resize(n_steps, dims.action);
  batch.old_log_std = Eigen::VectorXd::Constant(dims.action, -0.4);
  batch.logprob_old.resize(n_steps);
  batch.rewards.resize(n_steps);
  batch.values.resize(n_steps);
  batch.advantages.resize(n_steps);
  batch.returns.resize(n_steps);
  batch.dones.assign(n_steps, 0);
  for (int t = 0; t < n_steps; ++t) {
    for (int i = 0; i < dims.obs; ++i) batch.obs(t, i) = rng.uniform(-1.0, 1.0);
    for (int k = 0; k < dims.action; ++k) {
      batch.raw_action(t, k) = rng.uniform(-1.5, 1.5);
      batch.old_raw_mean(t, k) = rng.uniform(-1.0, 1.0);
    }
    batch.logprob_old[t] = rng.uniform(-3.0, -0.5);
    batch.advantages[t] = rng.uniform(-2.0, 2.0);
    batch.returns[t] = rng.uniform(-3.0, 0.0);
  }
  for (int begin = 0; begin < n_steps; begin += chunk_len) {
    RolloutBatch::Chunk chunk;
    chunk.begin = begin;
    chunk.len = std::min(chunk_len, n_steps - begin);
    chunk.h0 = Eigen::VectorXd::Zero(dims.lstm);
    chunk.c0 = Eigen::VectorXd::Zero(dims.lstm);
    for (int i = 0; i < dims.lstm; ++i) {
      chunk.h0(i) = rng.uniform(-0.5, 0.5);
      chunk.c0(i) = rng.uniform(-0.5, 0.5);
    }
    batch.chunks.push_back(std::move(chunk));
  }
  return batch;
}

// batch whose stored behavior matches exactly what params would produce,
// i.e. the state right after collection (ratio 1, KL 0)
RolloutBatch self_consistent_batch(const PolicyParams& params, int n_steps,
                                   Rng& rng) {
  const NetworkDims& dims = params.dims;
  RolloutBatch batch;
  batch.obs.resize(n_steps, dims.obs);
  batch.raw_action.resize(n_steps, dims.action);
  batch.old_raw_mean.resize(n_steps, dims.action);
  batch.old_log_std = params.log_std;
  batch.logprob_old.resize(n_steps);
  batch.rewards.assign(n_steps, 0.0);
  batch.values.assign(n_steps, 0.0);
  batch.advantages.assign(n_steps, 0.0);
  batch.returns.resize(n_steps);
  batch.dones.assign(n_steps, 0);

  RolloutBatch::Chunk chunk;
  chunk.begin = 0;
  chunk.len = n_steps;
  chunk.h0 = Eigen::VectorXd::Zero(dims.lstm);
  chunk.c0 = Eigen::VectorXd::Zero(dims.lstm);
  batch.chunks.push_back(chunk);

  RecurrentState rec = RecurrentState::zero(dims.lstm);
  for (int t = 0; t < n_steps; ++t) {
    for (int i = 0; i < dims.obs; ++i) batch.obs(t, i) = rng.uniform(-1.0, 1.0);
    const ForwardResult fw =
        policy_forward(params, batch.obs.row(t).transpose(), rec);
    rec = fw.rec;
    batch.raw_action.row(t) = fw.raw_mean.transpose();  // zero noise
    batch.old_raw_mean.row(t) = fw.raw_mean.transpose();
    batch.logprob_old[t] = -params.log_std.sum() - dims.action * kHalfLog2Pi;
    batch.returns[t] = rng.uniform(-2.0, 0.0);
  }
  return batch;
}

TrainConfig tiny_train_config() {
  TrainConfig config;
  config.rollout_workers = 1;
  config.steps_per_iteration = 64;
  config.minibatch_size = 64;
  config.epochs_per_iteration = 2;
  config.max_iterations = 2;
  config.bptt_chunk = 16;
  return config;
}

}  // namespace

TEST_CASE("gae single terminal step") {
  const GaeResult result = compute_gae({2.0}, {0.5}, {1}, 0.995, 0.97, 9.0);
  CHECK(result.advantages[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(result.returns[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("gae with gamma zero is myopic") {
  const std::vector<double> rewards = {1.0, -2.0, 0.5};
  const std::vector<double> values = {0.2, 0.4, -0.1};
  const GaeResult result = compute_gae(rewards, values, {0, 0, 1}, 0.0, 0.97, 3.0);
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    CHECK(result.advantages[t] ==
          doctest::Approx(rewards[t] - values[t]).epsilon(1e-15));
  }
}

TEST_CASE("gae matches brute-force telescoped sum") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 50;
    std::vector<double> rewards(n), values(n);
    std::vector<std::uint8_t> dones(n, 0);
    for (int t = 0; t < n; ++t) {
      rewards[t] = rng.uniform(-2.0, 1.0);
      values[t] = rng.uniform(-2.0, 2.0);
      if (rng.uniform() < 0.05) dones[t] = 1;
    }
    const double bootstrap = rng.uniform(-1.0, 1.0);
    const GaeResult fast = compute_gae(rewards, values, dones, 0.995, 0.97, bootstrap);
    const auto slow = gae_brute_force(rewards, values, dones, 0.995, 0.97, bootstrap);
    for (int t = 0; t < n; ++t) {
      CHECK(fast.advantages[t] == doctest::Approx(slow[t]).epsilon(1e-12));
      CHECK(fast.returns[t] ==
            doctest::Approx(slow[t] + values[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gae with lambda one equals discounted monte carlo") {
  Rng rng(32);
  const int n = 30;
  std::vector<double> rewards(n), values(n);
  std::vector<std::uint8_t> dones(n, 0);
  dones[n - 1] = 1;  // finite episode
  for (int t = 0; t < n; ++t) {
    rewards[t] = rng.uniform(-1.0, 1.0);
    values[t] = rng.uniform(-1.0, 1.0);
  }
  const double gamma = 0.99;
  const GaeResult result = compute_gae(rewards, values, dones, gamma, 1.0, 5.0);
  for (int t = 0; t < n; ++t) {
    double mc = 0.0;
    double discount = 1.0;
    for (int l = t; l < n; ++l) {
      mc += discount * rewards[l];
      discount *= gamma;
    }
    CHECK(result.advantages[t] == doctest::Approx(mc - values[t]).epsilon(1e-12));
  }
}

TEST_CASE("clipped surrogate boundary identity") {
  const double clip = 0.3;
  for (double adv : {1.7, -0.6}) {
    const double at_hi = clipped_surrogate(1.0 + clip, adv, clip);
    CHECK(at_hi == (1.0 + clip) * adv);
    const double at_lo = clipped_surrogate(1.0 - clip, adv, clip);
    CHECK(at_lo == (1.0 - clip) * adv);
  }
  // outside the window the clipped branch caps gains
  CHECK(clipped_surrogate(1.5, 1.0, clip) == doctest::Approx(1.3));
  CHECK(clipped_surrogate(0.5, 1.0, clip) == doctest::Approx(0.5));
  // pessimistic bound for negative advantages
  CHECK(clipped_surrogate(1.5, -1.0, clip) == doctest::Approx(-1.5));
}

TEST_CASE("zero advantages move parameters only through the value loss") {
  Rng rng(33);
  PolicyParams params = init_params(tiny_dims(3, 2), rng);
  const RolloutBatch batch = self_consistent_batch(params, 16, rng);

  TrainConfig config;
  config.minibatch_size = 16;
  config.kl_coeff = 0.2;

  SUBCASE("with the value loss disabled nothing moves") {
    config.vf_coeff = 0.0;
    PolicyParams updated = params;
    AdamState adam = AdamState::zero_like(params);
    Rng shuffle(1);
    const UpdateMetrics metrics = ppo_update(updated, batch, config, adam, shuffle);
    CHECK_FALSE(metrics.aborted);
    CHECK(same_bits(updated.w1, params.w1));
    CHECK(same_bits(updated.w_action, params.w_action));
    CHECK(same_bits(updated.w_value, params.w_value));
    CHECK(same_bits(updated.log_std, params.log_std));
  }

  SUBCASE("with the value loss enabled only the value path moves") {
    config.vf_coeff = 1.0;
    PolicyParams updated = params;
    AdamState adam = AdamState::zero_like(params);
    Rng shuffle(1);
    const UpdateMetrics metrics = ppo_update(updated, batch, config, adam, shuffle);
    CHECK_FALSE(metrics.aborted);
    CHECK(same_bits(updated.w_action, params.w_action));
    CHECK(same_bits(updated.b_action, params.b_action));
    CHECK(same_bits(updated.log_std, params.log_std));
    CHECK_FALSE(same_bits(updated.w_value, params.w_value));
    CHECK_FALSE(same_bits(updated.w1, params.w1));  // shared trunk serves the value head
  }
}

TEST_CASE("policy surrogate matches a hand computation on a two-step batch") {
  // zero network: raw mean 0, value 0, log_std 0
  PolicyParams params = zero_params(tiny_dims(2, 1));
  Rng rng(34);
  RolloutBatch batch = self_consistent_batch(params, 2, rng);

  // craft ratios 1.2 and 1.5 through the stored old log-probs
  const double u0 = 0.3, u1 = -0.4;
  batch.raw_action(0, 0) = u0;
  batch.raw_action(1, 0) = u1;
  auto logp_new = [&](double u) { return -0.5 * u * u - kHalfLog2Pi; };
  batch.logprob_old[0] = logp_new(u0) - std::log(1.2);
  batch.logprob_old[1] = logp_new(u1) - std::log(1.5);
  batch.advantages = {1.0, 1.0};
  batch.returns = {0.0, 0.0};

  TrainConfig config;
  config.minibatch_size = 2;
  config.clip = 0.3;
  config.kl_coeff = 0.0;
  config.vf_coeff = 0.0;

  PolicyParams updated = params;
  AdamState adam = AdamState::zero_like(params);
  Rng shuffle(1);
  const UpdateMetrics metrics = ppo_update(updated, batch, config, adam, shuffle);

  // min(1.2*1, clip(1.2)*1) = 1.2 and min(1.5*1, 1.3*1) = 1.3
  CHECK(metrics.policy_loss == doctest::Approx(-(1.2 + 1.3) / 2.0).epsilon(1e-9));
  CHECK(metrics.clip_fraction == doctest::Approx(0.5));
  CHECK(metrics.kl == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(35);
  const NetworkDims dims = tiny_dims(3, 2);
  PolicyParams params = init_params(dims, rng);
  const RolloutBatch batch = random_batch(dims, 12, rng, 5);
  std::vector<int> chunk_indices(batch.chunks.size());
  for (std::size_t i = 0; i < chunk_indices.size(); ++i) chunk_indices[i] = static_cast<int>(i);

  TrainConfig config;
  config.kl_coeff = 0.2;
  config.vf_coeff = 1.0;
  config.entropy_coeff = 0.01;  // exercise the entropy path too

  PolicyParams grads = zero_params(dims);
  const LossBreakdown loss = ppo_loss(params, batch, chunk_indices, config, &grads);
  CHECK(loss.steps == 12);

  auto loss_at = [&](const PolicyParams& p) {
    return ppo_loss(p, batch, chunk_indices, config, nullptr).total;
  };

  const double h = 1e-6;
  auto check_tensor = [&](Eigen::MatrixXd PolicyParams::* matrix) {
    PolicyParams probe = params;
    Eigen::MatrixXd& m = probe.*matrix;
    const Eigen::MatrixXd& g = grads.*matrix;
    Rng pick(99);
    const int trials = std::min<long>(6, m.size());
    for (int trial = 0; trial < trials; ++trial) {
      const long idx = pick.uniform_int(static_cast<int>(m.size()));
      const double saved = m.data()[idx];
      m.data()[idx] = saved + h;
      const double up = loss_at(probe);
      m.data()[idx] = saved - h;
      const double down = loss_at(probe);
      m.data()[idx] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(fd), std::abs(g.data()[idx]), 1e-6});
      CHECK(std::abs(g.data()[idx] - fd) / scale < 1e-4);
    }
  };
  auto check_vector = [&](Eigen::VectorXd PolicyParams::* vector) {
    PolicyParams probe = params;
    Eigen::VectorXd& v = probe.*vector;
    const Eigen::VectorXd& g = grads.*vector;
    for (long idx = 0; idx < v.size(); idx += std::max<long>(1, v.size() / 4)) {
      const double saved = v(idx);
      v(idx) = saved + h;
      const double up = loss_at(probe);
      v(idx) = saved - h;
      const double down = loss_at(probe);
      v(idx) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(fd), std::abs(g(idx)), 1e-6});
      CHECK(std::abs(g(idx) - fd) / scale < 1e-4);
    }
  };

  check_tensor(&PolicyParams::w1);
  check_tensor(&PolicyParams::w2);
  check_tensor(&PolicyParams::lstm_wx);
  check_tensor(&PolicyParams::lstm_wh);
  check_tensor(&PolicyParams::w_action);
  check_tensor(&PolicyParams::w_value);
  check_vector(&PolicyParams::b1);
  check_vector(&PolicyParams::b2);
  check_vector(&PolicyParams::lstm_b);
  check_vector(&PolicyParams::b_action);
  check_vector(&PolicyParams::b_value);
  check_vector(&PolicyParams::log_std);
}

TEST_CASE("non-finite loss aborts and restores parameters") {
  Rng rng(36);
  const NetworkDims dims = tiny_dims(3, 1);
  PolicyParams params = init_params(dims, rng);
  RolloutBatch batch = random_batch(dims, 8, rng, 4);
  batch.advantages[3] = std::numeric_limits<double>::quiet_NaN();

  TrainConfig config;
  config.minibatch_size = 8;

  PolicyParams updated = params;
  AdamState adam = AdamState::zero_like(params);
  adam.t = 17;
  Rng shuffle(1);
  const UpdateMetrics metrics = ppo_update(updated, batch, config, adam, shuffle);
  CHECK(metrics.aborted);
  CHECK(same_bits(updated.w1, params.w1));
  CHECK(same_bits(updated.log_std, params.log_std));
  CHECK(adam.t == 17);
}

TEST_CASE("empty batch is rejected") {
  PolicyParams params = zero_params(tiny_dims(2, 1));
  RolloutBatch batch;
  AdamState adam = AdamState::zero_like(params);
  Rng shuffle(1);
  TrainConfig config;
  CHECK_THROWS_AS(ppo_update(params, batch, config, adam, shuffle),
                  std::invalid_argument);
}

TEST_CASE("train with zero iterations returns untouched initial parameters") {
  const Scenario scenario = make_scenario("1C1F");
  TrainConfig config = tiny_train_config();
  config.max_iterations = 0;
  const TrainResult a = train(scenario, config, 77, "");
  const TrainResult b = train(scenario, config, 77, "");
  CHECK(a.curve.empty());
  CHECK(same_bits(a.params.w1, b.params.w1));
  CHECK(same_bits(a.params.log_std, b.params.log_std));
  CHECK(a.params.scenario_hash == scenario.config_hash());
}

TEST_CASE("training is deterministic for a fixed seed and worker count") {
  const Scenario scenario = make_scenario("1C1F");

  SUBCASE("single worker") {
    const TrainConfig config = tiny_train_config();
    const TrainResult a = train(scenario, config, 5, "");
    const TrainResult b = train(scenario, config, 5, "");
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
      CHECK(a.curve[i].mean_reward == b.curve[i].mean_reward);
      CHECK(a.curve[i].policy_loss == b.curve[i].policy_loss);
      CHECK(a.curve[i].kl == b.curve[i].kl);
    }
    CHECK(same_bits(a.params.w1, b.params.w1));
    CHECK(same_bits(a.params.lstm_wx, b.params.lstm_wx));
  }

  SUBCASE("two workers") {
    TrainConfig config = tiny_train_config();
    config.rollout_workers = 2;
    config.steps_per_iteration = 128;
    const TrainResult a = train(scenario, config, 5, "");
    const TrainResult b = train(scenario, config, 5, "");
    CHECK(same_bits(a.params.w1, b.params.w1));
    REQUIRE(!a.curve.empty());
    CHECK(a.curve.back().mean_reward == b.curve.back().mean_reward);
  }
}

TEST_CASE("metrics invariants on a live training iteration") {
  const Scenario scenario = make_scenario("1C1F");
  TrainConfig config = tiny_train_config();
  config.max_iterations = 3;
  const TrainResult result = train(scenario, config, 9, "");
  REQUIRE(result.curve.size() == 3);
  for (const auto& row : result.curve) {
    CHECK(row.clip_fraction >= 0.0);
    CHECK(row.clip_fraction <= 1.0);
    CHECK(row.kl >= -1e-6);
  }

  // best-so-far reward is a running maximum of the curve by construction
  double best = -1e300;
  for (const auto& row : result.curve) best = std::max(best, row.mean_reward);
  CHECK(result.best_mean_reward == best);
}
