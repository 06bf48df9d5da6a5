#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "capsim/env.hpp"
#include "capsim/policy.hpp"
#include "capsim/scenario.hpp"

namespace capsim {

struct TrainConfig {
  double learning_rate = 1e-4;
  double gamma = 0.995;
  double gae_lambda = 0.97;
  double clip = 0.3;
  double kl_coeff = 0.2;
  double entropy_coeff = 0.0;
  double vf_coeff = 1.0;
  double grad_clip = 0.0;  // 0 disables clipping
  int rollout_workers = 4;
  int steps_per_iteration = 8192;
  int minibatch_size = 512;
  int epochs_per_iteration = 10;
  int max_iterations = 200;
  int early_stop_patience = 0;  // 0 disables early stopping
  int bptt_chunk = 32;          // truncated backprop length
  int checkpoint_iteration = 5;
  // Trainer-internal scale for value targets; the network regresses
  // return/value_scale so targets stay O(1) at the pinned learning rate.
  double value_scale = 20.0;
  DemandPattern demand_pattern = DemandPattern::Mixed;

  void validate() const;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Standard generalized-advantage recursion with a terminal bootstrap value;
// returns are advantages + values.
GaeResult compute_gae(const std::vector<double>& rewards,
                      const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones, double gamma,
                      double lambda, double bootstrap_value);

// Clipped-surrogate contribution of one sample (the quantity PPO maximizes).
double clipped_surrogate(double ratio, double advantage, double clip);

// One iteration of experience, stored step-major with per-sequence chunks
// for truncated backprop. Advantages are normalized over the whole batch.
struct RolloutBatch {
  Eigen::MatrixXd obs;           // steps x obs_dim
  Eigen::MatrixXd raw_action;    // steps x act, pre-squash samples
  Eigen::MatrixXd old_raw_mean;  // steps x act
  Eigen::VectorXd old_log_std;   // act
  std::vector<double> logprob_old;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<std::uint8_t> dones;

  struct Chunk {
    long begin = 0;
    int len = 0;
    Eigen::VectorXd h0, c0;  // recurrent state entering the chunk
  };
  std::vector<Chunk> chunks;

  long size() const { return obs.rows(); }
};

struct AdamState {
  PolicyParams m, v;
  long t = 0;

  static AdamState zero_like(const PolicyParams& params);
};

struct LossBreakdown {
  double total = 0.0;      // summed over steps, not averaged
  double policy = 0.0;
  double value = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  long clipped = 0;
  long steps = 0;
};

// Loss sums (and, when grads is non-null, exact parameter gradients of the
// sums) over the listed chunks. Exposed so tests can cross-check the
// backward pass against finite differences.
LossBreakdown ppo_loss(const PolicyParams& params, const RolloutBatch& batch,
                       const std::vector<int>& chunk_indices,
                       const TrainConfig& config, PolicyParams* grads);

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  bool aborted = false;
};

// One epoch of minibatch Adam steps on the PPO objective. On a non-finite
// loss the entry parameters and optimizer state are restored and the
// metrics carry aborted = true.
UpdateMetrics ppo_update(PolicyParams& params, const RolloutBatch& batch,
                         const TrainConfig& config, AdamState& adam,
                         Rng& shuffle_rng);

struct IterationStats {
  int iteration = 0;
  double mean_reward = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  int episodes_completed = 0;
  int divergences = 0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<IterationStats> curve;
  std::string checkpoint_early_path;
  std::string checkpoint_final_path;
  std::string checkpoint_best_path;  // parameters at the best rolling reward
  std::string curve_path;
  double best_mean_reward = 0.0;
  int total_divergences = 0;
  bool stopped_early = false;
};

// Full training run: parallel rollouts, GAE, epochs of ppo_update,
// checkpoints at checkpoint_iteration and at the end, learning curve CSV.
// Deterministic for a fixed seed and worker count. out_dir may be empty to
// skip all file output.
TrainResult train(const Scenario& scenario, const TrainConfig& config,
                  std::uint64_t seed, const std::string& out_dir);

void write_learning_curve_csv(const std::string& path,
                              const std::vector<IterationStats>& curve);

}  // namespace capsim
