#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>

#include "capsim/common.hpp"

namespace capsim {

struct NetworkDims {
  int obs = 0;
  int action = 0;
  int hidden = 128;
  int lstm = 128;

  bool operator==(const NetworkDims&) const = default;
};

// All weights of the control network: two fully connected layers feeding an
// LSTM cell, with an action-mean head, a value head and a state-independent
// log-std vector. Doubles throughout; gradients and serialization are exact.
struct PolicyParams {
  NetworkDims dims;
  Eigen::MatrixXd w1, w2;              // hidden x obs, hidden x hidden
  Eigen::VectorXd b1, b2;
  Eigen::MatrixXd lstm_wx, lstm_wh;    // 4*lstm x hidden, 4*lstm x lstm
  Eigen::VectorXd lstm_b;              // gate order: input, forget, cell, output
  Eigen::MatrixXd w_action;            // action x lstm
  Eigen::VectorXd b_action;
  Eigen::MatrixXd w_value;             // 1 x lstm
  Eigen::VectorXd b_value;             // 1
  Eigen::VectorXd log_std;             // action
  std::uint64_t scenario_hash = 0;

  void validate() const;
  long n_params() const;
  bool all_finite() const;
};

PolicyParams zero_params(const NetworkDims& dims);
PolicyParams init_params(const NetworkDims& dims, Rng& rng);

struct RecurrentState {
  Eigen::VectorXd h, c;

  static RecurrentState zero(int lstm_width);
};

// Activations of one forward step, kept for backward passes.
struct StepCache {
  Eigen::VectorXd input, h1, h2;
  Eigen::VectorXd gate_i, gate_f, gate_g, gate_o;
  Eigen::VectorXd c_prev, h_prev, c, tanh_c, h;
  Eigen::VectorXd raw_mean;
  double value = 0.0;
};

struct ForwardResult {
  Eigen::VectorXd action_mean;  // squashed into [0,1] per compressor
  Eigen::VectorXd raw_mean;     // pre-squash head output
  double value = 0.0;
  RecurrentState rec;
};

double squash(double raw);           // 0.5 * (tanh(raw) + 1)
Eigen::VectorXd squash(const Eigen::VectorXd& raw);

ForwardResult policy_forward(const PolicyParams& params,
                             const Eigen::VectorXd& obs,
                             const RecurrentState& rec,
                             StepCache* cache = nullptr);

// Action mean at zero recurrent state; the evaluation mode used by the
// explainability pipeline.
Eigen::VectorXd deterministic_action(const PolicyParams& params,
                                     const Eigen::VectorXd& obs);

// Exact reverse-mode gradient of the summed squashed action with respect to
// the observation, at zero recurrent state.
Eigen::VectorXd input_gradient(const PolicyParams& params,
                               const Eigen::VectorXd& obs);

// Deterministic actions for a batch of observations (rows), zero recurrent
// state. Used by the attribution value function where throughput matters.
Eigen::MatrixXd batch_deterministic_actions(const PolicyParams& params,
                                            const Eigen::MatrixXd& obs_rows);

// Self-describing binary container with named tensors, shapes, a format
// version and the scenario hash. Round-trips are bit exact.
void save_params(const PolicyParams& params, const std::string& path);
PolicyParams load_params(const std::string& path);
// Refuses (ConfigError) when the stored scenario hash differs.
PolicyParams load_params(const std::string& path, std::uint64_t expected_hash);

}  // namespace capsim
