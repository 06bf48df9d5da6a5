#include "capsim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace capsim {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

#define CAPSIM_FOR_EACH_TENSOR(OP) \
  OP(w1) OP(b1) OP(w2) OP(b2) OP(lstm_wx) OP(lstm_wh) OP(lstm_b) \
  OP(w_action) OP(b_action) OP(w_value) OP(b_value) OP(log_std)

void add_scaled(PolicyParams& dst, const PolicyParams& src, double scale) {
#define CAPSIM_OP(T) dst.T += scale * src.T;
  CAPSIM_FOR_EACH_TENSOR(CAPSIM_OP)
#undef CAPSIM_OP
}

double squared_norm(const PolicyParams& p) {
  double sum = 0.0;
#define CAPSIM_OP(T) sum += p.T.squaredNorm();
  CAPSIM_FOR_EACH_TENSOR(CAPSIM_OP)
#undef CAPSIM_OP
  return sum;
}

void scale_params(PolicyParams& p, double scale) {
#define CAPSIM_OP(T) p.T *= scale;
  CAPSIM_FOR_EACH_TENSOR(CAPSIM_OP)
#undef CAPSIM_OP
}

bool grads_finite(const PolicyParams& p) { return p.all_finite(); }

void adam_step(PolicyParams& params, const PolicyParams& grads,
               AdamState& state, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
#define CAPSIM_OP(T)                                                       \
  state.m.T = kBeta1 * state.m.T + (1.0 - kBeta1) * grads.T;               \
  state.v.T.array() =                                                      \
      kBeta2 * state.v.T.array() + (1.0 - kBeta2) * grads.T.array().square(); \
  params.T.array() -= lr * (state.m.T.array() / bc1) /                     \
                      ((state.v.T.array() / bc2).sqrt() + kEps);
  CAPSIM_FOR_EACH_TENSOR(CAPSIM_OP)
#undef CAPSIM_OP
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return fnv1a64(std::to_string(seed) + ":" + std::to_string(salt));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0,1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw ConfigError("gae_lambda must be in [0,1]");
  }
  if (!(clip > 0.0)) throw ConfigError("clip must be > 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (kl_coeff < 0.0 || entropy_coeff < 0.0 || vf_coeff < 0.0 || grad_clip < 0.0) {
    throw ConfigError("loss coefficients must be >= 0");
  }
  if (rollout_workers <= 0) throw ConfigError("rollout_workers must be > 0");
  if (steps_per_iteration < rollout_workers) {
    throw ConfigError("steps_per_iteration must cover every worker");
  }
  if (minibatch_size <= 0 || epochs_per_iteration <= 0 || bptt_chunk <= 0) {
    throw ConfigError("minibatch_size, epochs and bptt_chunk must be > 0");
  }
  if (max_iterations < 0 || early_stop_patience < 0) {
    throw ConfigError("max_iterations and early_stop_patience must be >= 0");
  }
  if (!(value_scale > 0.0)) throw ConfigError("value_scale must be > 0");
}

GaeResult compute_gae(const std::vector<double>& rewards,
                      const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones, double gamma,
                      double lambda, double bootstrap_value) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw std::invalid_argument("compute_gae: length mismatch");
  }
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double carry = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double next_value = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta =
        rewards[i] + gamma * next_value * not_done - values[i];
    carry = delta + gamma * lambda * not_done * carry;
    out.advantages[i] = carry;
    out.returns[i] = carry + values[i];
  }
  return out;
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

AdamState AdamState::zero_like(const PolicyParams& params) {
  AdamState s;
  s.m = zero_params(params.dims);
  s.v = zero_params(params.dims);
  s.t = 0;
  return s;
}

LossBreakdown ppo_loss(const PolicyParams& params, const RolloutBatch& batch,
                       const std::vector<int>& chunk_indices,
                       const TrainConfig& config, PolicyParams* grads) {
  const int act = params.dims.action;
  const int lstm = params.dims.lstm;

  const Eigen::ArrayXd sigma_new = params.log_std.array().exp();
  const Eigen::ArrayXd var_new = sigma_new.square();
  const Eigen::ArrayXd sigma_old = batch.old_log_std.array().exp();
  const Eigen::ArrayXd var_old = sigma_old.square();
  const double entropy_per_step =
      (params.log_std.array() + 0.5 + kHalfLog2Pi).sum();

  LossBreakdown sums;
  std::vector<StepCache> caches;
  // step-local head gradients, filled on the forward sweep
  std::vector<Eigen::VectorXd> dmu;
  std::vector<double> dval;

  for (int ci : chunk_indices) {
    const RolloutBatch::Chunk& chunk = batch.chunks[ci];
    caches.assign(chunk.len, StepCache{});
    dmu.assign(chunk.len, Eigen::VectorXd());
    dval.assign(chunk.len, 0.0);

    RecurrentState rec{chunk.h0, chunk.c0};
    for (int t = 0; t < chunk.len; ++t) {
      const long row = chunk.begin + t;
      const ForwardResult fw =
          policy_forward(params, batch.obs.row(row).transpose(), rec, &caches[t]);
      rec = fw.rec;

      const Eigen::ArrayXd u = batch.raw_action.row(row).transpose().array();
      const Eigen::ArrayXd mu = fw.raw_mean.array();
      const Eigen::ArrayXd mu_old = batch.old_raw_mean.row(row).transpose().array();

      const Eigen::ArrayXd diff = u - mu;
      const double logp_new = -0.5 * (diff / sigma_new).square().sum() -
                              params.log_std.sum() - act * kHalfLog2Pi;
      const double z = logp_new - batch.logprob_old[row];
      const double ratio = std::exp(z);
      const double adv = batch.advantages[row];

      const double surr_unclipped = ratio * adv;
      const double surr_clipped =
          std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv;
      const bool unclipped_active = surr_unclipped <= surr_clipped;
      sums.policy += -std::min(surr_unclipped, surr_clipped);
      if (std::abs(ratio - 1.0) > config.clip) ++sums.clipped;

      const double kl = (params.log_std.array() - batch.old_log_std.array() +
                         (var_old + (mu_old - mu).square()) / (2.0 * var_new) -
                         0.5)
                            .sum();
      sums.kl += kl;

      const double verr = fw.value - batch.returns[row] / config.value_scale;
      sums.value += verr * verr;
      sums.entropy += entropy_per_step;

      if (grads != nullptr) {
        const double dl_dz = unclipped_active ? -adv * ratio : 0.0;
        Eigen::ArrayXd dmu_t = dl_dz * (diff / var_new);
        // KL pulls the new mean back toward the sampled-time mean
        dmu_t += config.kl_coeff * (mu - mu_old) / var_new;
        dmu[t] = dmu_t.matrix();
        dval[t] = config.vf_coeff * 2.0 * verr;

        grads->log_std.array() +=
            dl_dz * ((diff.square() / var_new) - 1.0) +
            config.kl_coeff *
                (1.0 - (var_old + (mu_old - mu).square()) / var_new) -
            config.entropy_coeff;
      }
    }
    sums.steps += chunk.len;

    if (grads != nullptr) {
      // backward through time over the chunk
      Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(lstm);
      Eigen::VectorXd dc_carry = Eigen::VectorXd::Zero(lstm);
      for (int t = chunk.len - 1; t >= 0; --t) {
        const StepCache& cache = caches[t];
        const Eigen::VectorXd dval_vec = Eigen::VectorXd::Constant(1, dval[t]);

        Eigen::VectorXd dh = params.w_action.transpose() * dmu[t] +
                             params.w_value.transpose() * dval_vec + dh_carry;

        grads->w_action += dmu[t] * cache.h.transpose();
        grads->b_action += dmu[t];
        grads->w_value += dval_vec * cache.h.transpose();
        grads->b_value += dval_vec;

        const Eigen::ArrayXd dout = dh.array() * cache.tanh_c.array();
        Eigen::ArrayXd dc = dh.array() * cache.gate_o.array() *
                                (1.0 - cache.tanh_c.array().square()) +
                            dc_carry.array();
        const Eigen::ArrayXd di = dc * cache.gate_g.array();
        const Eigen::ArrayXd dg = dc * cache.gate_i.array();
        const Eigen::ArrayXd df = dc * cache.c_prev.array();

        Eigen::VectorXd dgates(4 * lstm);
        dgates.segment(0, lstm) =
            (di * cache.gate_i.array() * (1.0 - cache.gate_i.array())).matrix();
        dgates.segment(lstm, lstm) =
            (df * cache.gate_f.array() * (1.0 - cache.gate_f.array())).matrix();
        dgates.segment(2 * lstm, lstm) =
            (dg * (1.0 - cache.gate_g.array().square())).matrix();
        dgates.segment(3 * lstm, lstm) =
            (dout * cache.gate_o.array() * (1.0 - cache.gate_o.array())).matrix();

        grads->lstm_wx += dgates * cache.h2.transpose();
        grads->lstm_wh += dgates * cache.h_prev.transpose();
        grads->lstm_b += dgates;

        dh_carry = params.lstm_wh.transpose() * dgates;
        dc_carry = (dc * cache.gate_f.array()).matrix();

        const Eigen::VectorXd dh2 = params.lstm_wx.transpose() * dgates;
        const Eigen::VectorXd dz2 =
            (dh2.array() * (1.0 - cache.h2.array().square())).matrix();
        grads->w2 += dz2 * cache.h1.transpose();
        grads->b2 += dz2;
        const Eigen::VectorXd dh1 = params.w2.transpose() * dz2;
        const Eigen::VectorXd dz1 =
            (dh1.array() * (1.0 - cache.h1.array().square())).matrix();
        grads->w1 += dz1 * cache.input.transpose();
        grads->b1 += dz1;
      }
    }
  }

  sums.total = sums.policy + config.kl_coeff * sums.kl +
               config.vf_coeff * sums.value - config.entropy_coeff * sums.entropy;
  return sums;
}

namespace {

struct MinibatchPlan {
  std::vector<int> chunk_indices;
  long steps = 0;
};

std::vector<MinibatchPlan> plan_minibatches(const RolloutBatch& batch,
                                            const TrainConfig& config,
                                            Rng& shuffle_rng) {
  std::vector<int> order(batch.chunks.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);
  }
  std::vector<MinibatchPlan> plans;
  MinibatchPlan current;
  for (int ci : order) {
    current.chunk_indices.push_back(ci);
    current.steps += batch.chunks[ci].len;
    if (current.steps >= config.minibatch_size) {
      plans.push_back(std::move(current));
      current = MinibatchPlan{};
    }
  }
  if (!current.chunk_indices.empty()) plans.push_back(std::move(current));
  return plans;
}

// Splits a minibatch across a fixed number of shards and reduces the shard
// gradients in index order, so results do not depend on thread timing.
LossBreakdown minibatch_loss_and_grads(const PolicyParams& params,
                                       const RolloutBatch& batch,
                                       const MinibatchPlan& plan,
                                       const TrainConfig& config,
                                       PolicyParams& grads_out) {
  const int shards =
      std::max(1, std::min<int>(config.rollout_workers,
                                static_cast<int>(plan.chunk_indices.size())));
  std::vector<PolicyParams> shard_grads;
  std::vector<LossBreakdown> shard_losses(shards);
  shard_grads.reserve(shards);
  for (int s = 0; s < shards; ++s) shard_grads.push_back(zero_params(params.dims));

  std::vector<std::thread> threads;
  const long per_shard =
      (static_cast<long>(plan.chunk_indices.size()) + shards - 1) / shards;
  for (int s = 0; s < shards; ++s) {
    const long lo = s * per_shard;
    const long hi = std::min<long>(lo + per_shard,
                                   static_cast<long>(plan.chunk_indices.size()));
    if (lo >= hi) break;
    threads.emplace_back([&, s, lo, hi]() {
      std::vector<int> mine(plan.chunk_indices.begin() + lo,
                            plan.chunk_indices.begin() + hi);
      shard_losses[s] = ppo_loss(params, batch, mine, config, &shard_grads[s]);
    });
  }
  for (auto& t : threads) t.join();

  LossBreakdown total;
  grads_out = zero_params(params.dims);
  for (int s = 0; s < shards; ++s) {
    total.total += shard_losses[s].total;
    total.policy += shard_losses[s].policy;
    total.value += shard_losses[s].value;
    total.kl += shard_losses[s].kl;
    total.entropy += shard_losses[s].entropy;
    total.clipped += shard_losses[s].clipped;
    total.steps += shard_losses[s].steps;
    add_scaled(grads_out, shard_grads[s], 1.0);
  }
  return total;
}

}  // namespace

UpdateMetrics ppo_update(PolicyParams& params, const RolloutBatch& batch,
                         const TrainConfig& config, AdamState& adam,
                         Rng& shuffle_rng) {
  if (batch.size() == 0 || batch.chunks.empty()) {
    throw std::invalid_argument("ppo_update: empty batch");
  }
  const PolicyParams params_snapshot = params;
  const AdamState adam_snapshot = adam;

  UpdateMetrics metrics;
  long total_steps = 0;

  const auto plans = plan_minibatches(batch, config, shuffle_rng);
  PolicyParams grads = zero_params(params.dims);
  for (const auto& plan : plans) {
    const LossBreakdown loss =
        minibatch_loss_and_grads(params, batch, plan, config, grads);
    const double n = static_cast<double>(loss.steps);
    if (!std::isfinite(loss.total) || !grads_finite(grads)) {
      params = params_snapshot;
      adam = adam_snapshot;
      metrics.aborted = true;
      return metrics;
    }
    scale_params(grads, 1.0 / n);
    if (config.grad_clip > 0.0) {
      const double norm = std::sqrt(squared_norm(grads));
      if (norm > config.grad_clip) scale_params(grads, config.grad_clip / norm);
    }
    adam_step(params, grads, adam, config.learning_rate);

    metrics.policy_loss += loss.policy;
    metrics.value_loss += loss.value;
    metrics.kl += loss.kl;
    metrics.clip_fraction += static_cast<double>(loss.clipped);
    total_steps += loss.steps;
  }

  metrics.policy_loss /= static_cast<double>(total_steps);
  metrics.value_loss /= static_cast<double>(total_steps);
  metrics.kl /= static_cast<double>(total_steps);
  metrics.clip_fraction /= static_cast<double>(total_steps);
  return metrics;
}

namespace {

struct WorkerStream {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd raw_action;
  Eigen::MatrixXd old_raw_mean;
  std::vector<double> logprob;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> dones;
  std::vector<RolloutBatch::Chunk> chunks;  // begin is stream-local
  double bootstrap_value = 0.0;
  std::vector<double> episode_returns;
  int divergences = 0;
};

class RolloutWorker {
 public:
  RolloutWorker(const Scenario& scenario, const TrainConfig& config,
                std::uint64_t seed)
      : scenario_(scenario),
        config_(config),
        env_(scenario.system, scenario.reward, scenario.episode),
        rng_(seed),
        rec_(RecurrentState::zero(128)) {}

  WorkerStream collect(const PolicyParams& params, int n_steps) {
    rec_dims_check(params);
    const int obs_dim = scenario_.obs_dim();
    const int act_dim = scenario_.action_dim();
    WorkerStream stream;
    stream.obs.resize(n_steps, obs_dim);
    stream.raw_action.resize(n_steps, act_dim);
    stream.old_raw_mean.resize(n_steps, act_dim);
    stream.logprob.resize(n_steps);
    stream.rewards.resize(n_steps);
    stream.values.resize(n_steps);
    stream.dones.resize(n_steps);

    const Eigen::ArrayXd sigma = params.log_std.array().exp();
    bool last_done = false;

    for (int t = 0; t < n_steps; ++t) {
      if (need_reset_) begin_episode();

      const bool chunk_boundary =
          stream.chunks.empty() ||
          stream.chunks.back().len >= config_.bptt_chunk || last_done;
      if (chunk_boundary) {
        RolloutBatch::Chunk chunk;
        chunk.begin = t;
        chunk.len = 0;
        chunk.h0 = rec_.h;
        chunk.c0 = rec_.c;
        stream.chunks.push_back(std::move(chunk));
      }

      const Eigen::VectorXd obs_vec = current_obs_.flatten();
      const ForwardResult fw = policy_forward(params, obs_vec, rec_);
      rec_ = fw.rec;

      Eigen::VectorXd noise(act_dim);
      for (int k = 0; k < act_dim; ++k) noise(k) = rng_.normal();
      const Eigen::VectorXd u =
          fw.raw_mean + (sigma * noise.array()).matrix();
      const Eigen::ArrayXd diff = (u - fw.raw_mean).array();
      const double logp = -0.5 * (diff / sigma).square().sum() -
                          params.log_std.sum() - act_dim * kHalfLog2Pi;

      std::vector<double> action(act_dim);
      for (int k = 0; k < act_dim; ++k) action[k] = squash(u(k));

      const Environment::EnvStep es = env_.step(action);

      stream.obs.row(t) = obs_vec.transpose();
      stream.raw_action.row(t) = u.transpose();
      stream.old_raw_mean.row(t) = fw.raw_mean.transpose();
      stream.logprob[t] = logp;
      stream.rewards[t] = es.reward.total;
      stream.values[t] = fw.value * config_.value_scale;
      stream.dones[t] = es.done ? 1 : 0;
      stream.chunks.back().len += 1;

      episode_return_ += es.reward.total;
      current_obs_ = es.obs;
      last_done = es.done;
      if (es.done) {
        if (es.detail.terminated) ++stream.divergences;
        stream.episode_returns.push_back(episode_return_);
        need_reset_ = true;
      }
    }

    if (last_done) {
      stream.bootstrap_value = 0.0;
    } else {
      stream.bootstrap_value =
          policy_forward(params, current_obs_.flatten(), rec_).value *
          config_.value_scale;
    }
    return stream;
  }

 private:
  void rec_dims_check(const PolicyParams& params) {
    if (rec_.h.size() != params.dims.lstm) {
      rec_ = RecurrentState::zero(params.dims.lstm);
    }
  }

  void begin_episode() {
    const int length =
        scenario_.episode.episode_length + scenario_.episode.horizon;
    DemandProfile profile = generate_demand(rng_.next_u64(), length,
                                            config_.demand_pattern,
                                            scenario_.demand);
    current_obs_ = env_.reset(std::move(profile), rng_);
    rec_ = RecurrentState::zero(static_cast<int>(rec_.h.size()));
    episode_return_ = 0.0;
    need_reset_ = false;
  }

  Scenario scenario_;
  TrainConfig config_;
  Environment env_;
  Rng rng_;
  RecurrentState rec_;
  Observation current_obs_;
  double episode_return_ = 0.0;
  bool need_reset_ = true;
};

RolloutBatch merge_streams(std::vector<WorkerStream>& streams,
                           const TrainConfig& config, int obs_dim,
                           int act_dim, const Eigen::VectorXd& log_std,
                           std::vector<double>* episode_returns,
                           int* divergences) {
  long total = 0;
  for (const auto& s : streams) total += s.obs.rows();

  RolloutBatch batch;
  batch.obs.resize(total, obs_dim);
  batch.raw_action.resize(total, act_dim);
  batch.old_raw_mean.resize(total, act_dim);
  batch.old_log_std = log_std;
  batch.logprob_old.resize(total);
  batch.rewards.resize(total);
  batch.values.resize(total);
  batch.advantages.resize(total);
  batch.returns.resize(total);
  batch.dones.resize(total);

  long offset = 0;
  for (auto& s : streams) {
    const long n = s.obs.rows();
    batch.obs.middleRows(offset, n) = s.obs;
    batch.raw_action.middleRows(offset, n) = s.raw_action;
    batch.old_raw_mean.middleRows(offset, n) = s.old_raw_mean;
    std::copy(s.logprob.begin(), s.logprob.end(),
              batch.logprob_old.begin() + offset);
    std::copy(s.rewards.begin(), s.rewards.end(), batch.rewards.begin() + offset);
    std::copy(s.values.begin(), s.values.end(), batch.values.begin() + offset);
    std::copy(s.dones.begin(), s.dones.end(), batch.dones.begin() + offset);

    const GaeResult gae = compute_gae(s.rewards, s.values, s.dones,
                                      config.gamma, config.gae_lambda,
                                      s.bootstrap_value);
    std::copy(gae.advantages.begin(), gae.advantages.end(),
              batch.advantages.begin() + offset);
    std::copy(gae.returns.begin(), gae.returns.end(),
              batch.returns.begin() + offset);

    for (auto chunk : s.chunks) {
      chunk.begin += offset;
      batch.chunks.push_back(std::move(chunk));
    }
    episode_returns->insert(episode_returns->end(), s.episode_returns.begin(),
                            s.episode_returns.end());
    *divergences += s.divergences;
    offset += n;
  }

  // normalize advantages over the whole batch
  double mean = 0.0;
  for (double a : batch.advantages) mean += a;
  mean /= static_cast<double>(total);
  double var = 0.0;
  for (double a : batch.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(total);
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  for (double& a : batch.advantages) a = (a - mean) * inv_std;
  return batch;
}

}  // namespace

void write_learning_curve_csv(const std::string& path,
                              const std::vector<IterationStats>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write learning curve: " + path);
  out << "iteration,mean_reward,policy_loss,value_loss,kl,clip_fraction\n";
  for (const auto& row : curve) {
    out << row.iteration << ',' << format_double(row.mean_reward) << ','
        << format_double(row.policy_loss) << ','
        << format_double(row.value_loss) << ',' << format_double(row.kl) << ','
        << format_double(row.clip_fraction) << '\n';
  }
}

TrainResult train(const Scenario& scenario, const TrainConfig& config,
                  std::uint64_t seed, const std::string& out_dir) {
  scenario.validate();
  config.validate();

  NetworkDims dims;
  dims.obs = scenario.obs_dim();
  dims.action = scenario.action_dim();

  Rng init_rng(mix_seed(seed, 1));
  TrainResult result;
  result.params = init_params(dims, init_rng);
  result.params.scenario_hash = scenario.config_hash();

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  AdamState adam = AdamState::zero_like(result.params);
  Rng shuffle_rng(mix_seed(seed, 2));

  std::vector<RolloutWorker> workers;
  workers.reserve(config.rollout_workers);
  for (int w = 0; w < config.rollout_workers; ++w) {
    workers.emplace_back(scenario, config, mix_seed(seed, 1000 + w));
  }
  const int steps_per_worker = config.steps_per_iteration / config.rollout_workers;

  std::deque<double> recent_returns;  // rolling window for curve + early stop
  std::vector<double> ma_history;
  PolicyParams best_params = result.params;
  double best_reward = -std::numeric_limits<double>::infinity();

  for (int iteration = 1; iteration <= config.max_iterations; ++iteration) {
    std::vector<WorkerStream> streams(workers.size());
    {
      std::vector<std::thread> threads;
      threads.reserve(workers.size());
      for (std::size_t w = 0; w < workers.size(); ++w) {
        threads.emplace_back([&, w]() {
          streams[w] = workers[w].collect(result.params, steps_per_worker);
        });
      }
      for (auto& t : threads) t.join();
    }

    std::vector<double> episode_returns;
    int divergences = 0;
    RolloutBatch batch =
        merge_streams(streams, config, dims.obs, dims.action,
                      result.params.log_std, &episode_returns, &divergences);
    result.total_divergences += divergences;

    for (double r : episode_returns) {
      recent_returns.push_back(r);
      if (recent_returns.size() > 20) recent_returns.pop_front();
    }
    const double mean_reward =
        recent_returns.empty()
            ? 0.0
            : std::accumulate(recent_returns.begin(), recent_returns.end(), 0.0) /
                  static_cast<double>(recent_returns.size());

    IterationStats stats;
    stats.iteration = iteration;
    stats.mean_reward = mean_reward;
    stats.episodes_completed = static_cast<int>(episode_returns.size());
    stats.divergences = divergences;

    int epochs_run = 0;
    for (int epoch = 0; epoch < config.epochs_per_iteration; ++epoch) {
      const UpdateMetrics metrics =
          ppo_update(result.params, batch, config, adam, shuffle_rng);
      if (metrics.aborted) {
        stats.policy_loss = std::numeric_limits<double>::quiet_NaN();
        break;
      }
      stats.policy_loss += metrics.policy_loss;
      stats.value_loss += metrics.value_loss;
      stats.kl += metrics.kl;
      stats.clip_fraction += metrics.clip_fraction;
      ++epochs_run;
    }
    if (epochs_run > 0) {
      stats.policy_loss /= epochs_run;
      stats.value_loss /= epochs_run;
      stats.kl /= epochs_run;
      stats.clip_fraction /= epochs_run;
    }
    result.curve.push_back(stats);

    if (!episode_returns.empty() && mean_reward > best_reward) {
      best_reward = mean_reward;
      best_params = result.params;
    }

    if (!out_dir.empty() && iteration == config.checkpoint_iteration) {
      result.checkpoint_early_path =
          out_dir + "/checkpoint_iter" + std::to_string(iteration) + ".bin";
      save_params(result.params, result.checkpoint_early_path);
    }

    // early stopping on the 20-iteration moving average of episode reward
    ma_history.push_back(mean_reward);
    if (config.early_stop_patience > 0 &&
        static_cast<int>(ma_history.size()) >= 20 + config.early_stop_patience) {
      auto ma_at = [&](int end_index) {
        double sum = 0.0;
        for (int i = end_index - 20; i < end_index; ++i) sum += ma_history[i];
        return sum / 20.0;
      };
      const int now = static_cast<int>(ma_history.size());
      const double ma_now = ma_at(now);
      const double ma_then = ma_at(now - config.early_stop_patience);
      if (std::abs(ma_then) > 0.0 &&
          (ma_now - ma_then) / std::abs(ma_then) < 0.005) {
        result.stopped_early = true;
        break;
      }
    }
  }

  result.best_mean_reward = best_reward;
  if (!out_dir.empty()) {
    result.checkpoint_final_path = out_dir + "/checkpoint_final.bin";
    save_params(result.params, result.checkpoint_final_path);
    if (std::isfinite(best_reward)) {
      result.checkpoint_best_path = out_dir + "/checkpoint_best.bin";
      save_params(best_params, result.checkpoint_best_path);
    }
    result.curve_path = out_dir + "/curve.csv";
    write_learning_curve_csv(result.curve_path, result.curve);
  }
  return result;
}

}  // namespace capsim
