#include "capsim/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace capsim {

namespace {

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& z) {
  return 1.0 / (1.0 + (-z).exp());
}

}  // namespace

void PolicyParams::validate() const {
  const int n = dims.obs, a = dims.action, h = dims.hidden, l = dims.lstm;
  if (n <= 0 || a <= 0 || h <= 0 || l <= 0) {
    throw ConfigError("policy dims must be positive");
  }
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("policy parameter shape mismatch: ") + what);
  };
  check(w1.rows() == h && w1.cols() == n, "w1");
  check(b1.size() == h, "b1");
  check(w2.rows() == h && w2.cols() == h, "w2");
  check(b2.size() == h, "b2");
  check(lstm_wx.rows() == 4 * l && lstm_wx.cols() == h, "lstm_wx");
  check(lstm_wh.rows() == 4 * l && lstm_wh.cols() == l, "lstm_wh");
  check(lstm_b.size() == 4 * l, "lstm_b");
  check(w_action.rows() == a && w_action.cols() == l, "w_action");
  check(b_action.size() == a, "b_action");
  check(w_value.rows() == 1 && w_value.cols() == l, "w_value");
  check(b_value.size() == 1, "b_value");
  check(log_std.size() == a, "log_std");
  if (!all_finite()) throw ConfigError("policy parameters contain non-finite values");
}

long PolicyParams::n_params() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + lstm_wx.size() +
         lstm_wh.size() + lstm_b.size() + w_action.size() + b_action.size() +
         w_value.size() + b_value.size() + log_std.size();
}

bool PolicyParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
         lstm_wx.allFinite() && lstm_wh.allFinite() && lstm_b.allFinite() &&
         w_action.allFinite() && b_action.allFinite() && w_value.allFinite() &&
         b_value.allFinite() && log_std.allFinite();
}

PolicyParams zero_params(const NetworkDims& dims) {
  PolicyParams p;
  p.dims = dims;
  p.w1 = Eigen::MatrixXd::Zero(dims.hidden, dims.obs);
  p.b1 = Eigen::VectorXd::Zero(dims.hidden);
  p.w2 = Eigen::MatrixXd::Zero(dims.hidden, dims.hidden);
  p.b2 = Eigen::VectorXd::Zero(dims.hidden);
  p.lstm_wx = Eigen::MatrixXd::Zero(4 * dims.lstm, dims.hidden);
  p.lstm_wh = Eigen::MatrixXd::Zero(4 * dims.lstm, dims.lstm);
  p.lstm_b = Eigen::VectorXd::Zero(4 * dims.lstm);
  p.w_action = Eigen::MatrixXd::Zero(dims.action, dims.lstm);
  p.b_action = Eigen::VectorXd::Zero(dims.action);
  p.w_value = Eigen::MatrixXd::Zero(1, dims.lstm);
  p.b_value = Eigen::VectorXd::Zero(1);
  p.log_std = Eigen::VectorXd::Zero(dims.action);
  return p;
}

PolicyParams init_params(const NetworkDims& dims, Rng& rng) {
  PolicyParams p = zero_params(dims);
  auto fill = [&rng](Eigen::MatrixXd& m, double scale) {
    for (long c = 0; c < m.cols(); ++c) {
      for (long r = 0; r < m.rows(); ++r) m(r, c) = scale * rng.normal();
    }
  };
  fill(p.w1, 1.0 / std::sqrt(static_cast<double>(dims.obs)));
  fill(p.w2, 1.0 / std::sqrt(static_cast<double>(dims.hidden)));
  fill(p.lstm_wx, 1.0 / std::sqrt(static_cast<double>(dims.hidden)));
  fill(p.lstm_wh, 1.0 / std::sqrt(static_cast<double>(dims.lstm)));
  // small heads keep the initial policy near the mid-range setpoint
  fill(p.w_action, 0.01 / std::sqrt(static_cast<double>(dims.lstm)));
  fill(p.w_value, 1.0 / std::sqrt(static_cast<double>(dims.lstm)));
  p.log_std.setConstant(-0.5);
  return p;
}

RecurrentState RecurrentState::zero(int lstm_width) {
  RecurrentState rec;
  rec.h = Eigen::VectorXd::Zero(lstm_width);
  rec.c = Eigen::VectorXd::Zero(lstm_width);
  return rec;
}

double squash(double raw) { return 0.5 * (std::tanh(raw) + 1.0); }

Eigen::VectorXd squash(const Eigen::VectorXd& raw) {
  return 0.5 * (raw.array().tanh() + 1.0);
}

ForwardResult policy_forward(const PolicyParams& params,
                             const Eigen::VectorXd& obs,
                             const RecurrentState& rec, StepCache* cache) {
  if (obs.size() != params.dims.obs) {
    throw ConfigError("policy_forward: observation width " +
                      std::to_string(obs.size()) + " does not match network (" +
                      std::to_string(params.dims.obs) + ")");
  }
  const int l = params.dims.lstm;
  if (rec.h.size() != l || rec.c.size() != l) {
    throw ConfigError("policy_forward: recurrent state width mismatch");
  }

  const Eigen::VectorXd h1 = (params.w1 * obs + params.b1).array().tanh();
  const Eigen::VectorXd h2 = (params.w2 * h1 + params.b2).array().tanh();

  const Eigen::VectorXd gates =
      params.lstm_wx * h2 + params.lstm_wh * rec.h + params.lstm_b;
  const Eigen::VectorXd gi = sigmoid(gates.segment(0, l).array());
  const Eigen::VectorXd gf = sigmoid(gates.segment(l, l).array());
  const Eigen::VectorXd gg = gates.segment(2 * l, l).array().tanh();
  const Eigen::VectorXd go = sigmoid(gates.segment(3 * l, l).array());

  const Eigen::VectorXd c =
      (gf.array() * rec.c.array() + gi.array() * gg.array()).matrix();
  const Eigen::VectorXd tanh_c = c.array().tanh();
  const Eigen::VectorXd h = (go.array() * tanh_c.array()).matrix();

  ForwardResult out;
  out.raw_mean = params.w_action * h + params.b_action;
  out.action_mean = squash(out.raw_mean);
  out.value = (params.w_value * h + params.b_value)(0);
  out.rec.h = h;
  out.rec.c = c;

  if (cache != nullptr) {
    cache->input = obs;
    cache->h1 = h1;
    cache->h2 = h2;
    cache->gate_i = gi;
    cache->gate_f = gf;
    cache->gate_g = gg;
    cache->gate_o = go;
    cache->c_prev = rec.c;
    cache->h_prev = rec.h;
    cache->c = c;
    cache->tanh_c = tanh_c;
    cache->h = h;
    cache->raw_mean = out.raw_mean;
    cache->value = out.value;
  }
  return out;
}

Eigen::VectorXd deterministic_action(const PolicyParams& params,
                                     const Eigen::VectorXd& obs) {
  return policy_forward(params, obs, RecurrentState::zero(params.dims.lstm))
      .action_mean;
}

Eigen::VectorXd input_gradient(const PolicyParams& params,
                               const Eigen::VectorXd& obs) {
  StepCache cache;
  policy_forward(params, obs, RecurrentState::zero(params.dims.lstm), &cache);
  const int l = params.dims.lstm;

  // d(sum_k squash(raw_k))/draw = 0.5 * (1 - tanh^2)
  const Eigen::ArrayXd t = cache.raw_mean.array().tanh();
  const Eigen::VectorXd draw = (0.5 * (1.0 - t.square())).matrix();

  Eigen::VectorXd dh = params.w_action.transpose() * draw;

  // LSTM step backward at zero initial state: the forget path vanishes.
  const Eigen::ArrayXd dout = dh.array() * cache.tanh_c.array();
  const Eigen::ArrayXd dc =
      dh.array() * cache.gate_o.array() * (1.0 - cache.tanh_c.array().square());
  const Eigen::ArrayXd di = dc * cache.gate_g.array();
  const Eigen::ArrayXd dg = dc * cache.gate_i.array();

  Eigen::VectorXd dgates(4 * l);
  dgates.segment(0, l) =
      (di * cache.gate_i.array() * (1.0 - cache.gate_i.array())).matrix();
  dgates.segment(l, l).setZero();
  dgates.segment(2 * l, l) = (dg * (1.0 - cache.gate_g.array().square())).matrix();
  dgates.segment(3 * l, l) =
      (dout * cache.gate_o.array() * (1.0 - cache.gate_o.array())).matrix();

  const Eigen::VectorXd dh2_pre = params.lstm_wx.transpose() * dgates;
  const Eigen::VectorXd dz2 =
      (dh2_pre.array() * (1.0 - cache.h2.array().square())).matrix();
  const Eigen::VectorXd dh1 = params.w2.transpose() * dz2;
  const Eigen::VectorXd dz1 =
      (dh1.array() * (1.0 - cache.h1.array().square())).matrix();
  return params.w1.transpose() * dz1;
}

Eigen::MatrixXd batch_deterministic_actions(const PolicyParams& params,
                                            const Eigen::MatrixXd& obs_rows) {
  if (obs_rows.cols() != params.dims.obs) {
    throw ConfigError("batch_deterministic_actions: observation width mismatch");
  }
  const int l = params.dims.lstm;
  const long n = obs_rows.rows();

  Eigen::MatrixXd h1 =
      ((obs_rows * params.w1.transpose()).rowwise() + params.b1.transpose())
          .array()
          .tanh();
  Eigen::MatrixXd h2 =
      ((h1 * params.w2.transpose()).rowwise() + params.b2.transpose())
          .array()
          .tanh();
  Eigen::MatrixXd gates =
      (h2 * params.lstm_wx.transpose()).rowwise() + params.lstm_b.transpose();

  Eigen::ArrayXXd gi = 1.0 / (1.0 + (-gates.middleCols(0, l).array()).exp());
  Eigen::ArrayXXd gg = gates.middleCols(2 * l, l).array().tanh();
  Eigen::ArrayXXd go = 1.0 / (1.0 + (-gates.middleCols(3 * l, l).array()).exp());

  Eigen::MatrixXd h(n, l);
  h.array() = go * (gi * gg).tanh();

  Eigen::MatrixXd raw =
      (h * params.w_action.transpose()).rowwise() + params.b_action.transpose();
  return 0.5 * (raw.array().tanh() + 1.0);
}

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'S', 'P', 'O', 'L', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_tensor(std::ostream& out, const std::string& name,
                  const double* data, std::uint64_t rows, std::uint64_t cols) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(out, rows);
  write_u64(out, cols);
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw DataError(path + ": truncated parameter file");
  }
  return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw DataError(path + ": truncated parameter file");
  }
  return v;
}

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd data;
};

NamedTensor read_tensor(std::istream& in, const std::string& path) {
  NamedTensor t;
  const std::uint32_t name_len = read_u32(in, path);
  if (name_len > 256) throw DataError(path + ": implausible tensor name length");
  t.name.resize(name_len);
  if (!in.read(t.name.data(), name_len)) {
    throw DataError(path + ": truncated parameter file");
  }
  const std::uint64_t rows = read_u64(in, path);
  const std::uint64_t cols = read_u64(in, path);
  if (rows == 0 || cols == 0 || rows * cols > (1ull << 28)) {
    throw DataError(path + ": implausible tensor shape for '" + t.name + "'");
  }
  t.data.resize(static_cast<long>(rows), static_cast<long>(cols));
  if (!in.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(rows * cols * sizeof(double)))) {
    throw DataError(path + ": truncated parameter file");
  }
  return t;
}

}  // namespace

void save_params(const PolicyParams& params, const std::string& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kFormatVersion);
  write_u64(out, params.scenario_hash);

  const std::uint32_t n_tensors = 12;
  write_u32(out, n_tensors);
  write_tensor(out, "w1", params.w1.data(), params.w1.rows(), params.w1.cols());
  write_tensor(out, "b1", params.b1.data(), params.b1.size(), 1);
  write_tensor(out, "w2", params.w2.data(), params.w2.rows(), params.w2.cols());
  write_tensor(out, "b2", params.b2.data(), params.b2.size(), 1);
  write_tensor(out, "lstm_wx", params.lstm_wx.data(), params.lstm_wx.rows(),
               params.lstm_wx.cols());
  write_tensor(out, "lstm_wh", params.lstm_wh.data(), params.lstm_wh.rows(),
               params.lstm_wh.cols());
  write_tensor(out, "lstm_b", params.lstm_b.data(), params.lstm_b.size(), 1);
  write_tensor(out, "w_action", params.w_action.data(), params.w_action.rows(),
               params.w_action.cols());
  write_tensor(out, "b_action", params.b_action.data(), params.b_action.size(), 1);
  write_tensor(out, "w_value", params.w_value.data(), params.w_value.rows(),
               params.w_value.cols());
  write_tensor(out, "b_value", params.b_value.data(), params.b_value.size(), 1);
  write_tensor(out, "log_std", params.log_std.data(), params.log_std.size(), 1);
  if (!out) throw DataError("write failed: " + path);
}

PolicyParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open parameter file: " + path);

  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path + ": not a capsim parameter file");
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kFormatVersion) {
    throw DataError(path + ": unsupported format version " +
                    std::to_string(version));
  }
  const std::uint64_t hash = read_u64(in, path);
  const std::uint32_t n_tensors = read_u32(in, path);
  if (n_tensors != 12) {
    throw DataError(path + ": expected 12 tensors, found " +
                    std::to_string(n_tensors));
  }

  std::vector<NamedTensor> tensors;
  tensors.reserve(n_tensors);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    tensors.push_back(read_tensor(in, path));
  }
  // ensure there is no trailing garbage
  char extra;
  if (in.read(&extra, 1)) {
    throw DataError(path + ": trailing bytes after last tensor");
  }

  auto find = [&](const char* name) -> const Eigen::MatrixXd& {
    for (const auto& t : tensors) {
      if (t.name == name) return t.data;
    }
    throw DataError(path + ": missing tensor '" + std::string(name) + "'");
  };

  PolicyParams p;
  p.scenario_hash = hash;
  p.w1 = find("w1");
  p.b1 = find("b1");
  p.w2 = find("w2");
  p.b2 = find("b2");
  p.lstm_wx = find("lstm_wx");
  p.lstm_wh = find("lstm_wh");
  p.lstm_b = find("lstm_b");
  p.w_action = find("w_action");
  p.b_action = find("b_action");
  p.w_value = find("w_value");
  p.b_value = find("b_value");
  p.log_std = find("log_std");

  p.dims.obs = static_cast<int>(p.w1.cols());
  p.dims.hidden = static_cast<int>(p.w1.rows());
  p.dims.lstm = static_cast<int>(p.lstm_wh.cols());
  p.dims.action = static_cast<int>(p.w_action.rows());
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw DataError(path + ": inconsistent tensors: " + e.what());
  }
  return p;
}

PolicyParams load_params(const std::string& path, std::uint64_t expected_hash) {
  PolicyParams p = load_params(path);
  if (p.scenario_hash != expected_hash) {
    throw ConfigError(path +
                      ": parameter file was trained for a different scenario "
                      "configuration (hash mismatch); refusing to load");
  }
  return p;
}

}  // namespace capsim
