#pragma once

#include <Eigen/Core>

#include "capsim/policy.hpp"

// bitwise equality helpers for test assertions
inline bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

inline bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

inline bool same_params(const capsim::PolicyParams& a,
                        const capsim::PolicyParams& b) {
  return same_bits(a.w1, b.w1) && same_bits(a.b1, b.b1) &&
         same_bits(a.w2, b.w2) && same_bits(a.b2, b.b2) &&
         same_bits(a.lstm_wx, b.lstm_wx) && same_bits(a.lstm_wh, b.lstm_wh) &&
         same_bits(a.lstm_b, b.lstm_b) && same_bits(a.w_action, b.w_action) &&
         same_bits(a.b_action, b.b_action) && same_bits(a.w_value, b.w_value) &&
         same_bits(a.b_value, b.b_value) && same_bits(a.log_std, b.log_std) &&
         a.scenario_hash == b.scenario_hash;
}
