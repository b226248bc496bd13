// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "mtlcap/rng.hpp"

namespace mtlcap {

// Row-vector convention throughout: activations are rows, y = x * W + b.
using Mat = Eigen::MatrixXd;
using Row = Eigen::RowVectorXd;

/// A named view of one trainable tensor. Biases are stored as 1 x n.
struct ParamRef {
  std::string name;
  Mat* value;
};

using ParamVisitor = std::function<void(const std::string&, Mat&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Mat&)>;

Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, Rng& rng);
Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng);

Row softmax(const Row& logits);
Row log_softmax(const Row& logits);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Inverted dropout mask: entries are 0 or 1/(1-rate). All ones when rng is
/// null or rate is zero.
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng);

/// Rounds every coefficient to the nearest float32, matching what a
/// checkpoint can store.
void round_to_float(Mat& m);

}  // namespace mtlcap

namespace mtlcap {

inline constexpr double kDropoutRate = 0.2;

/// Forward-pass mode. Dropout is sampled from `rng` only when training.
struct Mode {
  bool training = false;
  Rng* rng = nullptr;
  double dropout = kDropoutRate;

  static Mode inference() { return {}; }
  static Mode train(Rng& r, double rate = kDropoutRate) { return {true, &r, rate}; }

  Mat mask(Eigen::Index rows, Eigen::Index cols) const {
    return dropout_mask(rows, cols, dropout, training ? rng : nullptr);
  }
};

}  // namespace mtlcap
