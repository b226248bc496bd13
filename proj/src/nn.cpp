// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/nn.hpp"

#include <cmath>

namespace mtlcap {

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  Mat m(rows, cols);
  // Column-major fill order is part of the seeded-init contract.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(lo, hi);
  return m;
}

Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform_matrix(rows, cols, -bound, bound, rng);
}

Row softmax(const Row& logits) {
  Row e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Row log_softmax(const Row& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  Mat mask = Mat::Ones(rows, cols);
  if (rng == nullptr || rate <= 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = rng->bernoulli(rate) ? 0.0 : keep;
  return mask;
}

void round_to_float(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

}  // namespace mtlcap
