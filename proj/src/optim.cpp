// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/optim.hpp"

#include <cmath>

#include "mtlcap/error.hpp"

namespace mtlcap::optim {

void adam_step(const std::vector<ParamRef>& params, const std::vector<const Mat*>& grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "parameter/gradient count differs");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].value->rows() != grads[i]->rows() || params[i].value->cols() != grads[i]->cols())
      throw Error(ErrorCode::ShapeMismatch, "gradient shape for " + params[i].name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& theta = *params[i].value;
    const Mat& g = *grads[i];
    auto [mit, m_new] = state.m.try_emplace(params[i].name, Mat::Zero(theta.rows(), theta.cols()));
    auto [vit, v_new] = state.v.try_emplace(params[i].name, Mat::Zero(theta.rows(), theta.cols()));
    Mat& m = mit->second;
    Mat& v = vit->second;
    if (m.rows() != theta.rows() || m.cols() != theta.cols())
      throw Error(ErrorCode::ShapeMismatch, "optimizer moment shape for " + params[i].name);
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    theta.array() -= config.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon);
  }
}

double global_norm(const std::vector<const Mat*>& grads) {
  double sq = 0.0;
  for (const Mat* g : grads) sq += g->squaredNorm();
  return std::sqrt(sq);
}

double clip_global_norm(const std::vector<Mat*>& grads, double max_norm) {
  std::vector<const Mat*> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (!(norm > max_norm) || max_norm <= 0.0) return 1.0;
  const double factor = max_norm / norm;
  for (Mat* g : grads) *g *= factor;
  return factor;
}

}  // namespace mtlcap::optim
