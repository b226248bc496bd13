// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/heads.hpp"

#include <cmath>

#include "mtlcap/error.hpp"
#include "mtlcap/rng.hpp"

namespace mtlcap::heads {

void ClassifierHeadParams::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t l = 0; l < hidden_w.size(); ++l) {
    f(prefix + "fc" + std::to_string(l) + ".w", hidden_w[l]);
    f(prefix + "fc" + std::to_string(l) + ".b", hidden_b[l]);
  }
  f(prefix + "out.w", out_w);
  f(prefix + "out.b", out_b);
}

ClassifierHeadParams ClassifierHeadParams::zeros_like() const {
  ClassifierHeadParams z;
  for (const auto& w : hidden_w) z.hidden_w.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const auto& b : hidden_b) z.hidden_b.push_back(Mat::Zero(b.rows(), b.cols()));
  z.out_w = Mat::Zero(out_w.rows(), out_w.cols());
  z.out_b = Mat::Zero(out_b.rows(), out_b.cols());
  return z;
}

Row head_logits(const Mat& grid, const ClassifierHeadParams& params, const Mode& mode, HeadCache* cache) {
  if (grid.rows() < 1 || grid.cols() != params.input_dim())
    throw Error(ErrorCode::ShapeMismatch, "annotation grid width " + std::to_string(grid.cols()) +
                                              " does not match head input " + std::to_string(params.input_dim()));
  Row x = grid.colwise().mean();
  if (cache) {
    cache->positions = grid.rows();
    cache->inputs.clear();
    cache->pre.clear();
    cache->masks.clear();
  }
  for (std::size_t l = 0; l < params.hidden_w.size(); ++l) {
    Row pre = x * params.hidden_w[l] + params.hidden_b[l];
    Row mask = mode.mask(1, pre.cols());
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(pre);
      cache->masks.push_back(mask);
    }
    x = pre.cwiseMax(0.0).cwiseProduct(mask);
  }
  if (cache) cache->inputs.push_back(x);
  Row logits = x * params.out_w + params.out_b;
  if (cache) cache->logits = logits;
  return logits;
}

Row head_forward(const Mat& grid, const ClassifierHeadParams& params, const Mode& mode, HeadCache* cache) {
  Row probs = softmax(head_logits(grid, params, mode, cache));
  if (cache) cache->probs = probs;
  return probs;
}

double classification_loss(const Row& probs, int label) {
  if (label < 0 || label >= probs.size())
    throw Error(ErrorCode::LabelOutOfRange, std::to_string(label) + " not in [0, " + std::to_string(probs.size()) + ")");
  return -std::log(probs(label) + kLogEpsilon);
}

Mat head_backward(const HeadCache& cache, const ClassifierHeadParams& params, int label, double scale,
                  ClassifierHeadParams& grads) {
  if (label < 0 || label >= cache.probs.size())
    throw Error(ErrorCode::LabelOutOfRange, std::to_string(label));
  Row d = cache.probs * scale;
  d(label) -= scale;
  grads.out_w.noalias() += cache.inputs.back().transpose() * d;
  grads.out_b += d;
  Row dx = d * params.out_w.transpose();
  for (std::size_t l = params.hidden_w.size(); l-- > 0;) {
    Row d_pre = dx.cwiseProduct(cache.masks[l]).cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    grads.hidden_w[l].noalias() += cache.inputs[l].transpose() * d_pre;
    grads.hidden_b[l] += d_pre;
    dx = d_pre * params.hidden_w[l].transpose();
  }
  // mean pooling spreads the pooled gradient evenly over positions
  return Mat(dx.replicate(cache.positions, 1) / static_cast<double>(cache.positions));
}

ClassifierHeadParams init_head(std::uint64_t seed, int input_dim, int classes, int hidden_width, int hidden_layers) {
  if (input_dim < 1 || classes < 1 || hidden_width < 1 || hidden_layers < 0)
    throw Error(ErrorCode::ConfigError, "bad head shape");
  Rng rng(seed);
  ClassifierHeadParams p;
  int in = input_dim;
  for (int l = 0; l < hidden_layers; ++l) {
    p.hidden_w.push_back(glorot_uniform(in, hidden_width, in, hidden_width, rng));
    p.hidden_b.push_back(Mat::Zero(1, hidden_width));
    in = hidden_width;
  }
  p.out_w = glorot_uniform(in, classes, in, classes, rng);
  p.out_b = Mat::Zero(1, classes);
  for (auto& w : p.hidden_w) round_to_float(w);
  round_to_float(p.out_w);
  return p;
}

}  // namespace mtlcap::heads
