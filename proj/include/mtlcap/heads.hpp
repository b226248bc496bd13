// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtlcap/nn.hpp"

namespace mtlcap::heads {

inline constexpr int kHiddenWidth = 64;
inline constexpr int kHiddenLayers = 2;
inline constexpr int kActionClasses = 40;
inline constexpr int kObjectClasses = 100;
inline constexpr double kLogEpsilon = 1e-12;

/// Mean-pool -> [FC + ReLU + dropout] x hidden layers -> FC(K) -> softmax.
struct ClassifierHeadParams {
  std::vector<Mat> hidden_w;
  std::vector<Mat> hidden_b;
  Mat out_w;  // H x K
  Mat out_b;  // 1 x K

  int classes() const { return static_cast<int>(out_w.cols()); }
  int input_dim() const { return static_cast<int>(hidden_w.empty() ? out_w.rows() : hidden_w.front().rows()); }

  void visit(const std::string& prefix, const ParamVisitor& f);
  ClassifierHeadParams zeros_like() const;
};

struct HeadCache {
  Eigen::Index positions = 0;
  std::vector<Row> inputs;  // input of each hidden layer, then of the output layer
  std::vector<Row> pre;
  std::vector<Row> masks;
  Row logits;
  Row probs;
};

Row head_logits(const Mat& grid, const ClassifierHeadParams& params, const Mode& mode,
                HeadCache* cache = nullptr);
Row head_forward(const Mat& grid, const ClassifierHeadParams& params, const Mode& mode,
                 HeadCache* cache = nullptr);

/// -log(probs[label] + 1e-12).
double classification_loss(const Row& probs, int label);

/// Backward of classification_loss through the head, scaled by `scale`.
/// Uses d(loss)/d(logits) = probs - one_hot(label). Returns d(loss)/d(grid).
Mat head_backward(const HeadCache& cache, const ClassifierHeadParams& params, int label, double scale,
                  ClassifierHeadParams& grads);

ClassifierHeadParams init_head(std::uint64_t seed, int input_dim, int classes,
                               int hidden_width = kHiddenWidth, int hidden_layers = kHiddenLayers);

}  // namespace mtlcap::heads
