// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtlcap/nn.hpp"

namespace mtlcap::optim {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments keyed by parameter name, plus the shared step count.
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
};

/// One bias-corrected Adam update. `grads[i]` belongs to `params[i]`.
void adam_step(const std::vector<ParamRef>& params, const std::vector<const Mat*>& grads, AdamState& state,
               const AdamConfig& config);

double global_norm(const std::vector<const Mat*>& grads);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when already within bounds).
double clip_global_norm(const std::vector<Mat*>& grads, double max_norm);

}  // namespace mtlcap::optim
