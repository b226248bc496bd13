// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtlcap/features.hpp"
#include "mtlcap/nn.hpp"

namespace mtlcap::encoder {

inline constexpr int kWidth = 64;
inline constexpr int kLayers = 6;

/// The shared trunk: a 1x1 projection from backbone channels to the stack
/// width, then 3x3 stride-1 convolutions with zero padding 1.
///
/// Conv weights are stored im2col-style as (9 * C) x C: row block k holds the
/// C x C kernel tap for offset (k / 3 - 1, k % 3 - 1).
struct SharedEncoderParams {
  Mat proj_w;  // D x C
  Mat proj_b;  // 1 x C
  std::vector<Mat> conv_w;
  std::vector<Mat> conv_b;  // 1 x C each

  int input_dim() const { return static_cast<int>(proj_w.rows()); }
  int width() const { return static_cast<int>(proj_w.cols()); }
  int layers() const { return static_cast<int>(conv_w.size()); }

  void visit(const std::string& prefix, const ParamVisitor& f);
  SharedEncoderParams zeros_like() const;
};

struct EncoderCache {
  int side = 0;
  Mat input;
  std::vector<Mat> cols;  // im2col of each layer's input
  std::vector<Mat> pre;   // pre-activation of each layer
  std::vector<Mat> masks;
};

/// Output is L x C. L must be a perfect square.
Mat encode(const Mat& grid, const SharedEncoderParams& params, const Mode& mode,
           EncoderCache* cache = nullptr);
Mat encode(const features::FeatureGrid& grid, const SharedEncoderParams& params, const Mode& mode,
           EncoderCache* cache = nullptr);

/// Accumulates into `grads`; returns d(loss)/d(input grid).
Mat encode_backward(const EncoderCache& cache, const SharedEncoderParams& params, const Mat& d_out,
                    SharedEncoderParams& grads);

/// Glorot-uniform weights, zero biases.
SharedEncoderParams init_encoder(std::uint64_t seed, int d_in, int width = kWidth, int layers = kLayers);

/// 3x3/pad-1 patch matrix of an S x S map: L x (9 * C).
Mat im2col3x3(const Mat& in, int side);
/// Adjoint of im2col3x3.
Mat col2im3x3(const Mat& cols, int side, int channels);

}  // namespace mtlcap::encoder
