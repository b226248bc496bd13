// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/encoder.hpp"

#include <cmath>

#include "mtlcap/error.hpp"
#include "mtlcap/rng.hpp"

namespace mtlcap::encoder {

void SharedEncoderParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "proj.w", proj_w);
  f(prefix + "proj.b", proj_b);
  for (std::size_t l = 0; l < conv_w.size(); ++l) {
    f(prefix + "conv" + std::to_string(l) + ".w", conv_w[l]);
    f(prefix + "conv" + std::to_string(l) + ".b", conv_b[l]);
  }
}

SharedEncoderParams SharedEncoderParams::zeros_like() const {
  SharedEncoderParams z;
  z.proj_w = Mat::Zero(proj_w.rows(), proj_w.cols());
  z.proj_b = Mat::Zero(proj_b.rows(), proj_b.cols());
  for (const auto& w : conv_w) z.conv_w.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const auto& b : conv_b) z.conv_b.push_back(Mat::Zero(b.rows(), b.cols()));
  return z;
}

Mat im2col3x3(const Mat& in, int side) {
  const Eigen::Index C = in.cols();
  Mat cols = Mat::Zero(in.rows(), 9 * C);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int k = 0; k < 9; ++k) {
        const int sy = y + k / 3 - 1, sx = x + k % 3 - 1;
        if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
        cols.block(y * side + x, k * C, 1, C) = in.row(sy * side + sx);
      }
  return cols;
}

Mat col2im3x3(const Mat& cols, int side, int channels) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(side) * side, channels);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int k = 0; k < 9; ++k) {
        const int sy = y + k / 3 - 1, sx = x + k % 3 - 1;
        if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
        out.row(sy * side + sx) += cols.block(y * side + x, k * channels, 1, channels);
      }
  return out;
}

Mat encode(const Mat& grid, const SharedEncoderParams& params, const Mode& mode, EncoderCache* cache) {
  if (grid.cols() != params.input_dim())
    throw Error(ErrorCode::ShapeMismatch, "grid has " + std::to_string(grid.cols()) +
                                              " channels, encoder expects " + std::to_string(params.input_dim()));
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(grid.rows()))));
  if (grid.rows() < 1 || static_cast<Eigen::Index>(side) * side != grid.rows())
    throw Error(ErrorCode::NonSquareGrid, std::to_string(grid.rows()) + " positions");

  Mat h = (grid * params.proj_w).rowwise() + params.proj_b.row(0);
  if (cache) {
    cache->side = side;
    cache->input = grid;
    cache->cols.clear();
    cache->pre.clear();
    cache->masks.clear();
  }
  for (int l = 0; l < params.layers(); ++l) {
    Mat cols = im2col3x3(h, side);
    Mat pre = (cols * params.conv_w[l]).rowwise() + params.conv_b[l].row(0);
    Mat mask = mode.mask(pre.rows(), pre.cols());
    h = pre.cwiseMax(0.0).cwiseProduct(mask);
    if (cache) {
      cache->cols.push_back(std::move(cols));
      cache->pre.push_back(std::move(pre));
      cache->masks.push_back(std::move(mask));
    }
  }
  return h;
}

Mat encode(const features::FeatureGrid& grid, const SharedEncoderParams& params, const Mode& mode,
           EncoderCache* cache) {
  return encode(Mat(grid.values.cast<double>()), params, mode, cache);
}

Mat encode_backward(const EncoderCache& cache, const SharedEncoderParams& params, const Mat& d_out,
                    SharedEncoderParams& grads) {
  const int C = params.width();
  Mat d = d_out;
  for (int l = params.layers() - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    Mat d_pre = d.cwiseProduct(cache.masks[li]).cwiseProduct(
        (cache.pre[li].array() > 0.0).cast<double>().matrix());
    grads.conv_w[li].noalias() += cache.cols[li].transpose() * d_pre;
    grads.conv_b[li] += d_pre.colwise().sum();
    d = col2im3x3(d_pre * params.conv_w[li].transpose(), cache.side, C);
  }
  grads.proj_w.noalias() += cache.input.transpose() * d;
  grads.proj_b += d.colwise().sum();
  return d * params.proj_w.transpose();
}

SharedEncoderParams init_encoder(std::uint64_t seed, int d_in, int width, int layers) {
  if (d_in < 1 || width < 1 || layers < 0) throw Error(ErrorCode::ConfigError, "bad encoder shape");
  Rng rng(derive_seed(seed, "encoder.init"));
  SharedEncoderParams p;
  p.proj_w = glorot_uniform(d_in, width, d_in, width, rng);
  p.proj_b = Mat::Zero(1, width);
  for (int l = 0; l < layers; ++l) {
    p.conv_w.push_back(glorot_uniform(9 * width, width, 9.0 * width, 9.0 * width, rng));
    p.conv_b.push_back(Mat::Zero(1, width));
  }
  round_to_float(p.proj_w);
  for (auto& w : p.conv_w) round_to_float(w);
  return p;
}

}  // namespace mtlcap::encoder
