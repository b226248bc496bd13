// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "check.hpp"
#include "fixtures.hpp"
#include "mtlcap/encoder.hpp"
#include "mtlcap/error.hpp"

using namespace mtlcap;

TEST_SUITE("encoder") {
  TEST_CASE("gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto rep = fixture::encoder_gradients(seed);
      INFO("seed " << seed << " worst " << rep.what);
      CHECK(rep.worst < 1e-4);
    }
  }
}

namespace {

Mat random_grid(std::uint64_t seed, int L, int D) {
  Rng rng(seed);
  return uniform_matrix(L, D, -1.0, 1.0, rng);
}

encoder::SharedEncoderParams single_tap(int k, double w) {
  encoder::SharedEncoderParams p;
  p.proj_w = Mat::Ones(1, 1);
  p.proj_b = Mat::Zero(1, 1);
  p.conv_w.push_back(Mat::Zero(9, 1));
  p.conv_w[0](k, 0) = w;
  p.conv_b.push_back(Mat::Zero(1, 1));
  return p;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("zero grid with zero biases encodes to zero") {
    const auto p = encoder::init_encoder(3, 32);
    const Mat out = encoder::encode(Mat::Zero(16, 32), p, Mode::inference());
    CHECK(out.rows() == 16);
    CHECK(out.cols() == encoder::kWidth);
    CHECK(out.isZero());
  }

  TEST_CASE("output shape and range") {
    const auto p = encoder::init_encoder(4, 2048);
    const Mat out = encoder::encode(random_grid(4, 49, 2048), p, Mode::inference());
    CHECK(out.rows() == 49);
    CHECK(out.cols() == 64);
    CHECK(out.minCoeff() >= 0.0);
    CHECK(out.allFinite());
  }

  TEST_CASE("hand convolution on a 2x2 map") {
    Mat grid(4, 1);
    grid << 1, 2, 3, 4;
    // tap 5 is offset (0, +1): each cell reads its right neighbour
    Mat out = encoder::encode(grid, single_tap(5, 1.0), Mode::inference());
    CHECK(out(0, 0) == 2.0);
    CHECK(out(1, 0) == 0.0);
    CHECK(out(2, 0) == 4.0);
    CHECK(out(3, 0) == 0.0);
    // tap 4 is the centre; a negative weight is clipped by the ReLU
    out = encoder::encode(grid, single_tap(4, -1.0), Mode::inference());
    CHECK(out.isZero());
    // tap 0 is offset (-1, -1)
    out = encoder::encode(grid, single_tap(0, 0.5), Mode::inference());
    CHECK(out(3, 0) == 0.5);
    CHECK(out.topRows(3).isZero());
  }

  TEST_CASE("initialization") {
    const auto a = encoder::init_encoder(9, 20, 8, 6);
    const auto b = encoder::init_encoder(9, 20, 8, 6);
    const auto c = encoder::init_encoder(10, 20, 8, 6);
    CHECK(a.layers() == 6);
    CHECK(a.proj_w == b.proj_w);
    CHECK(a.proj_w != c.proj_w);
    CHECK(a.proj_b.isZero());
    CHECK(a.proj_w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 28.0));
    for (int l = 0; l < 6; ++l) {
      CHECK(a.conv_w[l] == b.conv_w[l]);
      CHECK(a.conv_w[l].rows() == 72);
      CHECK(a.conv_b[l].isZero());
      CHECK(a.conv_w[l].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 144.0));
    }
  }

  TEST_CASE("inference is deterministic, training dropout is seeded") {
    const auto p = encoder::init_encoder(5, 8, 16, 6);
    const Mat g = random_grid(5, 16, 8);
    CHECK(encoder::encode(g, p, Mode::inference()) == encoder::encode(g, p, Mode::inference()));
    Rng r1(1), r2(1);
    CHECK(encoder::encode(g, p, Mode::train(r1)) == encoder::encode(g, p, Mode::train(r2)));
    Rng r3(1);
    CHECK(encoder::encode(g, p, Mode::train(r3, 0.0)) == encoder::encode(g, p, Mode::inference()));
  }

  TEST_CASE("shape errors") {
    const auto p = encoder::init_encoder(6, 8, 4, 2);
    CHECK_ERROR_CODE(encoder::encode(Mat::Zero(16, 9), p, Mode::inference()), ErrorCode::ShapeMismatch);
    CHECK_ERROR_CODE(encoder::encode(Mat::Zero(15, 8), p, Mode::inference()), ErrorCode::NonSquareGrid);
  }

  TEST_CASE("shifting an isolated input shifts the output") {
    const int side = 16;
    const auto p = encoder::init_encoder(7, 3, 8, 6);
    Rng rng(7);
    const Row v = uniform_matrix(1, 3, 0.0, 1.0, rng);
    Mat a = Mat::Zero(side * side, 3), b = a;
    a.row(7 * side + 7) = v;
    b.row(8 * side + 8) = v;
    const Mat ea = encoder::encode(a, p, Mode::inference());
    const Mat eb = encoder::encode(b, p, Mode::inference());
    double worst = 0;
    for (int y = 0; y + 1 < side; ++y)
      for (int x = 0; x + 1 < side; ++x)
        worst = std::max(worst, (ea.row(y * side + x) - eb.row((y + 1) * side + x + 1)).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-12);
    CHECK(eb.row(0).isZero());
  }

  TEST_CASE("im2col and col2im are adjoint") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Mat x = random_grid(seed, 9, 2);
      const Mat y = random_grid(seed + 100, 9, 18);
      const double lhs = (encoder::im2col3x3(x, 3).array() * y.array()).sum();
      const double rhs = (x.array() * encoder::col2im3x3(y, 3, 2).array()).sum();
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}
