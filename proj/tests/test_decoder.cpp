// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "check.hpp"
#include "fixtures.hpp"
#include "mtlcap/decoder.hpp"

using namespace mtlcap;
using namespace mtlcap::decoder;
using text::Vocabulary;

namespace {

/// Every sequence START w1 .. wn (n <= steps) that a decoder can emit:
/// PAD never, END only last, and non-END sequences only at full length.
void enumerate(TokenSequence& prefix, int vocab, int steps, std::vector<TokenSequence>& out) {
  const int emitted = static_cast<int>(prefix.size()) - 1;
  if (emitted > 0 && (prefix.back() == Vocabulary::kEnd || emitted == steps)) {
    out.push_back(prefix);
    return;
  }
  for (int k = 1; k < vocab; ++k) {
    prefix.push_back(k);
    enumerate(prefix, vocab, steps, out);
    prefix.pop_back();
  }
}

/// Independent single-layer forward pass for the hand loss check.
double hand_loss(const fixture::ToyDecoder& m, const TokenSequence& target) {
  const auto& p = m.params;
  const auto& a = m.attn;
  const int H = p.hidden();
  const Row mean = m.annotations.colwise().mean();
  Row h = (mean * p.init_h_w[0] + p.init_h_b[0]).array().tanh().matrix();
  Row c = (mean * p.init_c_w[0] + p.init_c_b[0]).array().tanh().matrix();
  double total = 0;
  for (std::size_t t = 1; t < target.size(); ++t) {
    Row e(m.annotations.rows());
    for (int i = 0; i < e.size(); ++i)
      e(i) = ((m.annotations.row(i) * a.w_a + h * a.u_h).array().tanh().matrix() * a.v)(0, 0);
    Row alpha = (e.array() - e.maxCoeff()).exp().matrix();
    alpha /= alpha.sum();
    const Row z = alpha * m.annotations;
    Row in(p.embed_dim() + z.size() + H);
    in << p.embedding.row(target[t - 1]), z, h;
    const Row pre = in * p.lstm_w[0] + p.lstm_b[0];
    auto sig = [](double x) { return 1 / (1 + std::exp(-x)); };
    Row ig(H), fg(H), og(H), gg(H);
    for (int j = 0; j < H; ++j) {
      ig(j) = sig(pre(j));
      fg(j) = sig(pre(H + j));
      og(j) = sig(pre(2 * H + j));
      gg(j) = std::tanh(pre(3 * H + j));
    }
    c = fg.cwiseProduct(c) + ig.cwiseProduct(gg);
    h = og.cwiseProduct(c.array().tanh().matrix());
    Row out(H + z.size());
    out << h, z;
    const Row logits = out * p.out_w + p.out_b;
    const double lse = logits.maxCoeff() + std::log((logits.array() - logits.maxCoeff()).exp().sum());
    total += lse - logits(target[t]);
  }
  return total / static_cast<double>(target.size() - 1);
}

}  // namespace

TEST_SUITE("decoder") {
  TEST_CASE("gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto rep = fixture::decoder_gradients(seed);
      INFO("seed " << seed << " worst " << rep.what << " " << rep.worst);
      CHECK(rep.worst < 1e-4);
    }
  }

  TEST_CASE("attention with a zero scoring vector is uniform") {
    auto m = fixture::toy_decoder(1);
    m.attn.v.setZero();
    Rng rng(1);
    const auto step = attend(m.annotations, uniform_matrix(1, 8, -1, 1, rng), m.attn);
    for (int i = 0; i < 4; ++i) CHECK(step.alpha(i) == doctest::Approx(0.25));
    const Row mean = m.annotations.colwise().mean();
    CHECK((step.context - mean).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("attention hand example") {
    AttentionParams p;
    p.w_a = Mat::Zero(2, 1);
    p.w_a(0, 0) = 1.0;
    p.u_h = Mat::Zero(3, 1);
    p.v = Mat::Constant(1, 1, std::log(3.0) / std::tanh(1.0));
    Mat a(2, 2);
    a << 1.0, 4.0, 0.0, -2.0;
    const auto step = attend(a, Row::Ones(3), p);
    CHECK(step.alpha(0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(step.alpha(1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(step.context(0) == doctest::Approx(0.75));
    CHECK(step.context(1) == doctest::Approx(0.75 * 4 - 0.25 * 2));
    CHECK_ERROR_CODE(attend(a, Row::Ones(2), p), ErrorCode::ShapeMismatch);
  }

  TEST_CASE("attention invariants on random inputs") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto m = fixture::toy_decoder(seed);
      Rng rng(seed);
      const Row h = uniform_matrix(1, 8, -1, 1, rng);
      const auto step = attend(m.annotations, h, m.attn);
      CHECK(std::abs(step.alpha.sum() - 1.0) < 1e-6);
      CHECK(step.alpha.minCoeff() >= 0.0);
      for (int j = 0; j < step.context.size(); ++j) {
        CHECK(step.context(j) >= m.annotations.col(j).minCoeff() - 1e-12);
        CHECK(step.context(j) <= m.annotations.col(j).maxCoeff() + 1e-12);
      }
    }
  }

  TEST_CASE("init_state") {
    auto m = fixture::toy_decoder(2);
    auto zero = m.params;
    for (auto& b : zero.init_h_b) b.setZero();
    for (auto& b : zero.init_c_b) b.setZero();
    const auto s0 = init_state(Mat::Zero(4, 8), zero);
    for (int l = 0; l < 2; ++l) {
      CHECK(s0.h[l].isZero());
      CHECK(s0.c[l].isZero());
    }
    m.annotations *= 100.0;
    const auto s = init_state(m.annotations, m.params);
    for (int l = 0; l < 2; ++l) {
      CHECK(s.h[l].cwiseAbs().maxCoeff() <= 1.0);
      CHECK(s.c[l].cwiseAbs().maxCoeff() <= 1.0);
    }

    auto one = fixture::toy_decoder(3, 7, 6, 1, 1, 5, 1, 2);
    one.params.init_h_w[0](0, 0) = 0.5;
    one.params.init_h_b[0](0, 0) = 0.1;
    one.params.init_c_w[0](0, 0) = -2.0;
    one.params.init_c_b[0](0, 0) = 0.0;
    Mat a(2, 1);
    a << 1.0, 3.0;
    const auto s1 = init_state(a, one.params);
    CHECK(s1.h[0](0) == doctest::Approx(std::tanh(1.1)));
    CHECK(s1.c[0](0) == doctest::Approx(std::tanh(-4.0)));
  }

  TEST_CASE("teacher forced loss closed forms") {
    auto m = fixture::toy_decoder(4);
    const TokenSequence one{Vocabulary::kStart, Vocabulary::kEnd};
    SequenceCache cache;
    teacher_forced_forward(m.annotations, one, m.params, m.attn, Mode::inference(), cache);
    REQUIRE(cache.steps.size() == 1);
    CHECK(teacher_forced_loss(m.annotations, one, m.params, m.attn, Mode::inference()) ==
          doctest::Approx(-std::log(cache.steps[0].probs(Vocabulary::kEnd))));

    m.params.out_w.setZero();
    m.params.out_b.setZero();
    const auto target = fixture::toy_target(4, 7, 5);
    CHECK(teacher_forced_loss(m.annotations, target, m.params, m.attn, Mode::inference()) ==
          doctest::Approx(std::log(7.0)));
    CHECK_ERROR_CODE(teacher_forced_loss(m.annotations, TokenSequence{1}, m.params, m.attn, Mode::inference()),
                     ErrorCode::EmptyTarget);
  }

  TEST_CASE("PAD targets are excluded from the mean") {
    const auto m = fixture::toy_decoder(5);
    const TokenSequence t{1, 4, 5, 2};
    TokenSequence padded = t;
    padded.push_back(Vocabulary::kPad);
    padded.push_back(Vocabulary::kPad);
    CHECK(teacher_forced_loss(m.annotations, t, m.params, m.attn, Mode::inference()) ==
          doctest::Approx(teacher_forced_loss(m.annotations, padded, m.params, m.attn, Mode::inference())));
  }

  TEST_CASE("three step loss matches a hand forward pass") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = fixture::toy_decoder(seed, 5, 3, 2, 3, 2, 1, 2);
      const TokenSequence t{1, 3, 4, 2};
      const double got = teacher_forced_loss(m.annotations, t, m.params, m.attn, Mode::inference());
      CHECK(got == doctest::Approx(hand_loss(m, t)).epsilon(1e-12));
      CHECK(got >= 0.0);
    }
  }

  TEST_CASE("gate ranges") {
    const auto m = fixture::toy_decoder(6);
    SequenceCache cache;
    teacher_forced_forward(m.annotations, fixture::toy_target(6, 7, 5), m.params, m.attn, Mode::inference(),
                           cache);
    for (const auto& step : cache.steps)
      for (const auto& g : step.gates) {
        const int H = static_cast<int>(g.size() / 4);
        CHECK(g.head(3 * H).minCoeff() > 0.0);
        CHECK(g.head(3 * H).maxCoeff() < 1.0);
        CHECK(g.tail(H).cwiseAbs().maxCoeff() < 1.0);
      }
  }

  TEST_CASE("greedy decoding") {
    auto m = fixture::toy_decoder(7);
    m.params.out_w.setZero();
    m.params.out_b.setZero();
    m.params.out_b(Vocabulary::kEnd) = 10.0;
    CHECK(greedy_decode(m.annotations, m.params, m.attn, 30) == TokenSequence{1, 2});

    m.params.out_b(Vocabulary::kEnd) = -10.0;
    m.params.out_b(Vocabulary::kPad) = 20.0;
    m.params.out_b(5) = 10.0;
    const auto capped = greedy_decode(m.annotations, m.params, m.attn, 5);
    CHECK(capped == TokenSequence{1, 5, 5, 5, 5});

    // ties go to the lowest id
    m.params.out_b.setZero();
    m.params.out_b(4) = 3.0;
    m.params.out_b(6) = 3.0;
    CHECK(greedy_decode(m.annotations, m.params, m.attn, 3) == TokenSequence{1, 4, 4});

    const auto r = fixture::toy_decoder(8);
    CHECK(greedy_decode(r.annotations, r.params, r.attn, 10) == greedy_decode(r.annotations, r.params, r.attn, 10));
  }

  TEST_CASE("beam of one equals greedy") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto m = fixture::toy_decoder(seed);
      CHECK(beam_decode(m.annotations, m.params, m.attn, 1, 8) == greedy_decode(m.annotations, m.params, m.attn, 8));
    }
  }

  TEST_CASE("full beam finds the best two step sequence") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto m = fixture::toy_decoder(seed, 5);
      std::vector<TokenSequence> all;
      TokenSequence prefix{Vocabulary::kStart};
      enumerate(prefix, 5, 2, all);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& s : all) best = std::max(best, mean_log_prob(m.annotations, m.params, m.attn, s));
      const auto got = beam_decode(m.annotations, m.params, m.attn, 5, 3);
      CHECK(mean_log_prob(m.annotations, m.params, m.attn, got) == doctest::Approx(best).epsilon(1e-12));
    }
  }

  TEST_CASE("wider beams score at least as well") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto m = fixture::toy_decoder(seed);
      const auto b1 = beam_decode(m.annotations, m.params, m.attn, 1, 8);
      const auto b3 = beam_decode(m.annotations, m.params, m.attn, 3, 8);
      INFO("seed " << seed);
      CHECK(mean_log_prob(m.annotations, m.params, m.attn, b3) >=
            mean_log_prob(m.annotations, m.params, m.attn, b1) - 1e-12);
      for (int id : b3) CHECK(id != Vocabulary::kPad);
    }
  }
}
