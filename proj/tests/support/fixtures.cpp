// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include "mtlcap/rng.hpp"
#include "mtlcap/text.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace mtlcap;

namespace {

void jitter(Mat& m, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.uniform(-scale, scale);
}

}  // namespace

ToyDecoder toy_decoder(std::uint64_t seed, int vocab, int embed, int context, int hidden, int attention, int layers,
                       int positions) {
  ToyDecoder t;
  decoder::DecoderShape shape{context, hidden, layers, attention};
  decoder::init_decoder(seed, text::init_embedding(vocab, embed, seed), shape, t.params, t.attn);
  Rng rng(derive_seed(seed, "fixture.decoder"));
  for (auto& b : t.params.init_h_b) jitter(b, rng, 0.3);
  for (auto& b : t.params.init_c_b) jitter(b, rng, 0.3);
  for (auto& b : t.params.lstm_b) jitter(b, rng, 0.3);
  jitter(t.params.out_b, rng, 0.3);
  t.annotations = uniform_matrix(positions, context, -1.0, 1.0, rng);
  return t;
}

text::TokenSequence toy_target(std::uint64_t seed, int vocab, int steps) {
  Rng rng(derive_seed(seed, "fixture.target"));
  text::TokenSequence t{text::Vocabulary::kStart};
  for (int i = 0; i + 1 < steps; ++i)
    t.push_back(text::Vocabulary::kUnk + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 3))));
  t.push_back(text::Vocabulary::kEnd);
  return t;
}

GradReport encoder_gradients(std::uint64_t seed) {
  auto params = encoder::init_encoder(seed, 3, 4, 6);
  Rng rng(derive_seed(seed, "fixture.encoder"));
  for (auto& b : params.conv_b) jitter(b, rng, 0.1);
  jitter(params.proj_b, rng, 0.1);
  const Mat x = uniform_matrix(4, 3, -1.0, 1.0, rng);
  const std::uint64_t mask_seed = derive_seed(seed, "fixture.encoder.dropout");

  auto loss = [&](const Mat& input) {
    Rng r(mask_seed);
    return encoder::encode(input, params, Mode::train(r)).squaredNorm();
  };
  Rng r(mask_seed);
  encoder::EncoderCache cache;
  const Mat out = encoder::encode(x, params, Mode::train(r), &cache);
  auto grads = params.zeros_like();
  const Mat d_x = encoder::encode_backward(cache, params, 2.0 * out, grads);

  GradReport rep;
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  params.visit("encoder.", [&](const std::string& n, Mat& m) { ps.emplace_back(n, &m); });
  grads.visit("encoder.", [&](const std::string& n, Mat& m) { gs.emplace_back(n, &m); });
  for (std::size_t i = 0; i < ps.size(); ++i)
    rep.add(ps[i].first, oracle::max_gradient_error(*ps[i].second, *gs[i].second, [&] { return loss(x); }));
  Mat xv = x;
  rep.add("input", oracle::max_gradient_error(xv, d_x, [&] { return loss(xv); }));
  return rep;
}

GradReport head_gradients(std::uint64_t seed) {
  auto head = heads::init_head(seed, 5, 3, 6, 2);
  Rng rng(derive_seed(seed, "fixture.head"));
  for (auto& b : head.hidden_b) jitter(b, rng, 0.2);
  jitter(head.out_b, rng, 0.2);
  const Mat grid = uniform_matrix(4, 5, -1.0, 1.0, rng);
  const int label = static_cast<int>(rng.below(3));
  const std::uint64_t mask_seed = derive_seed(seed, "fixture.head.dropout");

  auto loss = [&](const Mat& g) {
    Rng r(mask_seed);
    return heads::classification_loss(heads::head_forward(g, head, Mode::train(r)), label);
  };
  Rng r(mask_seed);
  heads::HeadCache cache;
  heads::head_forward(grid, head, Mode::train(r), &cache);
  auto grads = head.zeros_like();
  const Mat d_grid = heads::head_backward(cache, head, label, 1.0, grads);

  GradReport rep;
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  head.visit("head.", [&](const std::string& n, Mat& m) { ps.emplace_back(n, &m); });
  grads.visit("head.", [&](const std::string& n, Mat& m) { gs.emplace_back(n, &m); });
  for (std::size_t i = 0; i < ps.size(); ++i)
    rep.add(ps[i].first, oracle::max_gradient_error(*ps[i].second, *gs[i].second, [&] { return loss(grid); }));
  Mat gv = grid;
  rep.add("grid", oracle::max_gradient_error(gv, d_grid, [&] { return loss(gv); }));
  return rep;
}

GradReport decoder_gradients(std::uint64_t seed) {
  ToyDecoder t = toy_decoder(seed);
  const auto target = toy_target(seed, t.params.vocab_size(), 4);
  const std::uint64_t mask_seed = derive_seed(seed, "fixture.decoder.dropout");

  auto loss = [&](const Mat& ann) {
    Rng r(mask_seed);
    return decoder::teacher_forced_loss(ann, target, t.params, t.attn, Mode::train(r));
  };
  Rng r(mask_seed);
  decoder::SequenceCache cache;
  decoder::teacher_forced_forward(t.annotations, target, t.params, t.attn, Mode::train(r), cache);
  auto grads = t.params.zeros_like();
  auto attn_grads = t.attn.zeros_like();
  const Mat d_ann =
      decoder::teacher_forced_backward(cache, t.params, t.attn, 1.0 / cache.tokens, grads, attn_grads);

  GradReport rep;
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  t.params.visit("decoder.", [&](const std::string& n, Mat& m) { ps.emplace_back(n, &m); });
  t.attn.visit("attention.", [&](const std::string& n, Mat& m) { ps.emplace_back(n, &m); });
  grads.visit("decoder.", [&](const std::string& n, Mat& m) { gs.emplace_back(n, &m); });
  attn_grads.visit("attention.", [&](const std::string& n, Mat& m) { gs.emplace_back(n, &m); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mat analytic = *gs[i].second;
    if (ps[i].first == "decoder.embedding") {
      // the PAD row is frozen: its analytic gradient is zeroed by design,
      // so only the other rows are compared
      Mat rows = ps[i].second->bottomRows(ps[i].second->rows() - 1);
      const Mat g = analytic.bottomRows(analytic.rows() - 1);
      rep.add(ps[i].first, oracle::max_gradient_error(rows, g, [&] {
                ps[i].second->bottomRows(rows.rows()) = rows;
                return loss(t.annotations);
              }));
      ps[i].second->bottomRows(rows.rows()) = rows;
      continue;
    }
    rep.add(ps[i].first, oracle::max_gradient_error(*ps[i].second, analytic, [&] { return loss(t.annotations); }));
  }
  Mat av = t.annotations;
  rep.add("annotations", oracle::max_gradient_error(av, d_ann, [&] { return loss(av); }));
  return rep;
}

}  // namespace fixture
