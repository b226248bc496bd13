// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtlcap/nn.hpp"
#include "mtlcap/text.hpp"

namespace mtlcap::decoder {

inline constexpr int kAttentionWidth = 256;
inline constexpr int kHidden = 512;
inline constexpr int kLayers = 2;
inline constexpr int kDefaultBeam = 3;
inline constexpr int kDefaultMaxLen = 30;

using text::TokenSequence;

/// Additive attention: e_i = v . tanh(a_i W_a + h U_h).
struct AttentionParams {
  Mat w_a;  // C x A
  Mat u_h;  // H x A
  Mat v;    // A x 1

  int width() const { return static_cast<int>(w_a.cols()); }
  void visit(const std::string& prefix, const ParamVisitor& f);
  AttentionParams zeros_like() const;
};

/// Stacked LSTM decoder. Layer 0 reads [embedding | context]; the output
/// projection reads [top hidden | context]. LSTM gate blocks are ordered
/// input, forget, output, candidate.
struct DecoderParams {
  Mat embedding;  // V x E, row 0 (PAD) held at zero
  std::vector<Mat> init_h_w, init_h_b;  // C x H, 1 x H per layer
  std::vector<Mat> init_c_w, init_c_b;
  std::vector<Mat> lstm_w;  // (in + H) x 4H
  std::vector<Mat> lstm_b;  // 1 x 4H
  Mat out_w;                // (H + C) x V
  Mat out_b;                // 1 x V

  int vocab_size() const { return static_cast<int>(embedding.rows()); }
  int embed_dim() const { return static_cast<int>(embedding.cols()); }
  int hidden() const { return static_cast<int>(init_h_w.front().cols()); }
  int layers() const { return static_cast<int>(lstm_w.size()); }
  int context_dim() const { return static_cast<int>(init_h_w.front().rows()); }

  void visit(const std::string& prefix, const ParamVisitor& f);
  DecoderParams zeros_like() const;
};

struct AttentionStep {
  Row alpha;    // L
  Row context;  // C
};

AttentionStep attend(const Mat& annotations, const Row& h, const AttentionParams& params);

struct DecoderState {
  std::vector<Row> h;
  std::vector<Row> c;
};

/// h0 = tanh(mean(a) W_h + b_h), c0 = tanh(mean(a) W_c + b_c) per layer.
DecoderState init_state(const Mat& annotations, const DecoderParams& params);

struct StepCache {
  int input_token = 0;
  int target = 0;
  Mat att_tanh;  // L x A
  Row h_top_prev;
  Row alpha;
  Row context;
  std::vector<Row> x;  // LSTM input per layer
  std::vector<Row> h_prev, c_prev;
  std::vector<Row> gates;  // activated i, f, o, g
  std::vector<Row> tanh_c;
  std::vector<Row> layer_masks;  // dropout between layers
  Row out_in;
  Row out_mask;
  Row probs;
};

struct SequenceCache {
  Mat annotations;
  Mat att_proj;  // annotations * W_a
  Row mean;
  DecoderState init;
  std::vector<StepCache> steps;
  double loss_sum = 0.0;
  int tokens = 0;  // non-PAD targets
};

/// Runs teacher forcing and fills `cache`; returns the summed token loss.
double teacher_forced_forward(const Mat& annotations, const TokenSequence& target,
                              const DecoderParams& params, const AttentionParams& attn,
                              const Mode& mode, SequenceCache& cache);

/// Mean token cross-entropy over non-PAD targets.
double teacher_forced_loss(const Mat& annotations, const TokenSequence& target,
                           const DecoderParams& params, const AttentionParams& attn, const Mode& mode);

/// Backpropagates `scale` * (summed token loss). Returns d/d(annotations).
Mat teacher_forced_backward(const SequenceCache& cache, const DecoderParams& params,
                            const AttentionParams& attn, double scale, DecoderParams& grads,
                            AttentionParams& attn_grads);

/// Inference-mode stepping shared by the decoders.
class Runner {
 public:
  Runner(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn);

  DecoderState initial_state() const;
  /// Feeds `token`, advances `state`, returns log-probabilities of the next token.
  Row step(DecoderState& state, int token) const;

 private:
  const Mat& annotations_;
  const DecoderParams& params_;
  const AttentionParams& attn_;
  Mat att_proj_;
};

TokenSequence greedy_decode(const Mat& annotations, const DecoderParams& params,
                            const AttentionParams& attn, int max_len);

/// Length-normalised beam search; hypotheses are ranked by mean log-prob of
/// the emitted tokens, ties by token-id sequence.
TokenSequence beam_decode(const Mat& annotations, const DecoderParams& params,
                          const AttentionParams& attn, int beam, int max_len);

/// Mean log-prob of seq[1..] given seq[0] = START.
double mean_log_prob(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn,
                     const TokenSequence& seq);

struct DecoderShape {
  int context_dim = 64;
  int hidden = kHidden;
  int layers = kLayers;
  int attention_width = kAttentionWidth;
};

/// Glorot weights, zero biases; the embedding table is taken as given.
void init_decoder(std::uint64_t seed, const text::EmbeddingMatrix& embedding, const DecoderShape& shape,
                  DecoderParams& params, AttentionParams& attn);

}  // namespace mtlcap::decoder
