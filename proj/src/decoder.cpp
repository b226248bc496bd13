// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "mtlcap/error.hpp"
#include "mtlcap/rng.hpp"

namespace mtlcap::decoder {

using text::Vocabulary;

void AttentionParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "w_a", w_a);
  f(prefix + "u_h", u_h);
  f(prefix + "v", v);
}

AttentionParams AttentionParams::zeros_like() const {
  return {Mat::Zero(w_a.rows(), w_a.cols()), Mat::Zero(u_h.rows(), u_h.cols()), Mat::Zero(v.rows(), v.cols())};
}

void DecoderParams::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + "embedding", embedding);
  for (std::size_t l = 0; l < lstm_w.size(); ++l) {
    const std::string n = std::to_string(l);
    f(prefix + "init_h" + n + ".w", init_h_w[l]);
    f(prefix + "init_h" + n + ".b", init_h_b[l]);
    f(prefix + "init_c" + n + ".w", init_c_w[l]);
    f(prefix + "init_c" + n + ".b", init_c_b[l]);
    f(prefix + "lstm" + n + ".w", lstm_w[l]);
    f(prefix + "lstm" + n + ".b", lstm_b[l]);
  }
  f(prefix + "out.w", out_w);
  f(prefix + "out.b", out_b);
}

DecoderParams DecoderParams::zeros_like() const {
  auto zeros = [](const std::vector<Mat>& v) {
    std::vector<Mat> out;
    for (const auto& m : v) out.push_back(Mat::Zero(m.rows(), m.cols()));
    return out;
  };
  DecoderParams z;
  z.embedding = Mat::Zero(embedding.rows(), embedding.cols());
  z.init_h_w = zeros(init_h_w);
  z.init_h_b = zeros(init_h_b);
  z.init_c_w = zeros(init_c_w);
  z.init_c_b = zeros(init_c_b);
  z.lstm_w = zeros(lstm_w);
  z.lstm_b = zeros(lstm_b);
  z.out_w = Mat::Zero(out_w.rows(), out_w.cols());
  z.out_b = Mat::Zero(out_b.rows(), out_b.cols());
  return z;
}

namespace {

void check_shapes(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn) {
  if (annotations.rows() < 1 || annotations.cols() != params.context_dim() ||
      attn.w_a.rows() != annotations.cols() || attn.u_h.rows() != params.hidden())
    throw Error(ErrorCode::ShapeMismatch, "annotations do not match decoder widths");
}

// Attention given precomputed annotations * W_a.
AttentionStep attend_projected(const Mat& annotations, const Mat& att_proj, const Row& h,
                               const AttentionParams& attn, Mat* tanh_out) {
  Mat t = (att_proj.rowwise() + h * attn.u_h).array().tanh();
  Row scores = (t * attn.v).transpose();
  AttentionStep step{softmax(scores), Row()};
  step.context = step.alpha * annotations;
  if (tanh_out) *tanh_out = std::move(t);
  return step;
}

struct LstmOut {
  Row gates;  // activated
  Row c;
  Row tanh_c;
  Row h;
};

LstmOut lstm_cell(const Row& x, const Row& h_prev, const Row& c_prev, const Mat& w, const Mat& b) {
  const Eigen::Index H = h_prev.size();
  Row xh(x.size() + H);
  xh << x, h_prev;
  Row pre = xh * w + b;
  LstmOut out;
  out.gates.resize(4 * H);
  for (Eigen::Index k = 0; k < 3 * H; ++k) out.gates(k) = sigmoid(pre(k));
  out.gates.tail(H) = pre.tail(H).array().tanh();
  const auto i = out.gates.segment(0, H).array();
  const auto f = out.gates.segment(H, H).array();
  const auto o = out.gates.segment(2 * H, H).array();
  const auto g = out.gates.segment(3 * H, H).array();
  out.c = f * c_prev.array() + i * g;
  out.tanh_c = out.c.array().tanh();
  out.h = o * out.tanh_c.array();
  return out;
}

Row concat(const Row& a, const Row& b) {
  Row out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

AttentionStep attend(const Mat& annotations, const Row& h, const AttentionParams& params) {
  if (annotations.rows() < 1 || annotations.cols() != params.w_a.rows() || h.size() != params.u_h.rows())
    throw Error(ErrorCode::ShapeMismatch, "attention input widths");
  return attend_projected(annotations, annotations * params.w_a, h, params, nullptr);
}

DecoderState init_state(const Mat& annotations, const DecoderParams& params) {
  const Row mean = annotations.colwise().mean();
  DecoderState s;
  for (int l = 0; l < params.layers(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    s.h.push_back((mean * params.init_h_w[li] + params.init_h_b[li]).array().tanh());
    s.c.push_back((mean * params.init_c_w[li] + params.init_c_b[li]).array().tanh());
  }
  return s;
}

double teacher_forced_forward(const Mat& annotations, const TokenSequence& target, const DecoderParams& params,
                              const AttentionParams& attn, const Mode& mode, SequenceCache& cache) {
  if (target.size() < 2) throw Error(ErrorCode::EmptyTarget, "target needs START and END");
  check_shapes(annotations, params, attn);
  for (int id : target)
    if (id < 0 || id >= params.vocab_size()) throw Error(ErrorCode::ShapeMismatch, "token id out of vocabulary");

  const int layers = params.layers();
  const int top = layers - 1;
  cache.annotations = annotations;
  cache.att_proj = annotations * attn.w_a;
  cache.mean = annotations.colwise().mean();
  cache.init = init_state(annotations, params);
  cache.steps.clear();
  cache.loss_sum = 0.0;
  cache.tokens = 0;

  DecoderState state = cache.init;
  for (std::size_t t = 1; t < target.size(); ++t) {
    StepCache sc;
    sc.input_token = target[t - 1];
    sc.target = target[t];
    sc.h_top_prev = state.h[static_cast<std::size_t>(top)];
    AttentionStep att = attend_projected(annotations, cache.att_proj, sc.h_top_prev, attn, &sc.att_tanh);
    sc.alpha = att.alpha;
    sc.context = att.context;

    Row x = concat(params.embedding.row(sc.input_token), sc.context);
    for (int l = 0; l < layers; ++l) {
      const auto li = static_cast<std::size_t>(l);
      sc.x.push_back(x);
      sc.h_prev.push_back(state.h[li]);
      sc.c_prev.push_back(state.c[li]);
      LstmOut out = lstm_cell(x, state.h[li], state.c[li], params.lstm_w[li], params.lstm_b[li]);
      sc.gates.push_back(out.gates);
      sc.tanh_c.push_back(out.tanh_c);
      state.h[li] = out.h;
      state.c[li] = out.c;
      if (l < top) {
        Row mask = mode.mask(1, out.h.size());
        x = out.h.cwiseProduct(mask);
        sc.layer_masks.push_back(std::move(mask));
      }
    }
    Row out_raw = concat(state.h[static_cast<std::size_t>(top)], sc.context);
    sc.out_mask = mode.mask(1, out_raw.size());
    sc.out_in = out_raw.cwiseProduct(sc.out_mask);
    Row logits = sc.out_in * params.out_w + params.out_b;
    sc.probs = softmax(logits);
    if (sc.target != Vocabulary::kPad) {
      cache.loss_sum -= log_softmax(logits)(sc.target);
      ++cache.tokens;
    }
    cache.steps.push_back(std::move(sc));
  }
  return cache.loss_sum;
}

double teacher_forced_loss(const Mat& annotations, const TokenSequence& target, const DecoderParams& params,
                           const AttentionParams& attn, const Mode& mode) {
  SequenceCache cache;
  teacher_forced_forward(annotations, target, params, attn, mode, cache);
  return cache.tokens == 0 ? 0.0 : cache.loss_sum / cache.tokens;
}

Mat teacher_forced_backward(const SequenceCache& cache, const DecoderParams& params, const AttentionParams& attn,
                            double scale, DecoderParams& grads, AttentionParams& attn_grads) {
  const int layers = params.layers();
  const auto top = static_cast<std::size_t>(layers - 1);
  const Eigen::Index H = params.hidden();
  const Eigen::Index E = params.embed_dim();
  const Eigen::Index L = cache.annotations.rows();

  std::vector<Row> dh(static_cast<std::size_t>(layers), Row::Zero(H));
  std::vector<Row> dc(static_cast<std::size_t>(layers), Row::Zero(H));
  Mat d_ann = Mat::Zero(L, cache.annotations.cols());
  Mat d_proj = Mat::Zero(L, attn.w_a.cols());

  for (std::size_t t = cache.steps.size(); t-- > 0;) {
    const StepCache& sc = cache.steps[t];
    Row dz = Row::Zero(sc.context.size());

    if (sc.target != Vocabulary::kPad) {
      Row dlogits = sc.probs * scale;
      dlogits(sc.target) -= scale;
      grads.out_w.noalias() += sc.out_in.transpose() * dlogits;
      grads.out_b += dlogits;
      Row d_out_in = (dlogits * params.out_w.transpose()).cwiseProduct(sc.out_mask);
      dh[top] += d_out_in.head(H);
      dz += d_out_in.tail(dz.size());
    }

    for (std::size_t l = top + 1; l-- > 0;) {
      const Row& gates = sc.gates[l];
      const auto i = gates.segment(0, H).array();
      const auto f = gates.segment(H, H).array();
      const auto o = gates.segment(2 * H, H).array();
      const auto g = gates.segment(3 * H, H).array();
      const auto tc = sc.tanh_c[l].array();
      const Eigen::ArrayXXd dh_l = dh[l].array();
      Eigen::ArrayXXd dct = dc[l].array() + dh_l * o * (1.0 - tc * tc);
      Row dpre(4 * H);
      dpre.segment(0, H) = (dct * g * i * (1.0 - i)).matrix();
      dpre.segment(H, H) = (dct * sc.c_prev[l].array() * f * (1.0 - f)).matrix();
      dpre.segment(2 * H, H) = (dh_l * tc * o * (1.0 - o)).matrix();
      dpre.segment(3 * H, H) = (dct * i * (1.0 - g * g)).matrix();

      Row xh = concat(sc.x[l], sc.h_prev[l]);
      grads.lstm_w[l].noalias() += xh.transpose() * dpre;
      grads.lstm_b[l] += dpre;
      Row dxh = dpre * params.lstm_w[l].transpose();
      const Eigen::Index in = sc.x[l].size();
      dh[l] = dxh.tail(H);
      dc[l] = (dct * f).matrix();
      if (l > 0) {
        dh[l - 1] += dxh.head(in).cwiseProduct(sc.layer_masks[l - 1]);
      } else {
        grads.embedding.row(sc.input_token) += dxh.head(E);
        dz += dxh.segment(E, in - E);
      }
    }

    // attention, feeding dh of the previous step's top layer
    const Row d_alpha = dz * cache.annotations.transpose();
    d_ann.noalias() += sc.alpha.transpose() * dz;
    const double dot = sc.alpha.dot(d_alpha);
    const Row de = sc.alpha.cwiseProduct((d_alpha.array() - dot).matrix());
    attn_grads.v.noalias() += sc.att_tanh.transpose() * de.transpose();
    Mat ds = (de.transpose() * attn.v.transpose()).cwiseProduct(
        Mat((1.0 - sc.att_tanh.array().square()).matrix()));
    d_proj += ds;
    const Row dhu = ds.colwise().sum();
    attn_grads.u_h.noalias() += sc.h_top_prev.transpose() * dhu;
    dh[top] += dhu * attn.u_h.transpose();
  }

  attn_grads.w_a.noalias() += cache.annotations.transpose() * d_proj;
  d_ann.noalias() += d_proj * attn.w_a.transpose();

  Row d_mean = Row::Zero(cache.mean.size());
  for (std::size_t l = 0; l <= top; ++l) {
    const Row dph = dh[l].cwiseProduct(Row((1.0 - cache.init.h[l].array().square()).matrix()));
    const Row dpc = dc[l].cwiseProduct(Row((1.0 - cache.init.c[l].array().square()).matrix()));
    grads.init_h_w[l].noalias() += cache.mean.transpose() * dph;
    grads.init_h_b[l] += dph;
    grads.init_c_w[l].noalias() += cache.mean.transpose() * dpc;
    grads.init_c_b[l] += dpc;
    d_mean += dph * params.init_h_w[l].transpose() + dpc * params.init_c_w[l].transpose();
  }
  d_ann.rowwise() += d_mean / static_cast<double>(L);
  grads.embedding.row(Vocabulary::kPad).setZero();
  return d_ann;
}

Runner::Runner(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn)
    : annotations_(annotations), params_(params), attn_(attn) {
  check_shapes(annotations, params, attn);
  att_proj_ = annotations * attn.w_a;
}

DecoderState Runner::initial_state() const { return init_state(annotations_, params_); }

Row Runner::step(DecoderState& state, int token) const {
  const auto top = static_cast<std::size_t>(params_.layers() - 1);
  AttentionStep att = attend_projected(annotations_, att_proj_, state.h[top], attn_, nullptr);
  Row x = concat(params_.embedding.row(token), att.context);
  for (std::size_t l = 0; l <= top; ++l) {
    LstmOut out = lstm_cell(x, state.h[l], state.c[l], params_.lstm_w[l], params_.lstm_b[l]);
    state.h[l] = out.h;
    state.c[l] = out.c;
    x = out.h;
  }
  return log_softmax(concat(state.h[top], att.context) * params_.out_w + params_.out_b);
}

TokenSequence greedy_decode(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn,
                            int max_len) {
  if (max_len < 2) throw Error(ErrorCode::ConfigError, "max_len must be at least 2");
  Runner runner(annotations, params, attn);
  DecoderState state = runner.initial_state();
  TokenSequence seq{Vocabulary::kStart};
  while (static_cast<int>(seq.size()) < max_len) {
    Row logp = runner.step(state, seq.back());
    int best = -1;
    for (int k = 0; k < logp.size(); ++k) {
      if (k == Vocabulary::kPad) continue;
      if (best < 0 || logp(k) > logp(best)) best = k;
    }
    seq.push_back(best);
    if (best == Vocabulary::kEnd) break;
  }
  return seq;
}

namespace {

struct Hypothesis {
  TokenSequence seq;
  double sum = 0.0;
  double score() const { return sum / static_cast<double>(seq.size() - 1); }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  return a.seq < b.seq;
}

}  // namespace

TokenSequence beam_decode(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn,
                          int beam, int max_len) {
  if (beam < 1) throw Error(ErrorCode::ConfigError, "beam must be at least 1");
  if (max_len < 2) throw Error(ErrorCode::ConfigError, "max_len must be at least 2");
  Runner runner(annotations, params, attn);

  struct Live {
    Hypothesis hyp;
    DecoderState state;
  };
  std::vector<Live> alive{{{{Vocabulary::kStart}, 0.0}, runner.initial_state()}};
  std::vector<Hypothesis> finished;

  while (!alive.empty() && static_cast<int>(alive.front().hyp.seq.size()) < max_len) {
    struct Candidate {
      Hypothesis hyp;
      std::size_t parent;
    };
    std::vector<Candidate> candidates;
    std::vector<DecoderState> next_states;
    for (std::size_t p = 0; p < alive.size(); ++p) {
      DecoderState st = alive[p].state;
      Row logp = runner.step(st, alive[p].hyp.seq.back());
      next_states.push_back(std::move(st));
      for (int k = 0; k < logp.size(); ++k) {
        if (k == Vocabulary::kPad) continue;
        Candidate c{alive[p].hyp, p};
        c.hyp.seq.push_back(k);
        c.hyp.sum += logp(k);
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) { return better(a.hyp, b.hyp); });
    std::vector<Live> next;
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = candidates[i];
      if (c.hyp.seq.back() == Vocabulary::kEnd) finished.push_back(std::move(c.hyp));
      else next.push_back({std::move(c.hyp), next_states[c.parent]});
    }
    alive = std::move(next);
  }
  for (auto& live : alive) finished.push_back(std::move(live.hyp));
  return std::min_element(finished.begin(), finished.end(), better)->seq;
}

double mean_log_prob(const Mat& annotations, const DecoderParams& params, const AttentionParams& attn,
                     const TokenSequence& seq) {
  if (seq.size() < 2) throw Error(ErrorCode::EmptyTarget, "sequence needs at least one emitted token");
  Runner runner(annotations, params, attn);
  DecoderState state = runner.initial_state();
  double sum = 0.0;
  for (std::size_t t = 1; t < seq.size(); ++t) sum += runner.step(state, seq[t - 1])(seq[t]);
  return sum / static_cast<double>(seq.size() - 1);
}

void init_decoder(std::uint64_t seed, const text::EmbeddingMatrix& embedding, const DecoderShape& shape,
                  DecoderParams& params, AttentionParams& attn) {
  const int V = static_cast<int>(embedding.vectors.rows());
  const int E = embedding.dim();
  const int C = shape.context_dim, H = shape.hidden, A = shape.attention_width;
  if (V <= Vocabulary::kNumSpecials - 1 || C < 1 || H < 1 || A < 1 || shape.layers < 1)
    throw Error(ErrorCode::ConfigError, "bad decoder shape");
  Rng rng(derive_seed(seed, "decoder.init"));
  params = DecoderParams{};
  params.embedding = embedding.vectors;
  params.embedding.row(Vocabulary::kPad).setZero();
  for (int l = 0; l < shape.layers; ++l) {
    const int in = l == 0 ? E + C : H;
    params.init_h_w.push_back(glorot_uniform(C, H, C, H, rng));
    params.init_h_b.push_back(Mat::Zero(1, H));
    params.init_c_w.push_back(glorot_uniform(C, H, C, H, rng));
    params.init_c_b.push_back(Mat::Zero(1, H));
    params.lstm_w.push_back(glorot_uniform(in + H, 4 * H, in + H, 4 * H, rng));
    params.lstm_b.push_back(Mat::Zero(1, 4 * H));
  }
  params.out_w = glorot_uniform(H + C, V, H + C, V, rng);
  params.out_b = Mat::Zero(1, V);
  attn.w_a = glorot_uniform(C, A, C, A, rng);
  attn.u_h = glorot_uniform(H, A, H, A, rng);
  attn.v = glorot_uniform(A, 1, A, 1, rng);
  params.visit("", [](const std::string&, Mat& m) { round_to_float(m); });
  attn.visit("", [](const std::string&, Mat& m) { round_to_float(m); });
}

}  // namespace mtlcap::decoder
