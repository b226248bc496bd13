// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "mtlcap/error.hpp"
#include "mtlcap/fileio.hpp"
#include "mtlcap/rng.hpp"

namespace fs = std::filesystem;

namespace mtlcap::training {

using text::Vocabulary;

std::string task_name(Task task) {
  switch (task) {
    case Task::Action: return "action";
    case Task::Object: return "object";
    case Task::Caption: return "caption";
  }
  return "caption";
}

Task parse_task(const std::string& name) {
  if (name == "action") return Task::Action;
  if (name == "object") return Task::Object;
  if (name == "caption") return Task::Caption;
  throw Error(ErrorCode::ConfigError, "unknown phase '" + name + "'");
}

std::vector<Task> parse_phases(const std::string& text) {
  std::vector<Task> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw Error(ErrorCode::ConfigError, "empty phase in '" + text + "'");
    out.push_back(parse_task(item.substr(b, e - b + 1)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int TrainConfig::epochs_for(Task task) const {
  auto it = phase_epochs.find(task);
  return it == phase_epochs.end() ? epochs : it->second;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "learning_rate must be positive");
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be at least 1");
  if (epochs < 1) throw Error(ErrorCode::ConfigError, "epochs must be at least 1");
  for (const auto& [task, n] : phase_epochs)
    if (n < 1) throw Error(ErrorCode::ConfigError, "epochs for " + task_name(task) + " must be at least 1");
  if (phases.empty()) throw Error(ErrorCode::ConfigError, "no phases configured");
  std::set<Task> seen;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (!seen.insert(phases[i]).second)
      throw Error(ErrorCode::PhaseOrderViolation, "phase " + task_name(phases[i]) + " listed twice");
    if (phases[i] == Task::Caption && i + 1 != phases.size())
      throw Error(ErrorCode::PhaseOrderViolation, "caption must be the last phase");
  }
  if (dims.encoder_width < 1 || dims.encoder_layers < 1 || dims.head_width < 1 || dims.head_layers < 0 ||
      dims.lstm_hidden < 1 || dims.lstm_layers < 1 || dims.attention_width < 1 || dims.embed_dim < 1)
    throw Error(ErrorCode::ConfigError, "model widths must be positive");
  if (!(dims.dropout >= 0.0 && dims.dropout < 1.0)) throw Error(ErrorCode::ConfigError, "dropout must lie in [0, 1)");
  if (clip_norm < 0.0) throw Error(ErrorCode::ConfigError, "clip_norm must be non-negative");
}

std::string format_phase_report(const PhaseReport& report) {
  std::string out;
  char buf[256];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.3f\n", e.epoch, e.train_loss, e.val_loss, e.metric,
                  e.seconds);
    out += buf;
  }
  return out;
}

namespace {

int argmax(const Row& r) {
  Eigen::Index best = 0;
  r.maxCoeff(&best);
  return static_cast<int>(best);
}

const ClassificationData& classification_data(Task task, const PipelineData& data) {
  const auto& slot = task == Task::Action ? data.action : data.object;
  if (!slot || slot->train.empty()) throw Error(ErrorCode::EmptyDataset, task_name(task) + " training data");
  return *slot;
}

int feature_dim_of(Task task, const PipelineData& data) {
  if (task == Task::Caption) {
    if (!data.caption || data.caption->train.empty()) throw Error(ErrorCode::EmptyDataset, "caption training data");
    return data.caption->train.front().grid.D();
  }
  return classification_data(task, data).train.front().grid.D();
}

// Parameters and their gradient buffers for one phase, in matching order.
struct Trainable {
  std::vector<ParamRef> params;
  std::vector<Mat*> grads;
};

struct PhaseGrads {
  encoder::SharedEncoderParams encoder;
  heads::ClassifierHeadParams head;
  decoder::DecoderParams decoder;
  decoder::AttentionParams attention;
};

Trainable collect(Task task, ModelCheckpoint& ck, PhaseGrads& g) {
  Trainable t;
  auto add_pair = [&](const std::string& prefix, auto& params, auto& grads) {
    std::vector<ParamRef> ps;
    params.visit(prefix, [&](const std::string& n, Mat& m) { ps.push_back({n, &m}); });
    std::vector<Mat*> gs;
    grads.visit(prefix, [&](const std::string&, Mat& m) { gs.push_back(&m); });
    t.params.insert(t.params.end(), ps.begin(), ps.end());
    t.grads.insert(t.grads.end(), gs.begin(), gs.end());
  };
  add_pair("encoder.", ck.encoder, g.encoder);
  if (task == Task::Caption) {
    add_pair("attention.", ck.caption->attention, g.attention);
    add_pair("decoder.", ck.caption->decoder, g.decoder);
  } else {
    const std::string name = task_name(task);
    add_pair("head." + name + ".", ck.heads.at(name), g.head);
  }
  return t;
}

void zero(const std::vector<Mat*>& grads) {
  for (Mat* m : grads) m->setZero();
}

int counted_tokens(const text::TokenSequence& seq) {
  int n = 0;
  for (std::size_t t = 1; t < seq.size(); ++t)
    if (seq[t] != Vocabulary::kPad) ++n;
  return n;
}

}  // namespace

std::pair<double, double> evaluate_classifier(const ModelCheckpoint& ckpt, Task task,
                                              const std::vector<LabeledGrid>& data) {
  if (data.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const auto& head = ckpt.heads.at(task_name(task));
  double loss = 0.0;
  int correct = 0;
  for (const auto& ex : data) {
    Mat ann = encoder::encode(ex.grid, ckpt.encoder, Mode::inference());
    Row probs = heads::head_forward(ann, head, Mode::inference());
    loss += heads::classification_loss(probs, ex.label);
    if (argmax(probs) == ex.label) ++correct;
  }
  return {loss / static_cast<double>(data.size()), static_cast<double>(correct) / static_cast<double>(data.size())};
}

std::pair<double, double> evaluate_captioner(const ModelCheckpoint& ckpt, const std::vector<CaptionExample>& data) {
  if (data.empty() || !ckpt.caption)
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double loss = 0.0;
  long tokens = 0, correct = 0;
  for (const auto& ex : data) {
    Mat ann = encoder::encode(ex.grid, ckpt.encoder, Mode::inference());
    decoder::SequenceCache cache;
    loss += decoder::teacher_forced_forward(ann, ex.target, ckpt.caption->decoder, ckpt.caption->attention,
                                            Mode::inference(), cache);
    tokens += cache.tokens;
    for (const auto& st : cache.steps)
      if (st.target != Vocabulary::kPad && argmax(st.probs) == st.target) ++correct;
  }
  if (tokens == 0) return {0.0, 0.0};
  return {loss / static_cast<double>(tokens), static_cast<double>(correct) / static_cast<double>(tokens)};
}

PhaseResult train_phase(Task task, const PipelineData& data, const ModelCheckpoint* checkpoint_in,
                        const TrainConfig& config) {
  config.validate();
  const std::string name = task_name(task);
  const int feature_dim = feature_dim_of(task, data);

  PhaseResult result;
  ModelCheckpoint& ck = result.checkpoint;
  if (checkpoint_in) {
    ck = *checkpoint_in;
    if (ck.encoder.input_dim() != feature_dim)
      throw Error(ErrorCode::IncompatibleCheckpoint, "encoder expects " + std::to_string(ck.encoder.input_dim()) +
                                                         " feature channels, data has " + std::to_string(feature_dim));
  } else {
    ck.seed = config.seed;
    ck.dims = config.dims;
    ck.dims.feature_dim = feature_dim;
    ck.encoder = encoder::init_encoder(config.seed, feature_dim, ck.dims.encoder_width, ck.dims.encoder_layers);
  }
  for (const auto& [k, v] : config.checkpoint_info) ck.info[k] = v;
  const ModelDims& dims = ck.dims;

  if (task == Task::Caption) {
    const CaptionData& cd = *data.caption;
    if (cd.embedding.vectors.rows() != cd.vocab.size())
      throw Error(ErrorCode::ShapeMismatch, "embedding rows do not match vocabulary");
    if (ck.caption) {
      if (!(ck.caption->vocab == cd.vocab))
        throw Error(ErrorCode::IncompatibleCheckpoint, "checkpoint decoder was trained on another vocabulary");
    } else {
      if (cd.embedding.dim() != dims.embed_dim)
        throw Error(ErrorCode::IncompatibleCheckpoint, "embedding dim " + std::to_string(cd.embedding.dim()) +
                                                           " vs configured " + std::to_string(dims.embed_dim));
      CaptionModel cm;
      cm.vocab = cd.vocab;
      decoder::init_decoder(derive_seed(ck.seed, "decoder"), cd.embedding,
                            {dims.encoder_width, dims.lstm_hidden, dims.lstm_layers, dims.attention_width},
                            cm.decoder, cm.attention);
      ck.caption = std::move(cm);
    }
  } else {
    const ClassificationData& cd = classification_data(task, data);
    const int classes = static_cast<int>(cd.class_names.size());
    for (const auto& ex : cd.train)
      if (ex.label < 0 || ex.label >= classes) throw Error(ErrorCode::LabelOutOfRange, name + " label " + std::to_string(ex.label));
    auto it = ck.heads.find(name);
    if (it == ck.heads.end()) {
      ck.heads[name] = heads::init_head(derive_seed(ck.seed, "head." + name), dims.encoder_width, classes,
                                        dims.head_width, dims.head_layers);
      ck.class_names[name] = cd.class_names;
    } else if (it->second.classes() != classes) {
      throw Error(ErrorCode::IncompatibleCheckpoint, name + " head has a different class count");
    }
  }

  result.initial_encoder = parameter_bytes(ck, "encoder.");

  // Fresh optimizer per phase.
  ck.optimizer = optim::AdamState{};
  optim::AdamConfig adam = config.adam;
  adam.learning_rate = config.learning_rate;

  PhaseGrads grads;
  grads.encoder = ck.encoder.zeros_like();
  if (task == Task::Caption) {
    grads.decoder = ck.caption->decoder.zeros_like();
    grads.attention = ck.caption->attention.zeros_like();
  } else {
    grads.head = ck.heads.at(name).zeros_like();
  }
  Trainable trainable = collect(task, ck, grads);
  std::vector<const Mat*> grad_view(trainable.grads.begin(), trainable.grads.end());

  const std::size_t n_train =
      task == Task::Caption ? data.caption->train.size() : classification_data(task, data).train.size();
  Rng batch_rng(derive_seed(config.seed, "train." + name + ".batches"));
  Rng dropout_rng(derive_seed(config.seed, "train." + name + ".dropout"));
  const Mode mode = Mode::train(dropout_rng, dims.dropout);

  double best_val = std::numeric_limits<double>::infinity();
  result.best = ck;
  result.report.task = task;
  const int epochs = config.epochs_for(task);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order = batch_rng.permutation(n_train);
    double epoch_loss = 0.0;
    double epoch_weight = 0.0;

    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t end = std::min(n_train, start + batch);
      zero(trainable.grads);
      double batch_loss = 0.0;
      double weight = 0.0;

      if (task == Task::Caption) {
        const auto& examples = data.caption->train;
        int tokens = 0;
        for (std::size_t i = start; i < end; ++i) tokens += counted_tokens(examples[order[i]].target);
        const double scale = tokens > 0 ? 1.0 / tokens : 0.0;
        for (std::size_t i = start; i < end; ++i) {
          const auto& ex = examples[order[i]];
          encoder::EncoderCache ecache;
          Mat ann = encoder::encode(ex.grid, ck.encoder, mode, &ecache);
          decoder::SequenceCache dcache;
          batch_loss += decoder::teacher_forced_forward(ann, ex.target, ck.caption->decoder, ck.caption->attention,
                                                        mode, dcache);
          Mat d_ann = decoder::teacher_forced_backward(dcache, ck.caption->decoder, ck.caption->attention, scale,
                                                       grads.decoder, grads.attention);
          encoder::encode_backward(ecache, ck.encoder, d_ann, grads.encoder);
        }
        weight = tokens;
        if (config.clip_norm > 0.0) optim::clip_global_norm(trainable.grads, config.clip_norm);
      } else {
        const auto& examples = classification_data(task, data).train;
        const auto& head = ck.heads.at(name);
        const double scale = 1.0 / static_cast<double>(end - start);
        for (std::size_t i = start; i < end; ++i) {
          const auto& ex = examples[order[i]];
          encoder::EncoderCache ecache;
          Mat ann = encoder::encode(ex.grid, ck.encoder, mode, &ecache);
          heads::HeadCache hcache;
          Row probs = heads::head_forward(ann, head, mode, &hcache);
          batch_loss += heads::classification_loss(probs, ex.label);
          Mat d_ann = heads::head_backward(hcache, head, ex.label, scale, grads.head);
          encoder::encode_backward(ecache, ck.encoder, d_ann, grads.encoder);
        }
        weight = static_cast<double>(end - start);
      }

      optim::adam_step(trainable.params, grad_view, ck.optimizer, adam);
      for (auto& p : trainable.params) round_to_float(*p.value);
      for (auto& [n, m] : ck.optimizer.m) round_to_float(m);
      for (auto& [n, v] : ck.optimizer.v) round_to_float(v);
      if (task == Task::Caption) ck.caption->decoder.embedding.row(Vocabulary::kPad).setZero();

      result.report.step_losses.push_back(weight > 0 ? batch_loss / weight : 0.0);
      epoch_loss += batch_loss;
      epoch_weight += weight;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_weight > 0 ? epoch_loss / epoch_weight : 0.0;
    std::tie(stats.val_loss, stats.metric) =
        task == Task::Caption ? evaluate_captioner(ck, data.caption->val)
                              : evaluate_classifier(ck, task, classification_data(task, data).val);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);
    if (std::isfinite(stats.val_loss) && stats.val_loss < best_val) {
      best_val = stats.val_loss;
      result.best = ck;
    }
  }

  ck.provenance.push_back(name);
  if (!std::isfinite(best_val)) result.best = ck;
  else result.best.provenance = ck.provenance;
  return result;
}

PipelineResult run_pipeline(const TrainConfig& config, const PipelineData& data, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  PipelineResult result;
  std::optional<ModelCheckpoint> current;
  int index = 1;
  for (Task task : config.phases) {
    PhaseResult phase = train_phase(task, data, current ? &*current : nullptr, config);
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%02d_", index++);
    const std::string stem = prefix + task_name(task);
    const fs::path ck_path = out_dir / (stem + ".amtc");
    save_checkpoint(phase.checkpoint, ck_path);
    save_checkpoint(phase.best, out_dir / (stem + ".best.amtc"));
    write_file_atomic(out_dir / (stem + ".report.tsv"), format_phase_report(phase.report));
    std::string steps;
    char line[64];
    for (double loss : phase.report.step_losses) {
      std::snprintf(line, sizeof line, "%.17g\n", loss);
      steps += line;
    }
    write_file_atomic(out_dir / (stem + ".steps.tsv"), steps);
    if (task != Task::Caption) {
      std::string classes;
      for (const auto& c : phase.checkpoint.class_names.at(task_name(task))) classes += c + "\n";
      write_file_atomic(out_dir / (task_name(task) + ".classes.txt"), classes);
    } else {
      text::save_vocabulary(phase.checkpoint.caption->vocab, out_dir / "vocab.txt");
    }
    result.checkpoint_files.push_back(ck_path);
    result.reports.push_back(std::move(phase.report));
    current = std::move(phase.checkpoint);
  }
  result.checkpoint = std::move(*current);
  return result;
}

}  // namespace mtlcap::training
