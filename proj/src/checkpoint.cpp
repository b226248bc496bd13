// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/checkpoint.hpp"

#include <cstring>
#include <json.hpp>

#include "mtlcap/error.hpp"
#include "mtlcap/fileio.hpp"

namespace mtlcap {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'T', 'C'};

void write_tensor(ByteWriter& w, const std::string& name, const Mat& m) {
  w.str(name);
  w.u32(2);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
}

nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"feature_dim", d.feature_dim},   {"encoder_width", d.encoder_width},
          {"encoder_layers", d.encoder_layers}, {"head_width", d.head_width},
          {"head_layers", d.head_layers},   {"embed_dim", d.embed_dim},
          {"lstm_hidden", d.lstm_hidden},   {"lstm_layers", d.lstm_layers},
          {"attention_width", d.attention_width}, {"dropout", d.dropout}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.feature_dim = j.at("feature_dim");
  d.encoder_width = j.at("encoder_width");
  d.encoder_layers = j.at("encoder_layers");
  d.head_width = j.at("head_width");
  d.head_layers = j.at("head_layers");
  d.embed_dim = j.at("embed_dim");
  d.lstm_hidden = j.at("lstm_hidden");
  d.lstm_layers = j.at("lstm_layers");
  d.attention_width = j.at("attention_width");
  d.dropout = j.at("dropout");
  return d;
}

// Allocates parameter shapes for a given set of dims so tensors can be read
// back into place by name.
void shape_model(ModelCheckpoint& ck, bool with_caption, int vocab_size) {
  const ModelDims& d = ck.dims;
  ck.encoder = encoder::SharedEncoderParams{};
  ck.encoder.proj_w = Mat::Zero(d.feature_dim, d.encoder_width);
  ck.encoder.proj_b = Mat::Zero(1, d.encoder_width);
  for (int l = 0; l < d.encoder_layers; ++l) {
    ck.encoder.conv_w.push_back(Mat::Zero(9 * d.encoder_width, d.encoder_width));
    ck.encoder.conv_b.push_back(Mat::Zero(1, d.encoder_width));
  }
  for (auto& [task, names] : ck.class_names) {
    heads::ClassifierHeadParams h;
    int in = d.encoder_width;
    for (int l = 0; l < d.head_layers; ++l) {
      h.hidden_w.push_back(Mat::Zero(in, d.head_width));
      h.hidden_b.push_back(Mat::Zero(1, d.head_width));
      in = d.head_width;
    }
    h.out_w = Mat::Zero(in, static_cast<Eigen::Index>(names.size()));
    h.out_b = Mat::Zero(1, static_cast<Eigen::Index>(names.size()));
    ck.heads[task] = std::move(h);
  }
  if (with_caption) {
    text::EmbeddingMatrix emb;
    emb.vectors = Mat::Zero(vocab_size, d.embed_dim);
    CaptionModel cm;
    decoder::init_decoder(0, emb, {d.encoder_width, d.lstm_hidden, d.lstm_layers, d.attention_width}, cm.decoder,
                          cm.attention);
    ck.caption = std::move(cm);
  }
}

}  // namespace

void ModelCheckpoint::visit(const ParamVisitor& f) {
  encoder.visit("encoder.", f);
  for (auto& [task, head] : heads) head.visit("head." + task + ".", f);
  if (caption) {
    caption->attention.visit("attention.", f);
    caption->decoder.visit("decoder.", f);
  }
}

void ModelCheckpoint::visit(const ConstParamVisitor& f) const {
  // The per-module visitors only hand out references; nothing is written.
  const_cast<ModelCheckpoint*>(this)->visit(ParamVisitor([&](const std::string& n, Mat& m) { f(n, m); }));
}

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  std::vector<std::pair<std::string, const Mat*>> tensors;
  ckpt.visit(ConstParamVisitor([&](const std::string& name, const Mat& m) { tensors.emplace_back(name, &m); }));
  for (const auto& [name, m] : ckpt.optimizer.m) tensors.emplace_back("adam.m." + name, &m);
  for (const auto& [name, v] : ckpt.optimizer.v) tensors.emplace_back("adam.v." + name, &v);

  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(ckpt.format_version);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) write_tensor(w, name, *m);

  nlohmann::json meta;
  meta["format_version"] = ckpt.format_version;
  meta["seed"] = ckpt.seed;
  meta["dims"] = dims_to_json(ckpt.dims);
  meta["provenance"] = ckpt.provenance;
  meta["class_names"] = ckpt.class_names;
  meta["adam_step"] = ckpt.optimizer.step;
  meta["info"] = ckpt.info;
  if (ckpt.caption) meta["vocab"] = ckpt.caption->vocab.tokens();
  w.str(meta.dump());
  return w.take();
}

ModelCheckpoint deserialize_checkpoint(std::string_view bytes) {
  auto bad = [](const std::string& why) { return Error(ErrorCode::IncompatibleCheckpoint, why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw bad("bad magic");
  ByteReader r(bytes.substr(4), ErrorCode::IncompatibleCheckpoint);
  ModelCheckpoint ck;
  ck.format_version = r.u32();
  if (ck.format_version != kCheckpointVersion) throw bad("unsupported format version");

  std::map<std::string, Mat> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t ndims = r.u32();
    if (ndims != 2) throw bad("tensor " + name + " is not 2-D");
    const std::uint32_t rows = r.u32(), cols = r.u32();
    r.need(static_cast<std::size_t>(rows) * cols * 4);
    Mat m(rows, cols);
    for (std::uint32_t a = 0; a < rows; ++a)
      for (std::uint32_t b = 0; b < cols; ++b) m(a, b) = r.f32();
    tensors.emplace(std::move(name), std::move(m));
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
    if (!r.done()) throw bad("trailing bytes");
    ck.seed = meta.at("seed");
    ck.dims = dims_from_json(meta.at("dims"));
    ck.provenance = meta.at("provenance").get<std::vector<std::string>>();
    ck.class_names = meta.at("class_names").get<std::map<std::string, std::vector<std::string>>>();
    ck.optimizer.step = meta.at("adam_step");
    ck.info = meta.at("info").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("metadata: ") + e.what());
  }

  const bool with_caption = meta.contains("vocab");
  std::vector<std::string> vocab_tokens;
  if (with_caption) vocab_tokens = meta["vocab"].get<std::vector<std::string>>();
  shape_model(ck, with_caption, static_cast<int>(vocab_tokens.size()));
  if (with_caption) ck.caption->vocab = text::Vocabulary::from_tokens(vocab_tokens);

  ck.visit(ParamVisitor([&](const std::string& name, Mat& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw bad("missing tensor " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) throw bad("shape of " + name);
    m = std::move(it->second);
    tensors.erase(it);
  }));
  for (auto& [name, m] : tensors) {
    if (name.starts_with("adam.m.")) ck.optimizer.m.emplace(name.substr(7), std::move(m));
    else if (name.starts_with("adam.v.")) ck.optimizer.v.emplace(name.substr(7), std::move(m));
    else throw bad("unexpected tensor " + name);
  }
  return ck;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

std::string parameter_bytes(const ModelCheckpoint& ckpt, const std::string& prefix) {
  ByteWriter w;
  ckpt.visit(ConstParamVisitor([&](const std::string& name, const Mat& m) {
    if (name.starts_with(prefix)) {
      w.str(name);
      w.raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
  }));
  return w.take();
}

}  // namespace mtlcap
