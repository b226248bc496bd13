// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mtlcap/error.hpp"

namespace mtlcap::config {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

features::BackboneSpec RunConfig::backbone_spec() const {
  switch (backbone) {
    case features::BackboneName::Toy: {
      // the toy projection stands in for frozen weights, so it is keyed by
      // weights_ref rather than the run seed
      std::uint64_t toy_seed = 0;
      const std::string prefix = "toy-seed-";
      if (!weights_ref.empty()) {
        std::size_t used = 0;
        try {
          if (weights_ref.rfind(prefix, 0) != 0) throw std::invalid_argument(weights_ref);
          toy_seed = std::stoull(weights_ref.substr(prefix.size()), &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used == 0 || prefix.size() + used != weights_ref.size())
          throw Error(ErrorCode::ConfigError, "toy weights_ref must look like toy-seed-<n>: " + weights_ref);
      }
      return features::BackboneSpec::toy(toy_seed);
    }
    case features::BackboneName::ResNet: return features::BackboneSpec::resnet(weights_ref, command);
    case features::BackboneName::VggNet: return features::BackboneSpec::vggnet(weights_ref, command);
  }
  return features::BackboneSpec::toy(0);
}

RunConfig toy_defaults() {
  RunConfig c;
  c.train.dims.encoder_width = 16;
  c.train.dims.head_width = 16;
  c.train.dims.embed_dim = 16;
  c.train.dims.lstm_hidden = 32;
  c.train.dims.attention_width = 16;
  c.train.batch_size = 4;
  c.train.learning_rate = 0.005;
  c.train.epochs = 20;
  c.min_count = 1;
  c.beam = 3;
  c.decode_max_len = 12;
  return c;
}

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"run", {"seed", "out_dir"}},
      {"data",
       {"token_file", "train_list", "val_list", "test_list", "image_dir", "manifest", "train_fraction",
        "action_train", "action_val", "object_train", "object_val", "object_classes", "object_label"}},
      {"features", {"backbone", "weights_ref", "command", "cache_dir"}},
      {"text", {"embeddings", "min_count", "max_caption_len"}},
      {"model",
       {"encoder_width", "encoder_layers", "head_width", "head_layers", "embed_dim", "lstm_hidden", "lstm_layers",
        "attention_width", "dropout"}},
      {"train",
       {"phases", "learning_rate", "batch_size", "epochs", "epochs_action", "epochs_object", "epochs_caption",
        "clip_norm", "beta1", "beta2", "eps"}},
      {"decode", {"beam", "max_len"}},
  };
  return s;
}

class Reader {
 public:
  Reader(const pt::ptree& tree, const fs::path& file) : tree_(tree), file_(file), dir_(file.parent_path()) {}

  template <typename T>
  void get(const std::string& key, T& out) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    std::istringstream in(*v);
    T parsed{};
    in >> parsed;
    if (in.fail() || !(in >> std::ws).eof()) fail(key, *v);
    out = parsed;
  }

  void get(const std::string& key, std::string& out) const {
    if (auto v = tree_.get_optional<std::string>(key)) out = *v;
  }

  void get(const std::string& key, bool& out) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    if (*v == "true" || *v == "1") out = true;
    else if (*v == "false" || *v == "0") out = false;
    else fail(key, *v);
  }

  void path(const std::string& key, fs::path& out) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) {
      // relative defaults are relative to the config file too
      if (!out.empty() && out.is_relative()) out = (dir_ / out).lexically_normal();
      return;
    }
    if (v->empty()) {
      out.clear();
      return;
    }
    fs::path p(*v);
    out = p.is_absolute() ? p : (dir_ / p).lexically_normal();
  }

  [[noreturn]] void fail(const std::string& key, const std::string& value) const {
    throw Error(ErrorCode::ConfigError, file_.string() + ": bad value for " + key + ": '" + value + "'");
  }

 private:
  const pt::ptree& tree_;
  fs::path file_;
  fs::path dir_;
};

}  // namespace

RunConfig load_run_config(const fs::path& path, const RunConfig& base) {
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
    throw Error(ErrorCode::ConfigError, path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error(ErrorCode::ConfigError, path.string() + ": key " + section + " outside any section");
    auto it = schema().find(section);
    if (it == schema().end())
      throw Error(ErrorCode::ConfigError, path.string() + ": unknown section [" + section + "]");
    for (const auto& kv : body)
      if (!it->second.count(kv.first))
        throw Error(ErrorCode::ConfigError, path.string() + ": unknown key " + section + "." + kv.first);
  }

  RunConfig c = base;
  Reader r(tree, path);
  r.get("run.seed", c.seed);
  r.path("run.out_dir", c.out_dir);

  r.path("data.token_file", c.token_file);
  r.path("data.train_list", c.train_list);
  r.path("data.val_list", c.val_list);
  r.path("data.test_list", c.test_list);
  r.path("data.image_dir", c.image_dir);
  r.path("data.manifest", c.manifest);
  r.get("data.train_fraction", c.train_fraction);
  r.path("data.action_train", c.action_train);
  r.path("data.action_val", c.action_val);
  r.path("data.object_train", c.object_train);
  r.path("data.object_val", c.object_val);
  r.path("data.object_classes", c.object_classes);
  std::string label = c.object_coarse ? "coarse" : "fine";
  r.get("data.object_label", label);
  if (label != "coarse" && label != "fine") r.fail("data.object_label", label);
  c.object_coarse = label == "coarse";

  std::string backbone = features::backbone_name(c.backbone);
  r.get("features.backbone", backbone);
  try {
    c.backbone = features::parse_backbone_name(backbone);
  } catch (const Error&) {
    r.fail("features.backbone", backbone);
  }
  r.get("features.weights_ref", c.weights_ref);
  r.get("features.command", c.command);
  r.path("features.cache_dir", c.cache_dir);

  r.path("text.embeddings", c.embeddings);
  r.get("text.min_count", c.min_count);
  r.get("text.max_caption_len", c.max_caption_len);

  auto& d = c.train.dims;
  r.get("model.encoder_width", d.encoder_width);
  r.get("model.encoder_layers", d.encoder_layers);
  r.get("model.head_width", d.head_width);
  r.get("model.head_layers", d.head_layers);
  r.get("model.embed_dim", d.embed_dim);
  r.get("model.lstm_hidden", d.lstm_hidden);
  r.get("model.lstm_layers", d.lstm_layers);
  r.get("model.attention_width", d.attention_width);
  r.get("model.dropout", d.dropout);

  auto& t = c.train;
  if (auto phases = tree.get_optional<std::string>("train.phases")) {
    try {
      t.phases = training::parse_phases(*phases);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
  }
  r.get("train.learning_rate", t.learning_rate);
  r.get("train.batch_size", t.batch_size);
  r.get("train.epochs", t.epochs);
  for (auto task : {training::Task::Action, training::Task::Object, training::Task::Caption}) {
    int e = -1;
    r.get("train.epochs_" + training::task_name(task), e);
    if (e >= 0) t.phase_epochs[task] = e;
  }
  r.get("train.clip_norm", t.clip_norm);
  r.get("train.beta1", t.adam.beta1);
  r.get("train.beta2", t.adam.beta2);
  r.get("train.eps", t.adam.epsilon);

  r.get("decode.beam", c.beam);
  r.get("decode.max_len", c.decode_max_len);

  t.seed = c.seed;
  if (c.min_count < 1) r.fail("text.min_count", std::to_string(c.min_count));
  if (c.max_caption_len < 2) r.fail("text.max_caption_len", std::to_string(c.max_caption_len));
  if (c.beam < 1) r.fail("decode.beam", std::to_string(c.beam));
  if (c.decode_max_len < 2) r.fail("decode.max_len", std::to_string(c.decode_max_len));
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0))
    r.fail("data.train_fraction", std::to_string(c.train_fraction));
  t.validate();
  return c;
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  const auto& d = c.train.dims;
  const auto& t = c.train;
  std::string phases;
  for (auto task : t.phases) phases += (phases.empty() ? "" : ",") + training::task_name(task);
  o << "[run]\nseed = " << c.seed << "\nout_dir = " << c.out_dir.string() << "\n\n";
  o << "[data]\ntoken_file = " << c.token_file.string() << "\ntrain_list = " << c.train_list.string()
    << "\nval_list = " << c.val_list.string() << "\ntest_list = " << c.test_list.string()
    << "\nimage_dir = " << c.image_dir.string() << "\nmanifest = " << c.manifest.string()
    << "\ntrain_fraction = " << c.train_fraction << "\naction_train = " << c.action_train.string()
    << "\naction_val = " << c.action_val.string() << "\nobject_train = " << c.object_train.string()
    << "\nobject_val = " << c.object_val.string() << "\nobject_classes = " << c.object_classes.string()
    << "\nobject_label = " << (c.object_coarse ? "coarse" : "fine") << "\n\n";
  o << "[features]\nbackbone = " << features::backbone_name(c.backbone) << "\nweights_ref = " << c.weights_ref
    << "\ncommand = " << c.command << "\ncache_dir = " << c.cache_dir.string() << "\n\n";
  o << "[text]\nembeddings = " << c.embeddings.string() << "\nmin_count = " << c.min_count
    << "\nmax_caption_len = " << c.max_caption_len << "\n\n";
  o << "[model]\nencoder_width = " << d.encoder_width << "\nencoder_layers = " << d.encoder_layers
    << "\nhead_width = " << d.head_width << "\nhead_layers = " << d.head_layers << "\nembed_dim = " << d.embed_dim
    << "\nlstm_hidden = " << d.lstm_hidden << "\nlstm_layers = " << d.lstm_layers
    << "\nattention_width = " << d.attention_width << "\ndropout = " << d.dropout << "\n\n";
  o << "[train]\nphases = " << phases << "\nlearning_rate = " << t.learning_rate << "\nbatch_size = " << t.batch_size
    << "\nepochs = " << t.epochs;
  for (auto task : {training::Task::Action, training::Task::Object, training::Task::Caption})
    o << "\nepochs_" << training::task_name(task) << " = " << t.epochs_for(task);
  o << "\nclip_norm = " << t.clip_norm << "\nbeta1 = " << t.adam.beta1 << "\nbeta2 = " << t.adam.beta2
    << "\neps = " << t.adam.epsilon << "\n\n";
  o << "[decode]\nbeam = " << c.beam << "\nmax_len = " << c.decode_max_len << "\n";
  return o.str();
}

}  // namespace mtlcap::config
