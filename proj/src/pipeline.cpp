// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/pipeline.hpp"

#include <algorithm>

#include <cstdlib>
#include <map>
#include <set>

#include "mtlcap/error.hpp"
#include "mtlcap/features.hpp"
#include "mtlcap/fileio.hpp"

namespace mtlcap::pipeline {

namespace fs = std::filesystem;
using training::Task;

std::vector<corpus::CaptionRecord> prepare_manifest(const config::RunConfig& cfg) {
  if (cfg.token_file.empty()) throw Error(ErrorCode::ConfigError, "data.token_file is not set");
  std::map<corpus::Split, fs::path> lists;
  if (!cfg.train_list.empty()) lists[corpus::Split::Train] = cfg.train_list;
  if (!cfg.val_list.empty()) lists[corpus::Split::Val] = cfg.val_list;
  if (!cfg.test_list.empty()) lists[corpus::Split::Test] = cfg.test_list;
  auto records = corpus::convert_flickr_token_file(cfg.token_file, lists);
  corpus::SplitSpec spec;
  spec.seed = cfg.seed;
  spec.train_fraction = cfg.train_fraction;
  return corpus::subsample_train(records, spec);
}

fs::path resolve_cache_dir(const config::RunConfig& cfg) {
  if (const char* env = std::getenv("MTLCAP_CACHE_DIR"); env && *env) return fs::path(env);
  return cfg.cache_dir;
}

namespace {

std::string safe_id(std::string s) {
  for (char& c : s)
    if (c == '/' || c == '\\') c = '.';
  return s;
}

std::vector<corpus::PixelImage> cifar(const fs::path& p) { return corpus::load_cifar_batches({p}); }

std::string cifar_id(const char* split, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "object.%s.%05zu", split, i);
  return buf;
}

std::string folder_id(const char* split, const std::string& rel) { return safe_id(std::string("action.") + split + "." + rel); }

}  // namespace

std::vector<ImageJob> list_images(const config::RunConfig& cfg, const std::vector<corpus::CaptionRecord>& records) {
  std::vector<ImageJob> jobs;
  for (const auto& r : records) jobs.push_back({r.image_id, cfg.image_dir / r.image_path, {}});
  const auto& phases = cfg.train.phases;
  const bool action = std::find(phases.begin(), phases.end(), training::Task::Action) != phases.end();
  const bool object = std::find(phases.begin(), phases.end(), training::Task::Object) != phases.end();
  const std::pair<const char*, fs::path> folders[] = {{"train", cfg.action_train}, {"val", cfg.action_val}};
  for (const auto& [split, root] : folders) {
    if (!action || root.empty()) continue;
    for (const auto& img : corpus::load_labeled_folder(root).images)
      jobs.push_back({folder_id(split, img.image_path), root / img.image_path, {}});
  }
  const std::pair<const char*, fs::path> batches[] = {{"train", cfg.object_train}, {"val", cfg.object_val}};
  for (const auto& [split, file] : batches) {
    if (!object || file.empty()) continue;
    auto images = cifar(file);
    for (std::size_t i = 0; i < images.size(); ++i)
      jobs.push_back({cifar_id(split, i), {}, std::move(images[i].pixels)});
  }
  return jobs;
}

ExtractSummary extract_images(const std::vector<ImageJob>& jobs, const features::BackboneSpec& spec,
                              const fs::path& cache_dir, bool force) {
  ExtractSummary summary;
  const std::string backbone = features::backbone_name(spec.name);
  auto provider = features::make_provider(spec);
  fs::create_directories(cache_dir);
  for (const auto& job : jobs) {
    try {
      if (!force && fs::exists(features::cache_path(job.id, backbone, cache_dir))) {
        ++summary.skipped;
        continue;
      }
      features::FeatureGrid grid;
      if (!job.cifar_pixels.empty()) {
        const fs::path tmp = cache_dir / (job.id + ".tmp.ppm");
        features::write_ppm(features::image_from_cifar(job.cifar_pixels), tmp);
        try {
          grid = provider->extract(tmp);
        } catch (...) {
          fs::remove(tmp);
          throw;
        }
        fs::remove(tmp);
      } else {
        grid = provider->extract(job.path);
      }
      features::cache_write(job.id, backbone, grid, cache_dir);
      ++summary.extracted;
    } catch (const Error& e) {
      summary.failures.emplace_back(job.id, e.what());
    }
  }
  return summary;
}

namespace {

std::vector<std::string> object_class_names(const config::RunConfig& cfg, int count) {
  if (!cfg.object_classes.empty()) return corpus::read_lines(cfg.object_classes);
  std::vector<std::string> names;
  for (int i = 0; i < count; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

bool needs(const config::RunConfig& cfg, Task task) {
  for (Task t : cfg.train.phases)
    if (t == task) return true;
  return false;
}

}  // namespace

training::PipelineData load_pipeline_data(const config::RunConfig& cfg,
                                          const std::vector<corpus::CaptionRecord>& records,
                                          const fs::path& cache_dir) {
  const std::string backbone = features::backbone_name(cfg.backbone);
  auto grid = [&](const std::string& id) { return features::cache_read(id, backbone, cache_dir); };
  training::PipelineData data;

  if (needs(cfg, Task::Action)) {
    if (cfg.action_train.empty()) throw Error(ErrorCode::ConfigError, "action phase needs data.action_train");
    training::ClassificationData cd;
    const auto train = corpus::load_labeled_folder(cfg.action_train);
    cd.class_names = train.class_names;
    for (const auto& img : train.images) cd.train.push_back({grid(folder_id("train", img.image_path)), img.label_id});
    if (!cfg.action_val.empty()) {
      const auto val = corpus::load_labeled_folder(cfg.action_val);
      if (val.class_names != cd.class_names)
        throw Error(ErrorCode::MalformedLine, "action val classes differ from train classes");
      for (const auto& img : val.images) cd.val.push_back({grid(folder_id("val", img.image_path)), img.label_id});
    }
    data.action = std::move(cd);
  }

  if (needs(cfg, Task::Object)) {
    if (cfg.object_train.empty()) throw Error(ErrorCode::ConfigError, "object phase needs data.object_train");
    training::ClassificationData cd;
    auto label = [&](const corpus::PixelImage& p) { return cfg.object_coarse ? p.coarse_label : p.label_id; };
    const auto train = cifar(cfg.object_train);
    int max_label = -1;
    for (const auto& p : train) max_label = std::max(max_label, label(p));
    cd.class_names = object_class_names(cfg, max_label + 1);
    for (std::size_t i = 0; i < train.size(); ++i) cd.train.push_back({grid(cifar_id("train", i)), label(train[i])});
    if (!cfg.object_val.empty()) {
      const auto val = cifar(cfg.object_val);
      for (std::size_t i = 0; i < val.size(); ++i) cd.val.push_back({grid(cifar_id("val", i)), label(val[i])});
    }
    data.object = std::move(cd);
  }

  if (needs(cfg, Task::Caption)) {
    std::vector<corpus::CaptionRecord> train_records;
    for (const auto& r : records)
      if (r.split == corpus::Split::Train) train_records.push_back(r);
    training::CaptionData cd;
    cd.vocab = text::build_vocabulary(train_records, cfg.min_count);
    const int dim = cfg.train.dims.embed_dim;
    cd.embedding = cfg.embeddings.empty()
                       ? text::init_embedding(cd.vocab.size(), dim, cfg.seed)
                       : text::load_word_vectors(cfg.embeddings, cd.vocab, dim, cfg.seed);
    for (const auto& r : records) {
      if (r.split == corpus::Split::Test) continue;
      auto& out = r.split == corpus::Split::Train ? cd.train : cd.val;
      const features::FeatureGrid g = grid(r.image_id);
      for (const auto& cap : r.captions)
        out.push_back({r.image_id, g, text::encode_caption(cap, cd.vocab, cfg.max_caption_len)});
    }
    if (cd.train.empty()) throw Error(ErrorCode::EmptyDataset, "no training captions");
    data.caption = std::move(cd);
  }
  return data;
}

std::string caption_grid(const ModelCheckpoint& ckpt, const features::FeatureGrid& grid, int beam, int max_len) {
  if (!ckpt.has_decoder()) throw Error(ErrorCode::CheckpointLacksDecoder, "checkpoint has no caption decoder");
  const Mat ann = encoder::encode(grid, ckpt.encoder, Mode::inference());
  const auto& cm = *ckpt.caption;
  const text::TokenSequence ids = beam == 0 ? decoder::greedy_decode(ann, cm.decoder, cm.attention, max_len)
                                            : decoder::beam_decode(ann, cm.decoder, cm.attention, beam, max_len);
  return text::decode_caption(ids, cm.vocab);
}

}  // namespace mtlcap::pipeline
