// SPDX-License-Identifier: Apache-2.0
// mtlcap: prepare -> extract -> train -> caption -> evaluate
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mtlcap/checkpoint.hpp"
#include "mtlcap/config.hpp"
#include "mtlcap/error.hpp"
#include "mtlcap/fileio.hpp"
#include "mtlcap/metrics.hpp"
#include "mtlcap/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mtlcap;

namespace {

struct Options {
  std::string config;
  bool toy = false;
  std::optional<std::uint64_t> seed;

  // prepare / extract / caption / evaluate
  std::string manifest;
  std::string out;
  bool force = false;

  // train
  std::string phases;
  std::optional<int> epochs;

  // caption
  std::string checkpoint;
  std::vector<std::string> images;
  std::string split = "test";
  std::optional<int> beam;
  bool greedy = false;

  // evaluate
  std::string hyps;
  std::string label = "model";
};

config::RunConfig load_config(const Options& o) {
  const config::RunConfig base = o.toy ? config::toy_defaults() : config::RunConfig{};
  config::RunConfig cfg = o.config.empty() ? base : config::load_run_config(o.config, base);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  return cfg;
}

fs::path manifest_path(const Options& o, const config::RunConfig& cfg) {
  if (!o.manifest.empty()) return o.manifest;
  if (!cfg.manifest.empty()) return cfg.manifest;
  throw Error(ErrorCode::ConfigError, "no manifest: pass --manifest or set data.manifest");
}

int cmd_prepare(const Options& o) {
  const auto cfg = load_config(o);
  const fs::path out = o.out.empty() ? manifest_path(o, cfg) : fs::path(o.out);
  const auto records = pipeline::prepare_manifest(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  corpus::write_manifest(records, out);
  int counts[3] = {0, 0, 0};
  for (const auto& r : records) ++counts[static_cast<int>(r.split)];
  std::printf("manifest\t%s\ntrain\t%d\nval\t%d\ntest\t%d\n", out.string().c_str(), counts[0], counts[1], counts[2]);
  return 0;
}

int cmd_extract(const Options& o) {
  auto cfg = load_config(o);
  if (!o.phases.empty()) cfg.train.phases = training::parse_phases(o.phases);
  const auto records = corpus::load_caption_manifest(manifest_path(o, cfg));
  const fs::path cache = pipeline::resolve_cache_dir(cfg);
  const auto summary = pipeline::extract_images(pipeline::list_images(cfg, records), cfg.backbone_spec(), cache, o.force);
  for (const auto& [id, msg] : summary.failures) std::fprintf(stderr, "extract: %s: %s\n", id.c_str(), msg.c_str());
  std::printf("extracted\t%d\nskipped\t%d\nfailed\t%zu\n", summary.extracted, summary.skipped, summary.failures.size());
  return summary.failures.empty() ? 0 : 2;
}

/// Config echo for checkpoints: paths cut to their file names, so runs in
/// different directories produce identical checkpoints.
std::string portable_echo(config::RunConfig c) {
  for (fs::path* p : {&c.out_dir, &c.token_file, &c.train_list, &c.val_list, &c.test_list, &c.image_dir,
                      &c.manifest, &c.action_train, &c.action_val, &c.object_train, &c.object_val,
                      &c.object_classes, &c.cache_dir, &c.embeddings})
    *p = p->lexically_normal().filename().empty() ? p->lexically_normal().parent_path().filename()
                                                  : p->lexically_normal().filename();
  return config::format_run_config(c);
}

int cmd_train(const Options& o) {
  auto cfg = load_config(o);
  if (!o.phases.empty()) cfg.train.phases = training::parse_phases(o.phases);
  if (o.epochs) {
    cfg.train.epochs = *o.epochs;
    cfg.train.phase_epochs.clear();
  }
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.train.validate();

  std::vector<corpus::CaptionRecord> records;
  for (auto t : cfg.train.phases)
    if (t == training::Task::Caption) records = corpus::load_caption_manifest(manifest_path(o, cfg));
  const auto data = pipeline::load_pipeline_data(cfg, records, pipeline::resolve_cache_dir(cfg));

  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "config.resolved.ini", config::format_run_config(cfg));
  cfg.train.checkpoint_info["config"] = portable_echo(cfg);
  cfg.train.checkpoint_info["backbone"] = features::backbone_name(cfg.backbone) + ":" + cfg.weights_ref;
  training::PipelineResult result;
  try {
    result = training::run_pipeline(cfg.train, data, cfg.out_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "train: aborted during phases [%s]\n", o.phases.empty() ? "config" : o.phases.c_str());
    throw;
  }
  for (const auto& report : result.reports)
    for (const auto& e : report.epochs)
      std::printf("%s\tepoch %d\ttrain_loss %.6f\tval_loss %.6f\tmetric %.4f\n", training::task_name(report.task).c_str(),
                  e.epoch, e.train_loss, e.val_loss, e.metric);
  std::string prov;
  for (const auto& p : result.checkpoint.provenance) prov += (prov.empty() ? "" : ",") + p;
  std::printf("provenance\t%s\n", prov.c_str());
  for (const auto& f : result.checkpoint_files) std::printf("checkpoint\t%s\n", f.string().c_str());
  return 0;
}

int cmd_caption(const Options& o) {
  const auto cfg = load_config(o);
  const ModelCheckpoint ckpt = load_checkpoint(o.checkpoint);
  if (!ckpt.has_decoder()) throw Error(ErrorCode::CheckpointLacksDecoder, o.checkpoint);
  if (o.greedy && o.beam) throw Error(ErrorCode::ConfigError, "--greedy and --beam are exclusive");
  const int beam = o.greedy ? 0 : o.beam.value_or(cfg.beam);
  if (!o.greedy && beam < 1) throw Error(ErrorCode::ConfigError, "--beam must be at least 1");

  std::vector<std::pair<std::string, std::string>> rows;
  if (!o.images.empty()) {
    auto provider = features::make_provider(cfg.backbone_spec());
    for (const auto& path : o.images)
      rows.emplace_back(fs::path(path).stem().string(),
                        pipeline::caption_grid(ckpt, provider->extract(path), beam, cfg.decode_max_len));
  } else {
    const auto records = corpus::load_caption_manifest(manifest_path(o, cfg));
    const fs::path cache = pipeline::resolve_cache_dir(cfg);
    const std::string backbone = features::backbone_name(cfg.backbone);
    corpus::Split split{};
    const bool all = o.split == "all";
    if (!all && !corpus::parse_split(o.split, split)) throw Error(ErrorCode::ConfigError, "bad --split " + o.split);
    for (const auto& r : records) {
      if (!all && r.split != split) continue;
      rows.emplace_back(r.image_id, pipeline::caption_grid(ckpt, features::cache_read(r.image_id, backbone, cache),
                                                           beam, cfg.decode_max_len));
    }
  }
  const std::string text = metrics::format_hypotheses(rows);
  if (o.out.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    write_file_atomic(o.out, text);
    std::printf("captions\t%zu\t%s\n", rows.size(), o.out.c_str());
  }
  return 0;
}

int cmd_evaluate(const Options& o) {
  const auto cfg = load_config(o);
  const auto records = corpus::load_caption_manifest(manifest_path(o, cfg));
  const auto hyps = metrics::load_hypotheses(o.hyps);
  if (hyps.empty()) throw Error(ErrorCode::EmptyInput, "hypotheses file is empty: " + o.hyps);
  corpus::Split split{};
  if (!corpus::parse_split(o.split, split)) throw Error(ErrorCode::ConfigError, "bad --split " + o.split);
  const auto report = metrics::evaluate_corpus(records, hyps, split);
  std::fputs(metrics::format_report_table(report, o.label).c_str(), stdout);
  if (!o.out.empty()) {
    const fs::path out = o.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file_atomic(out, metrics::format_report_tsv(report));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task Arabic image captioning: data prep, training, decoding and scoring"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "INI run configuration");
    sub->add_flag("--toy", o.toy, "start from the toy-scale defaults");
    sub->add_option("--seed", o.seed, "override run.seed");
  };

  auto* prepare = app.add_subcommand("prepare", "build the caption manifest from token and split files");
  add_common(prepare);
  prepare->add_option("-o,--out", o.out, "manifest path (default: data.manifest)");

  auto* extract = app.add_subcommand("extract", "fill the feature cache");
  add_common(extract);
  extract->add_option("-m,--manifest", o.manifest, "caption manifest");
  extract->add_option("--phases", o.phases, "phases whose images to extract (default: train.phases)");
  extract->add_flag("--force", o.force, "recompute cached entries");

  auto* train = app.add_subcommand("train", "run the configured training phases");
  add_common(train);
  train->add_option("-m,--manifest", o.manifest, "caption manifest");
  train->add_option("--phases", o.phases, "comma-separated phases, e.g. action,object,caption");
  train->add_option("--epochs", o.epochs, "epochs for every phase");
  train->add_option("-o,--out", o.out, "output directory (default: run.out_dir)");

  auto* caption = app.add_subcommand("caption", "caption images with a trained checkpoint");
  add_common(caption);
  caption->add_option("-k,--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  caption->add_option("-m,--manifest", o.manifest, "caption manifest");
  caption->add_option("--split", o.split, "train, val, test or all")->capture_default_str();
  caption->add_option("--images", o.images, "image files to caption instead of a manifest split");
  caption->add_option("--beam", o.beam, "beam width");
  caption->add_flag("--greedy", o.greedy, "greedy decoding");
  caption->add_option("-o,--out", o.out, "hypotheses file (default: stdout)");

  auto* evaluate = app.add_subcommand("evaluate", "score hypotheses with BLEU-2/3/4 and METEOR");
  add_common(evaluate);
  evaluate->add_option("--hyps", o.hyps, "image_id<TAB>caption file")->required();
  evaluate->add_option("-m,--manifest", o.manifest, "caption manifest");
  evaluate->add_option("--split", o.split, "split to score")->capture_default_str();
  evaluate->add_option("--label", o.label, "row label in the printed table");
  evaluate->add_option("-o,--out", o.out, "write the report as TSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*prepare) return cmd_prepare(o);
    if (*extract) return cmd_extract(o);
    if (*train) return cmd_train(o);
    if (*caption) return cmd_caption(o);
    if (*evaluate) return cmd_evaluate(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "mtlcap: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mtlcap: %s\n", e.what());
    return 3;
  }
  return 1;
}
