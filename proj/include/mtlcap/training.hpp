// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtlcap/checkpoint.hpp"
#include "mtlcap/features.hpp"
#include "mtlcap/optim.hpp"
#include "mtlcap/text.hpp"

namespace mtlcap::training {

enum class Task { Action, Object, Caption };

std::string task_name(Task task);
Task parse_task(const std::string& name);
/// Comma-separated list, e.g. "action,object,caption".
std::vector<Task> parse_phases(const std::string& text);

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 32;
  int epochs = 80;
  /// Per-phase overrides of `epochs`.
  std::map<Task, int> phase_epochs;
  std::uint64_t seed = 0;
  optim::AdamConfig adam;  // learning_rate above wins
  std::vector<Task> phases{Task::Action, Task::Object, Task::Caption};
  /// Global-norm clip for the caption phase; 0 disables.
  double clip_norm = 5.0;
  ModelDims dims;
  /// Copied into ModelCheckpoint::info by every phase (config echo, backbone).
  std::map<std::string, std::string> checkpoint_info;

  int epochs_for(Task task) const;
  /// Throws ConfigError or PhaseOrderViolation.
  void validate() const;
};

struct LabeledGrid {
  features::FeatureGrid grid;
  int label = 0;
};

struct ClassificationData {
  std::vector<LabeledGrid> train;
  std::vector<LabeledGrid> val;
  std::vector<std::string> class_names;
};

struct CaptionExample {
  std::string image_id;
  features::FeatureGrid grid;
  text::TokenSequence target;
};

struct CaptionData {
  std::vector<CaptionExample> train;
  std::vector<CaptionExample> val;
  text::Vocabulary vocab;
  text::EmbeddingMatrix embedding;
};

struct PipelineData {
  std::optional<ClassificationData> action;
  std::optional<ClassificationData> object;
  std::optional<CaptionData> caption;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without validation data
  double metric = 0.0;    // top-1 accuracy, or token accuracy for captions
  double seconds = 0.0;
};

struct PhaseReport {
  Task task = Task::Caption;
  std::vector<EpochStats> epochs;
  std::vector<double> step_losses;
};

/// `epoch<TAB>train_loss<TAB>val_loss<TAB>metric<TAB>seconds` per line.
std::string format_phase_report(const PhaseReport& report);

struct PhaseResult {
  ModelCheckpoint checkpoint;
  ModelCheckpoint best;  // lowest validation loss (== checkpoint without val data)
  PhaseReport report;
  std::string initial_encoder;  // parameter_bytes(.., "encoder.") before the first step
};

/// Trains the shared encoder plus the task's own head or decoder. Every other
/// parameter is carried through untouched. A null `checkpoint_in` starts fresh.
PhaseResult train_phase(Task task, const PipelineData& data, const ModelCheckpoint* checkpoint_in,
                        const TrainConfig& config);

struct PipelineResult {
  ModelCheckpoint checkpoint;
  std::vector<PhaseReport> reports;
  std::vector<std::filesystem::path> checkpoint_files;
};

/// Runs config.phases in order, threading the checkpoint and writing
/// `<NN>_<task>.amtc`, `.best.amtc`, `.report.tsv` and `.steps.tsv` (one
/// loss per optimizer step) into out_dir after
/// each phase.
PipelineResult run_pipeline(const TrainConfig& config, const PipelineData& data,
                            const std::filesystem::path& out_dir);

/// Mean loss and metric of a finished model on one split, inference mode.
std::pair<double, double> evaluate_classifier(const ModelCheckpoint& ckpt, Task task,
                                              const std::vector<LabeledGrid>& data);
std::pair<double, double> evaluate_captioner(const ModelCheckpoint& ckpt, const std::vector<CaptionExample>& data);

}  // namespace mtlcap::training
