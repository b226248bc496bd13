// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mtlcap/features.hpp"
#include "mtlcap/training.hpp"

namespace mtlcap::config {

/// Everything a run needs, as read from an INI file. Relative paths are
/// resolved against the directory holding the file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";

  // [data]
  std::filesystem::path token_file;  // Flickr-style `<image>#<n>\t<caption>`
  std::filesystem::path train_list, val_list, test_list;
  std::filesystem::path image_dir;
  std::filesystem::path manifest;
  double train_fraction = 1.0;
  std::filesystem::path action_train, action_val;  // class-per-directory trees
  std::filesystem::path object_train, object_val;  // CIFAR-format batches
  std::filesystem::path object_classes;            // one class name per line
  bool object_coarse = false;

  // [features]
  features::BackboneName backbone = features::BackboneName::Toy;
  std::string weights_ref;
  std::string command;
  std::filesystem::path cache_dir = "cache";

  // [text]
  std::filesystem::path embeddings;  // empty -> random init
  int min_count = 2;
  int max_caption_len = 30;

  // [decode]
  int beam = decoder::kDefaultBeam;
  int decode_max_len = decoder::kDefaultMaxLen;

  training::TrainConfig train;

  features::BackboneSpec backbone_spec() const;
};

/// Small widths and short schedules for the bundled toy data.
RunConfig toy_defaults();

/// Parses `path` over `base`. Unknown sections or keys, unparsable values and
/// invalid training settings all throw ConfigError naming the file.
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = RunConfig{});

/// Every field, defaults included, in the same INI layout the loader reads.
std::string format_run_config(const RunConfig& cfg);

}  // namespace mtlcap::config
