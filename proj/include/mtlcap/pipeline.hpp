// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mtlcap/checkpoint.hpp"
#include "mtlcap/config.hpp"
#include "mtlcap/corpus.hpp"
#include "mtlcap/training.hpp"

namespace mtlcap::pipeline {

/// Builds the caption manifest from the configured token file and split
/// lists, then subsamples the train split.
std::vector<corpus::CaptionRecord> prepare_manifest(const config::RunConfig& cfg);

/// Cache directory after the MTLCAP_CACHE_DIR override.
std::filesystem::path resolve_cache_dir(const config::RunConfig& cfg);

/// One image to push through the backbone. CIFAR records carry pixels in
/// memory instead of a path.
struct ImageJob {
  std::string id;
  std::filesystem::path path;
  std::vector<std::uint8_t> cifar_pixels;
};

/// Caption images from the manifest, plus the action/object sources the
/// config names when their phase is configured.
std::vector<ImageJob> list_images(const config::RunConfig& cfg, const std::vector<corpus::CaptionRecord>& records);

struct ExtractSummary {
  int extracted = 0;
  int skipped = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // id, message
};

ExtractSummary extract_images(const std::vector<ImageJob>& jobs, const features::BackboneSpec& spec,
                              const std::filesystem::path& cache_dir, bool force);

/// Reads cached grids for every dataset the configured phases need.
training::PipelineData load_pipeline_data(const config::RunConfig& cfg,
                                          const std::vector<corpus::CaptionRecord>& records,
                                          const std::filesystem::path& cache_dir);

/// `beam == 0` selects greedy decoding.
std::string caption_grid(const ModelCheckpoint& ckpt, const features::FeatureGrid& grid, int beam, int max_len);

}  // namespace mtlcap::pipeline
