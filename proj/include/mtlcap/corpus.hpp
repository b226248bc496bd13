// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mtlcap::corpus {

enum class Split { Train, Val, Test };

std::string_view split_name(Split s);
/// Returns false for anything but train/val/test.
bool parse_split(std::string_view text, Split& out);

/// One image with all of its caption variants (translations are extra
/// captions on the same record).
struct CaptionRecord {
  std::string image_id;
  std::string image_path;
  std::vector<std::string> captions;
  Split split = Split::Train;

  bool operator==(const CaptionRecord&) const = default;
};

struct LabeledImage {
  std::string image_path;
  int label_id = 0;
  std::string label_name;
};

/// A CIFAR record with its pixels kept in the stored channel-major order
/// (1024 R, 1024 G, 1024 B; each plane row-major 32x32).
struct PixelImage {
  int label_id = 0;
  int coarse_label = 0;
  std::vector<std::uint8_t> pixels;  // 3072 bytes
};

enum class SplitSource { ProvidedFiles, SeededSubsample };

struct SplitSpec {
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
  SplitSource source = SplitSource::SeededSubsample;
};

inline constexpr char kUnitSeparator = '\x1f';
inline constexpr std::size_t kCifarRecordBytes = 3074;

std::vector<CaptionRecord> load_caption_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<CaptionRecord>& records, const std::filesystem::path& path);
std::string format_manifest(const std::vector<CaptionRecord>& records);

/// Groups a Flickr-style token file ("name.jpg#i<TAB>caption") into records,
/// taking the split from the per-split image lists.
std::vector<CaptionRecord> convert_flickr_token_file(
    const std::filesystem::path& token_path,
    const std::map<Split, std::filesystem::path>& split_files);

/// Keeps ceil(fraction * |train|) train records; val/test pass through.
std::vector<CaptionRecord> subsample_train(const std::vector<CaptionRecord>& records,
                                           const SplitSpec& spec);

struct LabeledFolder {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
};

LabeledFolder load_labeled_folder(const std::filesystem::path& root);

std::vector<PixelImage> load_cifar_batches(const std::vector<std::filesystem::path>& paths);

/// Reads one name per line, skipping blank lines.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace mtlcap::corpus
