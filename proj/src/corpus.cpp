// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mtlcap/error.hpp"
#include "mtlcap/rng.hpp"

namespace fs = std::filesystem;

namespace mtlcap::corpus {

namespace {

std::vector<std::string> split_on(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.emplace_back(text.substr(start));
      return parts;
    }
    parts.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  std::size_t b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::ifstream open_or_throw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  return in;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

bool parse_split(std::string_view text, Split& out) {
  if (text == "train") out = Split::Train;
  else if (text == "val") out = Split::Val;
  else if (text == "test") out = Split::Test;
  else return false;
  return true;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (!t.empty()) lines.push_back(std::move(t));
  }
  return lines;
}

std::vector<CaptionRecord> load_caption_manifest(const fs::path& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<CaptionRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    auto malformed = [&](const std::string& why) {
      return Error(ErrorCode::MalformedLine,
                   path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    std::vector<std::string> fields = split_on(line, '\t');
    if (fields.size() != 4) throw malformed("expected 4 tab-separated fields");
    CaptionRecord rec;
    rec.image_id = fields[0];
    rec.image_path = fields[1];
    if (rec.image_id.empty()) throw malformed("empty image_id");
    if (rec.image_path.empty()) throw malformed("empty image_path");
    if (!parse_split(fields[2], rec.split)) throw malformed("unknown split '" + fields[2] + "'");
    for (auto& cap : split_on(fields[3], kUnitSeparator))
      if (!cap.empty()) rec.captions.push_back(std::move(cap));
    if (rec.captions.empty()) throw malformed("no captions");
    if (!seen.insert(rec.image_id).second)
      throw Error(ErrorCode::DuplicateImageId,
                  rec.image_id + " (line " + std::to_string(line_no) + ")");
    records.push_back(std::move(rec));
  }
  return records;
}

std::string format_manifest(const std::vector<CaptionRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += rec.image_id;
    out += '\t';
    out += rec.image_path;
    out += '\t';
    out += split_name(rec.split);
    out += '\t';
    for (std::size_t i = 0; i < rec.captions.size(); ++i) {
      if (i) out += kUnitSeparator;
      out += rec.captions[i];
    }
    out += '\n';
  }
  return out;
}

void write_manifest(const std::vector<CaptionRecord>& records, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << format_manifest(records);
}

std::vector<CaptionRecord> convert_flickr_token_file(const fs::path& token_path,
                                                     const std::map<Split, fs::path>& split_files) {
  std::unordered_map<std::string, Split> split_of;
  for (const auto& [split, file] : split_files) {
    for (const auto& name : read_lines(file)) {
      auto [it, inserted] = split_of.emplace(name, split);
      if (!inserted && it->second != split)
        throw Error(ErrorCode::DuplicateImageId, name + " listed in more than one split file");
    }
  }

  std::ifstream in = open_or_throw(token_path);
  // image name -> (index, caption); first-appearance order kept separately
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::pair<int, std::string>>> grouped;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto bad = [&] {
      return Error(ErrorCode::BadIndex, token_path.string() + ":" + std::to_string(line_no));
    };
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw bad();
    std::string_view key(line.data(), tab);
    std::size_t hash = key.rfind('#');
    if (hash == std::string_view::npos || hash + 1 == key.size()) throw bad();
    int index = 0;
    auto idx_text = key.substr(hash + 1);
    auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), index);
    if (ec != std::errc() || ptr != idx_text.data() + idx_text.size() || index < 0) throw bad();
    std::string name(key.substr(0, hash));
    auto [it, inserted] = grouped.try_emplace(name);
    if (inserted) order.push_back(name);
    it->second.emplace_back(index, trim(std::string_view(line).substr(tab + 1)));
  }

  std::vector<CaptionRecord> records;
  records.reserve(order.size());
  for (const auto& name : order) {
    auto split_it = split_of.find(name);
    if (split_it == split_of.end()) throw Error(ErrorCode::UnsplitImage, name);
    auto& caps = grouped[name];
    std::stable_sort(caps.begin(), caps.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    CaptionRecord rec;
    rec.image_id = fs::path(name).stem().string();
    rec.image_path = name;
    rec.split = split_it->second;
    for (auto& [idx, cap] : caps) rec.captions.push_back(std::move(cap));
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CaptionRecord> subsample_train(const std::vector<CaptionRecord>& records,
                                           const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
    throw Error(ErrorCode::ConfigError, "train_fraction must lie in (0, 1]");
  if (spec.train_fraction == 1.0) return records;

  std::vector<std::string> train_ids;
  for (const auto& r : records)
    if (r.split == Split::Train) train_ids.push_back(r.image_id);
  std::sort(train_ids.begin(), train_ids.end());

  const auto keep_count = static_cast<std::size_t>(
      std::ceil(spec.train_fraction * static_cast<double>(train_ids.size()) - 1e-9));
  Rng rng(derive_seed(spec.seed, "corpus.subsample"));
  std::vector<std::size_t> perm = rng.permutation(train_ids.size());
  std::unordered_set<std::string> kept;
  for (std::size_t i = 0; i < keep_count; ++i) kept.insert(train_ids[perm[i]]);

  std::vector<CaptionRecord> out;
  for (const auto& r : records)
    if (r.split != Split::Train || kept.count(r.image_id)) out.push_back(r);
  return out;
}

LabeledFolder load_labeled_folder(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, root.string());
  LabeledFolder out;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && !name.starts_with(".")) out.class_names.push_back(name);
  }
  if (out.class_names.empty()) throw Error(ErrorCode::NoClasses, root.string());
  std::sort(out.class_names.begin(), out.class_names.end());

  for (std::size_t label = 0; label < out.class_names.size(); ++label) {
    const auto& cls = out.class_names[label];
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / cls)) {
      const auto name = entry.path().filename().string();
      if (entry.is_regular_file() && !name.starts_with(".")) files.push_back(name);
    }
    if (files.empty()) throw Error(ErrorCode::EmptyClassDir, cls);
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      out.images.push_back({(fs::path(cls) / f).generic_string(), static_cast<int>(label), cls});
  }
  return out;
}

std::vector<PixelImage> load_cifar_batches(const std::vector<fs::path>& paths) {
  std::vector<PixelImage> out;
  for (const auto& path : paths) {
    std::ifstream in = open_or_throw(path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecordBytes != 0) throw Error(ErrorCode::TruncatedFile, path.string());
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
      // CIFAR-100 binary layout: coarse label, fine label, 3072 pixels.
      PixelImage img;
      img.coarse_label = static_cast<std::uint8_t>(bytes[off]);
      img.label_id = static_cast<std::uint8_t>(bytes[off + 1]);
      img.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data() + off + 2),
                        reinterpret_cast<const std::uint8_t*>(bytes.data() + off + kCifarRecordBytes));
      out.push_back(std::move(img));
    }
  }
  return out;
}

}  // namespace mtlcap::corpus
