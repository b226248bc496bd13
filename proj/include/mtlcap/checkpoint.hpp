// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtlcap/decoder.hpp"
#include "mtlcap/encoder.hpp"
#include "mtlcap/heads.hpp"
#include "mtlcap/optim.hpp"
#include "mtlcap/text.hpp"

namespace mtlcap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layer widths. Defaults are the full-scale architecture; toy runs shrink
/// the widths only.
struct ModelDims {
  int feature_dim = 0;
  int encoder_width = encoder::kWidth;
  int encoder_layers = encoder::kLayers;
  int head_width = heads::kHiddenWidth;
  int head_layers = heads::kHiddenLayers;
  int embed_dim = 300;
  int lstm_hidden = decoder::kHidden;
  int lstm_layers = decoder::kLayers;
  int attention_width = decoder::kAttentionWidth;
  double dropout = kDropoutRate;

  bool operator==(const ModelDims&) const = default;
};

struct CaptionModel {
  decoder::DecoderParams decoder;
  decoder::AttentionParams attention;
  text::Vocabulary vocab;
};

struct ModelCheckpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::uint64_t seed = 0;
  ModelDims dims;
  encoder::SharedEncoderParams encoder;
  std::map<std::string, heads::ClassifierHeadParams> heads;
  std::map<std::string, std::vector<std::string>> class_names;
  std::optional<CaptionModel> caption;
  optim::AdamState optimizer;
  std::vector<std::string> provenance;
  /// Free-form provenance (backbone, config echo). Serialized verbatim.
  std::map<std::string, std::string> info;

  /// Every trainable tensor, named as in the checkpoint file.
  void visit(const ParamVisitor& f);
  void visit(const ConstParamVisitor& f) const;
  bool has_decoder() const { return caption.has_value(); }
};

std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Serialized bytes of one parameter group ("encoder.", "head.action.", ...),
/// used to verify phase isolation.
std::string parameter_bytes(const ModelCheckpoint& ckpt, const std::string& prefix);

}  // namespace mtlcap
