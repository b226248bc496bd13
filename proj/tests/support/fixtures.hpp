// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "mtlcap/decoder.hpp"
#include "mtlcap/encoder.hpp"
#include "mtlcap/heads.hpp"

namespace fixture {

struct ToyDecoder {
  mtlcap::decoder::DecoderParams params;
  mtlcap::decoder::AttentionParams attn;
  mtlcap::Mat annotations;
};

/// Small decoder with non-zero biases and random annotations (L x C).
ToyDecoder toy_decoder(std::uint64_t seed, int vocab = 7, int embed = 6, int context = 8, int hidden = 8,
                       int attention = 5, int layers = 2, int positions = 4);

/// Random target of `steps` predictions: START, interior words, END.
mtlcap::text::TokenSequence toy_target(std::uint64_t seed, int vocab, int steps);

/// Worst relative error of analytic vs. central-difference gradients, per
/// parameter group. `what` names the group with the worst error.
struct GradReport {
  double worst = 0.0;
  std::string what;
  void add(const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      what = name;
    }
  }
};

/// Loss ||encode(x)||^2 on a 2x2 grid, training mode with dropout.
GradReport encoder_gradients(std::uint64_t seed);
/// Cross-entropy through a classifier head on a random annotation grid.
GradReport head_gradients(std::uint64_t seed);
/// Mean teacher-forced loss: attention, LSTM, init maps, embedding, output
/// and the annotation input.
GradReport decoder_gradients(std::uint64_t seed);

}  // namespace fixture

#include <filesystem>
#include <fstream>
#include <random>

namespace fixture {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mtlcap-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

  std::filesystem::path write(const std::string& rel, const std::string& bytes) const {
    const auto p = path_ / rel;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << bytes;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixture
