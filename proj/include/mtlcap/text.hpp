// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlcap/corpus.hpp"
#include "mtlcap/nn.hpp"

namespace mtlcap::text {

/// Strips tashkeel and tatweel, unifies alef/yeh/teh-marbuta variants,
/// collapses whitespace.
std::string normalize_arabic(std::string_view text);

/// normalize_arabic, then whitespace split with . , ! ? ؟ ، as own tokens.
std::vector<std::string> tokenize(std::string_view text);

using TokenSequence = std::vector<int>;

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;
  static const std::vector<std::string>& special_tokens();

  Vocabulary();
  /// Specials are prepended; `words` must not repeat or name a special.
  static Vocabulary from_words(const std::vector<std::string>& words);
  /// Full token list, specials included, as stored in a vocabulary file.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id_of(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

Vocabulary build_vocabulary(const std::vector<corpus::CaptionRecord>& records, int min_count);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

TokenSequence encode_caption(std::string_view caption, const Vocabulary& vocab, int max_len);

/// Drops specials and returns the remaining tokens.
std::vector<std::string> decode_tokens(const TokenSequence& ids, const Vocabulary& vocab);
std::string decode_caption(const TokenSequence& ids, const Vocabulary& vocab);

struct EmbeddingMatrix {
  Mat vectors;  // |V| x dim
  bool trainable = true;

  int dim() const { return static_cast<int>(vectors.cols()); }
};

/// Every row seeded uniform(-0.1, 0.1) except PAD, which is zero.
EmbeddingMatrix init_embedding(int vocab_size, int dim, std::uint64_t seed);

/// Reads a textual word-vector file ("count dim" header, then "word v1 .. vdim").
/// Rows of tokens found in the file are copied; the rest keep their seeded
/// init from init_embedding.
EmbeddingMatrix load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                                  int dim_expected, std::uint64_t seed);

/// Contextual providers (BERT/ELMo style) plug in here: tokens in, one
/// fixed-width vector per token out. None ship with this library.
class ContextualEmbeddingProvider {
 public:
  virtual ~ContextualEmbeddingProvider() = default;
  virtual int dim() const = 0;
  virtual Mat embed(const std::vector<std::string>& tokens) const = 0;
};

}  // namespace mtlcap::text
