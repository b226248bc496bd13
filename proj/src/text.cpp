// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/text.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mtlcap/error.hpp"
#include "mtlcap/rng.hpp"

namespace mtlcap::text {

namespace {

// Decodes one code point starting at text[i]; malformed bytes come back as
// themselves with length 1 so they pass through untouched.
char32_t next_code_point(std::string_view text, std::size_t& i, bool& valid) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  valid = true;
  int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
  if (len == 0 || i + static_cast<std::size_t>(len) > text.size()) {
    valid = false;
    ++i;
    return b0;
  }
  char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(text[i + static_cast<std::size_t>(k)]);
    if ((b & 0xC0) != 0x80) {
      valid = false;
      ++i;
      return b0;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
         cp == 0x205F || cp == 0x3000;
}

bool is_split_punct(char32_t cp) {
  return cp == U'.' || cp == U',' || cp == U'!' || cp == U'?' || cp == 0x061F || cp == 0x060C;
}

}  // namespace

std::string normalize_arabic(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    bool valid = true;
    char32_t cp = next_code_point(text, i, valid);
    if (!valid) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out.append(text.substr(start, 1));
      continue;
    }
    if (is_space(cp)) {
      pending_space = true;
      continue;
    }
    if ((cp >= 0x064B && cp <= 0x0652) || cp == 0x0640) continue;
    if (cp == 0x0623 || cp == 0x0625 || cp == 0x0622) cp = 0x0627;
    else if (cp == 0x0649) cp = 0x064A;
    else if (cp == 0x0629) cp = 0x0647;
    if (pending_space && !out.empty()) out += ' ';
    pending_space = false;
    append_utf8(out, cp);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::string norm = normalize_arabic(text);
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < norm.size()) {
    const std::size_t start = i;
    bool valid = true;
    char32_t cp = next_code_point(norm, i, valid);
    if (valid && cp == U' ') {
      flush();
    } else if (valid && is_split_punct(cp)) {
      flush();
      tokens.emplace_back(norm.substr(start, i - start));
    } else {
      current.append(norm, start, i - start);
    }
  }
  flush();
  return tokens;
}

const std::vector<std::string>& Vocabulary::special_tokens() {
  static const std::vector<std::string> specials{"<pad>", "<start>", "<end>", "<unk>"};
  return specials;
}

Vocabulary::Vocabulary() {
  for (const auto& tok : special_tokens()) {
    ids_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
  }
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  std::vector<std::string> tokens = special_tokens();
  tokens.insert(tokens.end(), words.begin(), words.end());
  return from_tokens(tokens);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin()))
    throw Error(ErrorCode::MalformedLine, "vocabulary must start with <pad> <start> <end> <unk>");
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  for (const auto& tok : tokens) {
    if (tok.empty()) throw Error(ErrorCode::MalformedLine, "empty vocabulary token");
    auto [it, inserted] = v.ids_.emplace(tok, static_cast<int>(v.tokens_.size()));
    if (!inserted) throw Error(ErrorCode::MalformedLine, "duplicate vocabulary token '" + tok + "'");
    v.tokens_.push_back(tok);
  }
  return v;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

Vocabulary build_vocabulary(const std::vector<corpus::CaptionRecord>& records, int min_count) {
  if (records.empty()) throw Error(ErrorCode::EmptyCorpus, "no caption records");
  if (min_count < 1) throw Error(ErrorCode::ConfigError, "min_count must be positive");
  std::map<std::string, long> freq;
  for (const auto& rec : records)
    for (const auto& cap : rec.captions)
      for (auto& tok : tokenize(cap)) ++freq[tok];

  const auto& specials = Vocabulary::special_tokens();
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, n] : freq)
    if (n >= min_count && std::find(specials.begin(), specials.end(), tok) == specials.end())
      kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [tok, n] : kept) words.push_back(tok);
  return Vocabulary::from_words(words);
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& tok : vocab.tokens()) out << tok << '\n';
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary::from_tokens(tokens);
}

TokenSequence encode_caption(std::string_view caption, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw Error(ErrorCode::ConfigError, "max_len must be at least 2");
  TokenSequence ids{Vocabulary::kStart};
  for (const auto& tok : tokenize(caption)) {
    if (static_cast<int>(ids.size()) == max_len - 1) break;
    ids.push_back(vocab.id_of(tok));
  }
  ids.push_back(Vocabulary::kEnd);
  return ids;
}

std::vector<std::string> decode_tokens(const TokenSequence& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : ids)
    if (id >= Vocabulary::kNumSpecials) out.push_back(vocab.token(id));
  return out;
}

std::string decode_caption(const TokenSequence& ids, const Vocabulary& vocab) {
  std::string out;
  for (const auto& tok : decode_tokens(ids, vocab)) {
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

EmbeddingMatrix init_embedding(int vocab_size, int dim, std::uint64_t seed) {
  if (dim < 1) throw Error(ErrorCode::ConfigError, "embedding dim must be positive");
  Rng rng(derive_seed(seed, "text.embedding"));
  EmbeddingMatrix emb;
  emb.vectors.resize(vocab_size, dim);
  for (int r = 0; r < vocab_size; ++r)
    for (int c = 0; c < dim; ++c) emb.vectors(r, c) = rng.uniform(-0.1, 0.1);
  emb.vectors.row(Vocabulary::kPad).setZero();
  round_to_float(emb.vectors);
  return emb;
}

EmbeddingMatrix load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                                  int dim_expected, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::string line;
  long count = 0;
  int dim = 0;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedVectorLine, "line 1: missing header");
  {
    std::istringstream hdr(line);
    if (!(hdr >> count >> dim) || dim < 1)
      throw Error(ErrorCode::MalformedVectorLine, "line 1: bad header");
  }
  if (dim != dim_expected)
    throw Error(ErrorCode::DimMismatch,
                "found " + std::to_string(dim) + ", expected " + std::to_string(dim_expected));

  EmbeddingMatrix emb = init_embedding(vocab.size(), dim, seed);
  std::vector<bool> filled(static_cast<std::size_t>(vocab.size()), false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    auto malformed = [&] { return Error(ErrorCode::MalformedVectorLine, "line " + std::to_string(line_no)); };
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (!rest.empty()) {
      std::size_t b = rest.find_first_not_of(' ');
      if (b == std::string_view::npos) break;
      rest.remove_prefix(b);
      std::size_t e = rest.find(' ');
      fields.push_back(rest.substr(0, e));
      rest.remove_prefix(e == std::string_view::npos ? rest.size() : e);
    }
    if (static_cast<int>(fields.size()) != dim + 1) throw malformed();
    Row vec(dim);
    for (int k = 0; k < dim; ++k) {
      auto f = fields[static_cast<std::size_t>(k) + 1];
      double v = 0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) throw malformed();
      vec(k) = v;
    }
    // vocabulary tokens are normalized, so file words are looked up the same way
    const std::string word = normalize_arabic(fields[0]);
    if (!vocab.contains(word)) continue;
    const int id = vocab.id_of(word);
    if (id == Vocabulary::kPad || filled[static_cast<std::size_t>(id)]) continue;
    filled[static_cast<std::size_t>(id)] = true;
    emb.vectors.row(id) = vec;
  }
  round_to_float(emb.vectors);
  return emb;
}

}  // namespace mtlcap::text
