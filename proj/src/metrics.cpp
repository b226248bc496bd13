// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string_view>
#include <unordered_map>

#include "mtlcap/error.hpp"
#include "mtlcap/text.hpp"

namespace mtlcap::metrics {

namespace {

/// Sentence tokens as dense ids shared by the hypothesis and its references,
/// so an n-gram (n <= 4) packs exactly into 16 bits per token.
class Interner {
 public:
  std::vector<std::uint32_t> ids(const Tokens& toks) {
    std::vector<std::uint32_t> out;
    out.reserve(toks.size());
    for (const auto& t : toks) {
      auto [it, fresh] = ids_.emplace(t, static_cast<std::uint32_t>(ids_.size()));
      out.push_back(it->second);
    }
    return out;
  }
  bool packable() const { return ids_.size() < (1u << 16); }

 private:
  std::unordered_map<std::string_view, std::uint32_t> ids_;
};

/// Sorted packed n-gram keys.
std::vector<std::uint64_t> ngram_keys(const std::vector<std::uint32_t>& ids, std::size_t n) {
  std::vector<std::uint64_t> keys;
  if (ids.size() < n) return keys;
  keys.reserve(ids.size() - n + 1);
  for (std::size_t i = 0; i + n <= ids.size(); ++i) {
    std::uint64_t k = 0;
    for (std::size_t j = 0; j < n; ++j) k = (k << 16) | ids[i + j];
    keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

using Counts = std::unordered_map<std::string, long>;

/// String-keyed fallback for sentences with more than 65535 distinct tokens.
Counts ngram_counts(const Tokens& toks, int n) {
  Counts counts;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= toks.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < un; ++k) {
      if (k) key += '\x1f';
      key += toks[i + k];
    }
    ++counts[key];
  }
  return counts;
}

long clipped_by_strings(const Tokens& hyp, const std::vector<Tokens>& refs, int n) {
  Counts max_ref;
  for (const auto& r : refs)
    for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
  long clipped = 0;
  for (const auto& [g, c] : ngram_counts(hyp, n)) {
    auto it = max_ref.find(g);
    if (it != max_ref.end()) clipped += std::min(c, it->second);
  }
  return clipped;
}

void check_order(int max_order) {
  if (max_order < 1 || max_order > 4) throw Error(ErrorCode::ConfigError, "BLEU order must be in [1, 4]");
}

}  // namespace

NGramStats& NGramStats::operator+=(const NGramStats& o) {
  if (matches.size() < o.matches.size()) {
    matches.resize(o.matches.size(), 0);
    totals.resize(o.totals.size(), 0);
  }
  for (std::size_t n = 0; n < o.matches.size(); ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

NGramStats sentence_ngram_stats(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order) {
  check_order(max_order);
  if (refs.empty()) throw Error(ErrorCode::EmptyReferenceSet, "hypothesis has no references");
  NGramStats s;
  s.hyp_len = static_cast<long>(hyp.size());
  long best = -1;
  for (const auto& r : refs) {
    const long len = static_cast<long>(r.size());
    const long d = std::labs(len - s.hyp_len);
    if (best < 0 || d < std::labs(best - s.hyp_len) || (d == std::labs(best - s.hyp_len) && len < best)) best = len;
  }
  s.ref_len = best;
  Interner interner;
  const auto hyp_ids = interner.ids(hyp);
  std::vector<std::vector<std::uint32_t>> ref_ids;
  for (const auto& r : refs) ref_ids.push_back(interner.ids(r));

  std::vector<std::uint64_t> distinct;
  std::vector<long> hyp_count, ref_max;
  for (int n = 1; n <= max_order; ++n) {
    const auto un = static_cast<std::size_t>(n);
    long clipped = 0;
    if (!interner.packable()) {
      clipped = clipped_by_strings(hyp, refs, n);
    } else {
      const auto keys = ngram_keys(hyp_ids, un);
      distinct.clear();
      hyp_count.clear();
      for (std::uint64_t k : keys) {
        if (distinct.empty() || distinct.back() != k) {
          distinct.push_back(k);
          hyp_count.push_back(0);
        }
        ++hyp_count.back();
      }
      ref_max.assign(distinct.size(), 0);
      for (const auto& r : ref_ids) {
        const auto rkeys = ngram_keys(r, un);
        std::size_t j = 0;
        for (std::size_t i = 0; i < distinct.size(); ++i) {
          while (j < rkeys.size() && rkeys[j] < distinct[i]) ++j;
          long c = 0;
          for (; j < rkeys.size() && rkeys[j] == distinct[i]; ++j) ++c;
          ref_max[i] = std::max(ref_max[i], c);
        }
      }
      for (std::size_t i = 0; i < distinct.size(); ++i) clipped += std::min(hyp_count[i], ref_max[i]);
    }
    s.matches.push_back(clipped);
    s.totals.push_back(std::max<long>(0, s.hyp_len - n + 1));
  }
  return s;
}

double bleu_from_stats(const NGramStats& stats, int max_order) {
  check_order(max_order);
  if (stats.hyp_len == 0 || static_cast<int>(stats.matches.size()) < max_order) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_order; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (stats.matches[un] == 0 || stats.totals[un] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(stats.matches[un]) / static_cast<double>(stats.totals[un]));
  }
  const double c = static_cast<double>(stats.hyp_len), r = static_cast<double>(stats.ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_order);
}

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<std::vector<Tokens>>& references,
                   int max_order) {
  if (hypotheses.size() != references.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(hypotheses.size()) + " hypotheses, " +
                                               std::to_string(references.size()) + " reference sets");
  if (hypotheses.empty()) throw Error(ErrorCode::EmptyInput, "no hypotheses");
  NGramStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    total += sentence_ngram_stats(hypotheses[i], references[i], max_order);
  return bleu_from_stats(total, max_order);
}

double sentence_bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order) {
  NGramStats s = sentence_ngram_stats(hyp, refs, max_order);
  if (s.hyp_len == 0 || s.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
  for (int n = 1; n < max_order; ++n) {
    const auto un = static_cast<std::size_t>(n);
    log_sum += std::log((s.matches[un] + 1.0) / (s.totals[un] + 1.0));
  }
  const double c = static_cast<double>(s.hyp_len), r = static_cast<double>(s.ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_order);
}

// ------------------------------------------------------------------ METEOR

namespace {

// Depth-first search over hypothesis positions, maximising the number of
// adjacent aligned pairs (which minimises chunks) subject to aligning the
// maximum possible number of unigrams.
class AlignmentSearch {
 public:
  AlignmentSearch(const Tokens& hyp, const Tokens& ref) : hyp_(hyp), ref_(ref) {
    std::unordered_map<std::string, int> hyp_count, ref_count;
    for (const auto& w : hyp) ++hyp_count[w];
    for (const auto& w : ref) ++ref_count[w];
    for (const auto& w : hyp) {
      if (!word_id_.count(w)) {
        const int id = static_cast<int>(word_id_.size());
        word_id_[w] = id;
        auto rc = ref_count.find(w);
        need_.push_back(rc == ref_count.end() ? 0 : std::min(hyp_count[w], rc->second));
      }
    }
    hyp_word_.resize(hyp.size());
    for (std::size_t i = 0; i < hyp.size(); ++i) hyp_word_[i] = word_id_[hyp[i]];
    // remaining_[i][w]: occurrences of word w in hyp[i..]
    remaining_.assign(hyp.size() + 1, std::vector<int>(need_.size(), 0));
    for (std::size_t i = hyp.size(); i-- > 0;) {
      remaining_[i] = remaining_[i + 1];
      ++remaining_[i][static_cast<std::size_t>(hyp_word_[i])];
    }
    ref_positions_.resize(need_.size());
    for (std::size_t j = 0; j < ref.size(); ++j) {
      auto it = word_id_.find(ref[j]);
      if (it != word_id_.end()) ref_positions_[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(j));
    }
    used_.assign(ref.size(), false);
    used_count_.assign(need_.size(), 0);
    for (int n : need_) matches_ += n;
  }

  int matches() const { return matches_; }

  std::vector<std::pair<int, int>> run() {
    best(0, -1);
    // replay the memoised optimum
    std::fill(used_.begin(), used_.end(), false);
    std::fill(used_count_.begin(), used_count_.end(), 0);
    std::vector<std::pair<int, int>> pairs;
    int prev = -1;
    for (std::size_t i = 0; i < hyp_.size(); ++i) {
      const int target = best(i, prev);
      const auto w = static_cast<std::size_t>(hyp_word_[i]);
      int chosen = -1;
      if (used_count_[w] < need_[w]) {
        for (int j : ref_positions_[w]) {
          if (used_[static_cast<std::size_t>(j)]) continue;
          const int gain = (prev >= 0 && j == prev + 1) ? 1 : 0;
          used_[static_cast<std::size_t>(j)] = true;
          ++used_count_[w];
          const int rest = best(i + 1, j);
          if (rest != kInfeasible && rest + gain == target) {
            chosen = j;
            break;
          }
          used_[static_cast<std::size_t>(j)] = false;
          --used_count_[w];
        }
      }
      if (chosen >= 0) pairs.emplace_back(static_cast<int>(i), chosen);
      prev = chosen;
    }
    return pairs;
  }

 private:
  static constexpr int kInfeasible = std::numeric_limits<int>::min();

  bool can_skip(std::size_t i) const {
    const auto w = static_cast<std::size_t>(hyp_word_[i]);
    return remaining_[i + 1][w] >= need_[w] - used_count_[w];
  }

  std::string key(std::size_t i, int prev) const {
    std::string k = std::to_string(i) + ":" + std::to_string(prev) + ":";
    for (bool u : used_) k += u ? '1' : '0';
    return k;
  }

  int best(std::size_t i, int prev) {
    if (i == hyp_.size()) return 0;
    const std::string k = key(i, prev);
    auto it = memo_.find(k);
    if (it != memo_.end()) return it->second;
    const auto w = static_cast<std::size_t>(hyp_word_[i]);
    int result = kInfeasible;
    if (used_count_[w] < need_[w]) {
      for (int j : ref_positions_[w]) {
        const auto uj = static_cast<std::size_t>(j);
        if (used_[uj]) continue;
        used_[uj] = true;
        ++used_count_[w];
        const int rest = best(i + 1, j);
        used_[uj] = false;
        --used_count_[w];
        if (rest != kInfeasible) result = std::max(result, rest + ((prev >= 0 && j == prev + 1) ? 1 : 0));
      }
    }
    if (can_skip(i)) {
      const int rest = best(i + 1, -1);
      if (rest != kInfeasible) result = std::max(result, rest);
    }
    memo_.emplace(k, result);
    return result;
  }

  const Tokens& hyp_;
  const Tokens& ref_;
  std::unordered_map<std::string, int> word_id_;
  std::vector<int> need_;
  std::vector<int> hyp_word_;
  std::vector<std::vector<int>> remaining_;
  std::vector<std::vector<int>> ref_positions_;
  std::vector<bool> used_;
  std::vector<int> used_count_;
  std::unordered_map<std::string, int> memo_;
  int matches_ = 0;
};

}  // namespace

MeteorAlignment meteor_align(const Tokens& hyp, const Tokens& ref) {
  MeteorAlignment a;
  AlignmentSearch search(hyp, ref);
  if (search.matches() == 0) return a;
  a.pairs = search.run();
  a.matches = static_cast<int>(a.pairs.size());
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    const bool continues = k > 0 && a.pairs[k].first == a.pairs[k - 1].first + 1 &&
                           a.pairs[k].second == a.pairs[k - 1].second + 1;
    if (!continues) ++a.chunks;
  }
  a.precision = static_cast<double>(a.matches) / static_cast<double>(hyp.size());
  a.recall = static_cast<double>(a.matches) / static_cast<double>(ref.size());
  return a;
}

double meteor_from_alignment(const MeteorAlignment& a) {
  if (a.matches == 0) return 0.0;
  const double P = a.precision, R = a.recall;
  const double f_mean = 10.0 * P * R / (R + 9.0 * P);
  const double frag = static_cast<double>(a.chunks) / static_cast<double>(a.matches);
  return f_mean * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_score(const Tokens& hyp, const std::vector<Tokens>& refs) {
  if (refs.empty()) throw Error(ErrorCode::EmptyReferenceSet, "METEOR needs at least one reference");
  double best = 0.0;
  for (const auto& r : refs) best = std::max(best, meteor_from_alignment(meteor_align(hyp, r)));
  return best;
}

// ------------------------------------------------------------------ corpus

EvalReport evaluate_corpus(const std::vector<corpus::CaptionRecord>& records,
                           const std::map<std::string, std::string>& hypotheses, corpus::Split split) {
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> refs;
  std::vector<std::string> missing;
  EvalReport report;
  for (const auto& rec : records) {
    if (rec.split != split) continue;
    auto it = hypotheses.find(rec.image_id);
    if (it == hypotheses.end()) {
      missing.push_back(rec.image_id);
      continue;
    }
    hyps.push_back(text::tokenize(it->second));
    std::vector<Tokens> r;
    for (const auto& cap : rec.captions) r.push_back(text::tokenize(cap));
    refs.push_back(std::move(r));
    report.sentences.push_back({rec.image_id, 0.0, 0.0});
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::MissingHypothesis, ids);
  }
  if (hyps.empty()) throw Error(ErrorCode::EmptyInput, "no records in the evaluated split");

  report.bleu2 = 100.0 * corpus_bleu(hyps, refs, 2);
  report.bleu3 = 100.0 * corpus_bleu(hyps, refs, 3);
  report.bleu4 = 100.0 * corpus_bleu(hyps, refs, 4);
  double meteor_sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto& s = report.sentences[i];
    s.bleu4 = 100.0 * sentence_bleu(hyps[i], refs[i], 4);
    s.meteor = 100.0 * meteor_score(hyps[i], refs[i]);
    meteor_sum += s.meteor;
    report.hypothesis_tokens += static_cast<long>(hyps[i].size());
    for (const auto& r : refs[i]) report.reference_tokens += static_cast<long>(r.size());
  }
  report.meteor = meteor_sum / static_cast<double>(hyps.size());
  report.images = static_cast<long>(hyps.size());
  return report;
}

std::string format_report_tsv(const EvalReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "BLEU-2\t%.2f\nBLEU-3\t%.2f\nBLEU-4\t%.2f\nMETEOR\t%.2f\nimages\t%ld\nhypothesis_tokens\t%ld\n"
                "reference_tokens\t%ld\n",
                report.bleu2, report.bleu3, report.bleu4, report.meteor, report.images, report.hypothesis_tokens,
                report.reference_tokens);
  std::string out = buf;
  for (const auto& s : report.sentences) {
    std::snprintf(buf, sizeof buf, "\t%.2f\t%.2f\n", s.bleu4, s.meteor);
    out += "sentence\t" + s.image_id + buf;
  }
  return out;
}

std::string format_report_table(const EvalReport& report, const std::string& label) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-24s %8s %8s %8s %8s\n%-24s %8.2f %8.2f %8.2f %8.2f\n", "Model", "B-2", "B-3", "B-4", "METEOR",
                label.c_str(), report.bleu2, report.bleu3, report.bleu4, report.meteor);
  return buf;
}

std::map<std::string, std::string> load_hypotheses(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw Error(ErrorCode::MalformedLine, path + ":" + std::to_string(line_no));
    if (!out.emplace(line.substr(0, tab), line.substr(tab + 1)).second)
      throw Error(ErrorCode::DuplicateImageId, line.substr(0, tab));
  }
  return out;
}

std::string format_hypotheses(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::string out;
  for (const auto& [id, cap] : rows) out += id + "\t" + cap + "\n";
  return out;
}

}  // namespace mtlcap::metrics
