// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtlcap/corpus.hpp"

namespace mtlcap::metrics {

using Tokens = std::vector<std::string>;

/// Clipped n-gram matches and hypothesis n-gram totals per order (index 0 is
/// unigrams), with candidate length c and effective reference length r.
struct NGramStats {
  std::vector<long> matches;
  std::vector<long> totals;
  long hyp_len = 0;
  long ref_len = 0;

  NGramStats& operator+=(const NGramStats& o);
};

/// Closest reference length wins; ties go to the shorter reference.
NGramStats sentence_ngram_stats(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order);

/// BP * exp(mean log p_n) over corpus-aggregated counts; 0 if any p_n is 0.
double bleu_from_stats(const NGramStats& stats, int max_order);

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<std::vector<Tokens>>& references,
                   int max_order);

/// Diagnostic only: add-one smoothing for orders above 1.
double sentence_bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order);

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  std::vector<std::pair<int, int>> pairs;  // (hyp index, ref index), by hyp index
};

/// Exact unigram alignment with the most matches, then the fewest chunks.
MeteorAlignment meteor_align(const Tokens& hyp, const Tokens& ref);

/// F = 10PR / (R + 9P), penalty = 0.5 (chunks/m)^3, score = F (1 - penalty).
double meteor_from_alignment(const MeteorAlignment& a);

/// Best score over references.
double meteor_score(const Tokens& hyp, const std::vector<Tokens>& refs);

struct SentenceScore {
  std::string image_id;
  double bleu4 = 0.0;  // smoothed sentence BLEU
  double meteor = 0.0;
};

/// Scores are x100.
struct EvalReport {
  double bleu2 = 0.0;
  double bleu3 = 0.0;
  double bleu4 = 0.0;
  double meteor = 0.0;
  std::vector<SentenceScore> sentences;
  long images = 0;
  long hypothesis_tokens = 0;
  long reference_tokens = 0;
};

/// Scores the test-split records against `hypotheses` (image_id -> caption),
/// tokenizing both sides with text::tokenize.
EvalReport evaluate_corpus(const std::vector<corpus::CaptionRecord>& records,
                           const std::map<std::string, std::string>& hypotheses,
                           corpus::Split split = corpus::Split::Test);

/// `metric<TAB>value` lines.
std::string format_report_tsv(const EvalReport& report);
/// Table with B-2/B-3/B-4/METEOR columns.
std::string format_report_table(const EvalReport& report, const std::string& label);

/// `image_id<TAB>caption` per line.
std::map<std::string, std::string> load_hypotheses(const std::string& path);
std::string format_hypotheses(const std::vector<std::pair<std::string, std::string>>& rows);

}  // namespace mtlcap::metrics
