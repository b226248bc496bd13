// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mtlcap/config.hpp"
#include "mtlcap/error.hpp"
#include "mtlcap/metrics.hpp"
#include "mtlcap/pipeline.hpp"
#include "oracles.hpp"

using namespace mtlcap;
using fixture::slurp;
using fixture::TempDir;
using metrics::Tokens;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

const std::string kSource = MTLCAP_SOURCE_DIR;

Tokens words(const std::string& s) {
  Tokens out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Tokens random_tokens(Rng& rng, std::size_t min_len, std::size_t max_len, int alphabet) {
  Tokens t(min_len + rng.below(max_len - min_len + 1));
  for (auto& w : t) w = std::string(1, static_cast<char>('a' + rng.below(static_cast<std::uint64_t>(alphabet))));
  return t;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- metrics

/// Corpus BLEU computed only from the naive matcher and a direct length rule.
double oracle_bleu(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs, int N) {
  std::vector<double> m(N, 0), t(N, 0);
  double c = 0, r = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    c += static_cast<double>(h.size());
    std::size_t best = refs[i][0].size();
    for (const auto& ref : refs[i]) {
      const auto d = [&](std::size_t len) { return len > h.size() ? len - h.size() : h.size() - len; };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
    }
    r += static_cast<double>(best);
    for (int n = 1; n <= N; ++n) {
      m[n - 1] += static_cast<double>(oracle::clipped_matches(h, refs[i], static_cast<std::size_t>(n)));
      t[n - 1] += h.size() >= static_cast<std::size_t>(n) ? static_cast<double>(h.size() - n + 1) : 0.0;
    }
  }
  double log_sum = 0;
  for (int n = 0; n < N; ++n) {
    if (m[n] == 0 || t[n] == 0) return 0.0;
    log_sum += std::log(m[n] / t[n]);
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / N);
}

Outcome criterion_metric_fixtures() {
  Outcome o;
  const double b2 = metrics::corpus_bleu({words("the cat sat on the mat")}, {{words("the cat is on the mat")}}, 2);
  o.require(std::abs(b2 - 0.7071) <= 1e-4, "hand BLEU-2 " + fmt("%.6f", b2));

  Rng rng(20240611);
  for (int k = 0; k < 10; ++k) {
    std::vector<Tokens> hyps;
    std::vector<std::vector<Tokens>> refs;
    const int sentences = 1 + static_cast<int>(rng.below(4));
    for (int s = 0; s < sentences; ++s) {
      hyps.push_back(random_tokens(rng, 4, 12, 4));
      std::vector<Tokens> set;
      const int nref = 1 + static_cast<int>(rng.below(3));
      for (int j = 0; j < nref; ++j) set.push_back(random_tokens(rng, 3, 12, 4));
      refs.push_back(set);
    }
    for (int N = 2; N <= 4; ++N) {
      const double got = metrics::corpus_bleu(hyps, refs, N);
      const double want = oracle_bleu(hyps, refs, N);
      o.require(std::abs(got - want) <= 1e-12,
                "fixture " + std::to_string(k) + " BLEU-" + std::to_string(N) + fmt(" %.9f", got) + fmt(" vs %.9f", want));
    }
  }

  const double id = metrics::meteor_score(words("a b c d"), {words("a b c d")});
  o.require(id == 0.9921875, "METEOR identity " + fmt("%.10f", id));
  const double hand = metrics::meteor_score(words("the cat sat on the mat"), {words("the cat is on the mat")});
  o.require(std::abs(hand - 0.8067) <= 1e-3, "METEOR hand " + fmt("%.6f", hand));
  if (o.pass) o.detail = "B-2 " + fmt("%.6f", b2) + ", METEOR " + fmt("%.7f", id) + " / " + fmt("%.4f", hand);
  return o;
}

Outcome criterion_oracle_equivalence() {
  Outcome o;
  std::vector<Tokens> all{{}};
  for (std::size_t len = 1; len <= 6; ++len) {
    const std::size_t before = all.size();
    for (std::size_t i = 0; i < before; ++i)
      if (all[i].size() == len - 1)
        for (char ch = 'a'; ch < 'e'; ++ch) {
          Tokens t = all[i];
          t.emplace_back(1, ch);
          all.push_back(std::move(t));
        }
  }
  long pairs = 0, mismatches = 0;
  for (const auto& h : all)
    for (const auto& r : all) {
      const std::vector<Tokens> refs{r};
      const auto st = metrics::sentence_ngram_stats(h, refs, 4);
      for (std::size_t n = 1; n <= 4; ++n)
        if (st.matches[n - 1] != oracle::clipped_matches(h, refs, n)) ++mismatches;
      ++pairs;
    }
  o.require(mismatches == 0, std::to_string(mismatches) + " clipped-count mismatches");

  Rng rng(7);
  int meteor_bad = 0;
  for (int k = 0; k < 500; ++k) {
    const Tokens h = random_tokens(rng, 1, 7, 3), r = random_tokens(rng, 1, 7, 3);
    const auto a = metrics::meteor_align(h, r);
    const auto [m, ch] = oracle::exhaustive_alignment(h, r);
    meteor_bad += a.matches != m || a.chunks != ch;
  }
  o.require(meteor_bad == 0, std::to_string(meteor_bad) + " of 500 METEOR alignments differ");
  if (o.pass) o.detail = std::to_string(pairs) + " pairs x 4 orders exact; 500/500 alignments";
  return o;
}

// ---------------------------------------------------------------- model

Outcome criterion_gradients() {
  Outcome o;
  double worst = 0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& rep : {fixture::encoder_gradients(seed), fixture::head_gradients(seed),
                            fixture::decoder_gradients(seed)})
      if (rep.worst > worst) {
        worst = rep.worst;
        where = rep.what + " seed " + std::to_string(seed);
      }
  }
  o.require(worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " at " + where);
  if (o.pass) o.detail = "max relative error " + fmt("%.3g", worst) + " (" + where + ")";
  return o;
}

Outcome criterion_invariants() {
  Outcome o;
  double sum_err = 0, shift_err = 0, prob_err = 0;
  bool contained = true;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const int L = 1 + static_cast<int>(rng.below(16));
    auto m = fixture::toy_decoder(seed, 7, 6, 8, 8, 5, 1, L);
    m.annotations *= rng.uniform(0.1, 20.0);
    const Row h = uniform_matrix(1, 8, -3, 3, rng);
    const auto step = decoder::attend(m.annotations, h, m.attn);
    sum_err = std::max(sum_err, std::abs(step.alpha.sum() - 1.0));
    for (int j = 0; j < step.context.size(); ++j)
      contained = contained && step.context(j) >= m.annotations.col(j).minCoeff() - 1e-12 &&
                  step.context(j) <= m.annotations.col(j).maxCoeff() + 1e-12;

    const Row e = uniform_matrix(1, L, -30, 30, rng);
    const double c = rng.uniform(-500, 500);
    shift_err = std::max(shift_err, (softmax(e) - softmax((e.array() + c).matrix())).cwiseAbs().maxCoeff());

    const auto head = heads::init_head(seed, 8, 2 + static_cast<int>(rng.below(99)), 6, 2);
    const Row p = heads::head_forward(uniform_matrix(L, 8, -5, 5, rng), head, Mode::inference());
    prob_err = std::max(prob_err, std::abs(p.sum() - 1.0));
  }
  o.require(sum_err <= 1e-6, "attention sum error " + fmt("%.3g", sum_err));
  o.require(shift_err <= 1e-9, "shift error " + fmt("%.3g", shift_err));
  o.require(contained, "context left the annotation hull");
  o.require(prob_err <= 1e-6, "class probability sum error " + fmt("%.3g", prob_err));
  if (o.pass)
    o.detail = "1000 inputs; sum err " + fmt("%.2g", sum_err) + ", shift err " + fmt("%.2g", shift_err) +
               ", prob err " + fmt("%.2g", prob_err);
  return o;
}

Outcome criterion_beam() {
  Outcome o;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = fixture::toy_decoder(seed);
    o.require(decoder::beam_decode(m.annotations, m.params, m.attn, 1, 10) ==
                  decoder::greedy_decode(m.annotations, m.params, m.attn, 10),
              "beam 1 differs from greedy, seed " + std::to_string(seed));
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = fixture::toy_decoder(seed, 5);
    double best = -1e300;
    const auto score = [&](const text::TokenSequence& s) { return decoder::mean_log_prob(m.annotations, m.params, m.attn, s); };
    best = std::max(best, score({1, 2}));
    for (int a = 1; a < 5; ++a)
      if (a != 2)
        for (int b = 1; b < 5; ++b) best = std::max(best, score({1, a, b}));
    const double got = score(decoder::beam_decode(m.annotations, m.params, m.attn, 5, 3));
    o.require(std::abs(got - best) <= 1e-12, "beam 5 misses the optimum, seed " + std::to_string(seed));
  }
  int strict = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto m = fixture::toy_decoder(seed + 1000);
    const auto s1 = decoder::mean_log_prob(m.annotations, m.params, m.attn,
                                           decoder::beam_decode(m.annotations, m.params, m.attn, 1, 10));
    const auto s3 = decoder::mean_log_prob(m.annotations, m.params, m.attn,
                                           decoder::beam_decode(m.annotations, m.params, m.attn, 3, 10));
    o.require(s3 >= s1 - 1e-12, "beam 3 below beam 1, seed " + std::to_string(seed));
    strict += s3 > s1 + 1e-12;
  }
  if (o.pass) o.detail = "20/20 greedy, 20/20 optimal, 50/50 beam-3 >= beam-1 (" + std::to_string(strict) + " strictly)";
  return o;
}

// ---------------------------------------------------------------- toy pipeline

/// A toy config rewritten to read the bundled data and write under `root`.
std::string toy_config(const std::string& name, const fs::path& root) {
  std::string text = slurp(kSource + "/configs/toy/" + name + ".ini");
  const auto replace = [&](const std::string& from, const std::string& to) {
    for (std::size_t at = text.find(from); at != std::string::npos; at = text.find(from, at + to.size()))
      text.replace(at, from.size(), to);
  };
  replace("../../data/toy", kSource + "/data/toy");
  replace("../../runs/toy", root.string());
  return text;
}

struct Loaded {
  config::RunConfig cfg;
  std::vector<corpus::CaptionRecord> records;
  training::PipelineData data;
};

Loaded load_toy(const std::string& name, const TempDir& d) {
  d.write(name + ".ini", toy_config(name, d.path()));
  Loaded l;
  l.cfg = config::load_run_config(d / (name + ".ini"), config::toy_defaults());
  l.records = pipeline::prepare_manifest(l.cfg);
  const auto cache = d / "cache";
  const auto summary = pipeline::extract_images(pipeline::list_images(l.cfg, l.records), l.cfg.backbone_spec(), cache, false);
  if (!summary.failures.empty()) throw Error(ErrorCode::UndecodableImage, summary.failures.front().second);
  l.data = pipeline::load_pipeline_data(l.cfg, l.records, cache);
  return l;
}

Outcome criterion_sequential() {
  Outcome o;
  TempDir d;
  const auto l = load_toy("all_tasks", d);
  const auto& t = l.cfg.train;
  o.require(t.phases == std::vector<training::Task>{training::Task::Action, training::Task::Object, training::Task::Caption},
            "all_tasks config does not list action, object, caption");
  const auto action = training::train_phase(training::Task::Action, l.data, nullptr, t);
  const auto object = training::train_phase(training::Task::Object, l.data, &action.checkpoint, t);
  const auto caption = training::train_phase(training::Task::Caption, l.data, &object.checkpoint, t);
  o.require(caption.initial_encoder == parameter_bytes(object.checkpoint, "encoder."),
            "caption phase did not start from the object encoder");
  o.require(object.initial_encoder == parameter_bytes(action.checkpoint, "encoder."),
            "object phase did not start from the action encoder");
  const std::string head = parameter_bytes(action.checkpoint, "head.action.");
  o.require(!head.empty(), "action head missing");
  o.require(parameter_bytes(object.checkpoint, "head.action.") == head, "object phase changed the action head");
  o.require(parameter_bytes(caption.checkpoint, "head.action.") == head, "caption phase changed the action head");
  o.require(parameter_bytes(caption.checkpoint, "head.object.") == parameter_bytes(object.checkpoint, "head.object."),
            "caption phase changed the object head");
  o.require(caption.checkpoint.provenance == std::vector<std::string>{"action", "object", "caption"},
            "provenance out of order");

  // the pipeline driver threads the same way
  const auto piped = training::run_pipeline(t, l.data, d / "piped");
  o.require(serialize_checkpoint(piped.checkpoint) == serialize_checkpoint(caption.checkpoint),
            "run_pipeline differs from chained train_phase");
  if (o.pass) o.detail = "encoder hand-off exact, action head untouched, provenance action,object,caption";
  return o;
}

Outcome criterion_overfit() {
  Outcome o;
  TempDir d;
  const auto l = load_toy("single_task", d);
  o.require(l.data.caption->train.size() == 16, "expected 16 training captions, got " +
                                                    std::to_string(l.data.caption->train.size()));
  o.require(l.cfg.train.epochs_for(training::Task::Caption) == 200, "single_task is not a 200-epoch run");
  const auto r = training::train_phase(training::Task::Caption, l.data, nullptr, l.cfg.train);
  const double first = r.report.epochs.front().train_loss, last = r.report.epochs.back().train_loss;
  o.require(last < 0.1 * first, "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last));

  int exact = 0;
  for (const auto& rec : l.records) {
    if (rec.split != corpus::Split::Train) continue;
    const auto grid = features::cache_read(rec.image_id, "toy", d / "cache");
    const std::string hyp = pipeline::caption_grid(r.checkpoint, grid, 0, l.cfg.decode_max_len);
    exact += text::tokenize(hyp) == text::tokenize(rec.captions.front());
  }
  o.require(exact >= 15, std::to_string(exact) + "/16 exact greedy captions");  // 90% of 16 rounds up to 15
  if (o.pass)
    o.detail = "loss " + fmt("%.4f", first) + " -> " + fmt("%.5f", last) + ", " + std::to_string(exact) +
               "/16 exact greedy captions";
  return o;
}

int run_cli(const fs::path& cwd, const std::string& args, std::string* out = nullptr) {
  const fs::path log = cwd / "cli.out";
  const std::string cmd = "cd '" + cwd.string() + "' && '" MTLCAP_CLI_PATH "' " + args + " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) *out = slurp(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// prepare -> extract -> train -> caption -> evaluate for one config.
std::string cli_pipeline(const std::string& name, const fs::path& root, std::string* table = nullptr) {
  std::ofstream(root / (name + ".ini")) << toy_config(name, root);
  const std::string c = "-c " + name + ".ini ";
  const fs::path out = root / name;
  std::string log;
  if (run_cli(root, "prepare " + c, &log)) return "prepare failed: " + log;
  if (run_cli(root, "extract " + c, &log)) return "extract failed: " + log;
  if (run_cli(root, "train " + c, &log)) return "train failed: " + log;
  std::string last;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename().string().ends_with("_caption.amtc")) last = e.path().filename().string();
  if (last.empty()) return "no caption checkpoint";
  if (run_cli(root, "caption " + c + "-k " + name + "/" + last + " -o " + name + "/hyps.txt", &log))
    return "caption failed: " + log;
  if (run_cli(root, "evaluate " + c + "--hyps " + name + "/hyps.txt --label " + name + " -o " + name + "/eval.tsv", &log))
    return "evaluate failed: " + log;
  if (table) *table = log;
  return "";
}

/// Report lines without the wall-clock column.
std::string loss_columns(const std::string& report) {
  std::string out;
  std::istringstream in(report);
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind('\t')) + "\n";
  return out;
}

Outcome criterion_determinism() {
  Outcome o;
  TempDir a, b;
  for (const TempDir* d : {&a, &b}) {
    const std::string err = cli_pipeline("all_tasks", d->path());
    o.require(err.empty(), err);
    if (!o.pass) return o;
  }
  int compared = 0;
  const auto same = [&](const fs::path& rel, bool loss_only = false) {
    std::string x = slurp(a / rel.string()), y = slurp(b / rel.string());
    if (loss_only) {
      x = loss_columns(x);
      y = loss_columns(y);
    }
    o.require(!x.empty() && x == y, rel.string() + " differs between runs");
    ++compared;
  };
  same("manifest.tsv");
  std::set<std::string> cache_a, cache_b;
  for (const auto& e : fs::directory_iterator(a / "cache")) cache_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b / "cache")) cache_b.insert(e.path().filename().string());
  o.require(cache_a == cache_b && !cache_a.empty(), "cache entry sets differ");
  for (const auto& f : cache_a) same(fs::path("cache") / f);
  for (const char* phase : {"01_action", "02_object", "03_caption"}) {
    same(fs::path("all_tasks") / (std::string(phase) + ".steps.tsv"));
    same(fs::path("all_tasks") / (std::string(phase) + ".report.tsv"), true);
    same(fs::path("all_tasks") / (std::string(phase) + ".amtc"));
  }
  same("all_tasks/hyps.txt");
  same("all_tasks/eval.tsv");
  if (o.pass) o.detail = std::to_string(compared) + " artifacts byte-identical across two runs";
  return o;
}

Outcome criterion_ablation() {
  Outcome o;
  TempDir d;
  std::string summary;
  for (const char* name : {"single_task", "action_caption", "object_caption", "all_tasks"}) {
    std::string table;
    const std::string err = cli_pipeline(name, d.path(), &table);
    o.require(err.empty(), std::string(name) + ": " + err);
    if (!err.empty()) continue;
    const std::string tsv = slurp(d / name / "eval.tsv");
    std::map<std::string, double> got;
    std::istringstream in(tsv);
    for (std::string key, value; std::getline(in, key, '\t') && std::getline(in, value);)
      if (key.rfind("BLEU", 0) == 0 || key == "METEOR") got[key] = std::stod(value);
    for (const char* k : {"BLEU-2", "BLEU-3", "BLEU-4", "METEOR"}) {
      o.require(got.count(k) && got[k] >= 0 && got[k] <= 100, std::string(name) + ": " + k + " missing");
    }
    o.require(table.find("B-2") != std::string::npos && table.find("METEOR") != std::string::npos,
              std::string(name) + ": table header missing");
    summary += std::string(summary.empty() ? "" : "; ") + name + " " + fmt("%.2f", got["BLEU-2"]) + "/" +
               fmt("%.2f", got["BLEU-3"]) + "/" + fmt("%.2f", got["BLEU-4"]) + "/" + fmt("%.2f", got["METEOR"]);
  }
  if (o.pass) o.detail = summary;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0: none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "metric fixtures", 5, criterion_metric_fixtures},
      {2, "oracle equivalence", 120, criterion_oracle_equivalence},
      {3, "gradient checks", 120, criterion_gradients},
      {4, "attention/softmax invariants", 0, criterion_invariants},
      {5, "sequential multi-task contract", 300, criterion_sequential},
      {6, "overfit smoke test", 600, criterion_overfit},
      {7, "determinism", 0, criterion_determinism},
      {8, "beam properties", 0, criterion_beam},
      {9, "ablation harness", 0, criterion_ablation},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.pass && c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail = "took " + fmt("%.1f s", secs) + ", budget " + fmt("%.0f s", c.budget_s);
    }
    failed += !o.pass;
    std::printf("%s %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
