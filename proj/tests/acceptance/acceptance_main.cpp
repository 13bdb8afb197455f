// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "aera/error.hpp"
#include "aera/humaneval.hpp"
#include "aera/metrics.hpp"
#include "aera/orchestrator.hpp"
#include "aera/parsing.hpp"
#include "aera/refine.hpp"
#include "golden.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace aera;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Collects the first few failures for the summary line.
class Check {
 public:
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome outcome(std::string detail) const {
    if (failures_) return {false, notes_ + (failures_ > 3 ? " (+" + std::to_string(failures_ - 3) + " more)" : "")};
    return {true, std::move(detail)};
  }

 private:
  int failures_ = 0;
  std::string notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome qwk_oracle() {
  Check c;
  std::mt19937_64 gen(20240601);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 3 + static_cast<int>(gen() % 2);
    const std::size_t n = 1 + gen() % 50;
    std::vector<int> g(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(gen() % k);
      p[i] = static_cast<int>(gen() % k);
    }
    const double got = metrics::quadratic_weighted_kappa(g, p, k);
    const double d1 = std::abs(got - oracle::qwk_direct(g, p, k));
    const double d2 = std::abs(got - oracle::qwk_moments(g, p));
    worst = std::max({worst, d1, d2});
    c.expect(d1 <= 1e-10 && d2 <= 1e-10, "trial " + std::to_string(trial) + " off by " + std::to_string(std::max(d1, d2)));
  }
  const double secs = seconds_since(t0);
  const std::vector<int> x{0, 1, 2, 3, 2, 1};
  c.expect(metrics::quadratic_weighted_kappa(x, x, 4) == 1.0, "qwk(x, x) != 1");
  c.expect(std::abs(metrics::quadratic_weighted_kappa(std::vector<int>{0, 3}, std::vector<int>{3, 0}, 4) + 1.0) < 1e-12,
           "[0,3] vs [3,0] != -1");
  c.expect(secs < 5.0, "took " + fmt(secs, 2) + " s");
  return c.outcome("1000 pairs, max |diff| " + std::to_string(worst) + ", " + fmt(secs, 3) + " s");
}

Outcome metric_suite() {
  Check c;
  std::mt19937_64 gen(8128);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 3 + static_cast<int>(gen() % 2);
    const std::size_t n = 1 + gen() % 50;
    std::vector<int> g(n), p(n), labels;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(gen() % k);
      p[i] = static_cast<int>(gen() % k);
    }
    for (int l = 0; l < k; ++l) labels.push_back(l);
    const auto tag = "trial " + std::to_string(trial);
    c.expect(std::abs(metrics::accuracy(g, p) - oracle::accuracy_oracle(g, p, k)) <= 1e-10, tag + " accuracy");
    c.expect(std::abs(metrics::macro_f1(g, p, labels) - oracle::macro_f1_oracle(g, p, k)) <= 1e-10, tag + " macro-F1");
    c.expect(std::abs(metrics::cohen_kappa(g, p) - oracle::cohen_kappa_oracle(g, p, k)) <= 1e-10, tag + " kappa");
  }
  for (const auto& b : oracle::kBleu) {
    const double got = metrics::corpus_bleu(b.hyp, b.ref);
    c.expect(std::abs(got - b.score) <= 1e-4, std::string("BLEU ") + b.name + " = " + std::to_string(got));
  }
  return c.outcome("1000 random label pairs; " + std::to_string(std::size(oracle::kBleu)) +
                   " frozen BLEU fixtures within 1e-4");
}

Outcome split_reproduction() {
  Check c;
  const std::map<std::string, std::pair<std::size_t, std::size_t>> expected{
      {"1", {1338, 334}}, {"2", {1023, 255}}, {"5", {1436, 359}}, {"6", {1438, 359}}};
  std::string source;
  std::vector<AnswerRecord> pool;
  IngestOptions opts;
  opts.subset_filter = {"1", "2", "5", "6"};
  if (const char* real = std::getenv("AERA_ASAP_TRAIN_TSV"); real && *real) {
    std::ifstream in(real);
    c.expect(static_cast<bool>(in), std::string("cannot open ") + real);
    pool = ingest_dataset(in, opts);
    source = "training file " + fs::path(real).filename().string();
  } else {
    // Same per-subset sizes as the public training file; only the counts matter to the split.
    std::istringstream in(fixtures::synthetic_tsv({{"1", 1672}, {"2", 1278}, {"5", 1795}, {"6", 1797}}, 42));
    pool = ingest_dataset(in, opts);
    source = "synthetic stand-in with the training file's subset sizes";
  }
  const auto a = split_train_dev(pool, 0.2, 42);
  const auto b = split_train_dev(pool, 0.2, 42);
  std::map<std::string, std::pair<std::size_t, std::size_t>> got;
  for (const auto& r : a.train) ++got[r.subset].first;
  for (const auto& r : a.dev) ++got[r.subset].second;
  std::string shown;
  for (const auto& [s, want] : expected) {
    const auto have = got[s];
    c.expect(have == want, "subset " + s + " gave " + std::to_string(have.first) + "/" + std::to_string(have.second));
    shown += (shown.empty() ? "" : " ") + s + ":" + std::to_string(have.first) + "/" + std::to_string(have.second);
  }
  bool same = a.dev.size() == b.dev.size();
  for (std::size_t i = 0; same && i < a.dev.size(); ++i) same = a.dev[i].id == b.dev[i].id;
  c.expect(same, "split is not deterministic");
  return c.outcome(shown + " (" + source + ")");
}

Outcome parser_golden() {
  Check c;
  const ScoreRange k03{0, 3};
  for (const auto& g : golden::kStructured) {
    try {
      const auto sr = parse_scored_rationale(g.text, k03);
      c.expect(sr.score == g.score && sr.rationale.rfind(g.rationale_prefix, 0) == 0, g.name);
    } catch (const std::exception& e) {
      c.expect(false, std::string(g.name) + ": " + e.what());
    }
  }
  for (const auto& f : golden::kFreeform) {
    const auto ff = extract_freeform_score(f.text, k03);
    c.expect(ff.verdict.category == f.expected && !ff.score &&
                 ff.verdict.evidence.find(f.evidence_fragment) != std::string::npos,
             std::string(f.name) + " -> " + std::string(to_string(ff.verdict.category)));
  }
  return c.outcome(std::to_string(std::size(golden::kStructured)) + " structured outputs, " +
                   std::to_string(std::size(golden::kFreeform)) + " zero-shot scale/consistency/uncertainty cases");
}

// Inputs for a mock-teacher run.
struct RunInputs {
  RunInputs(const std::string& tag, std::size_t per_subset, std::size_t test_per_subset) : dir(tag) {
    std::map<std::string, std::size_t> tr, te;
    for (const char* s : {"1", "2", "5", "6"}) {
      tr[s] = per_subset;
      te[s] = test_per_subset;
    }
    train_text = fixtures::synthetic_tsv(tr, 3);
    const auto test_text = fixtures::synthetic_tsv(te, 4, 100000);
    fixtures::write_file(dir / "train.tsv", train_text);
    fixtures::write_file(dir / "test.tsv", test_text);
    std::istringstream a(train_text), b(test_text);
    auto records = ingest_dataset(a);
    if (test_per_subset > 0) {
      auto more = ingest_dataset(b);
      records.insert(records.end(), more.begin(), more.end());
    }
    fixtures::write_file(dir / "teacher.json", fixtures::teacher_script(records).dump(2));
  }
  RunConfig config(const std::string& run) const {
    RunConfig c;
    c.run_dir = (dir / run).string();
    c.train_tsv = (dir / "train.tsv").string();
    c.test_tsv = (dir / "test.tsv").string();
    c.contexts_dir = fixtures::contexts_dir().string();
    c.provider.kind = "mock";
    c.provider.mock_script = (dir / "teacher.json").string();
    c.backoff_ms = 0;
    return c;
  }
  fixtures::TempDir dir;
  std::string train_text;
};

std::set<std::int64_t> ids(const std::vector<TrainingExample>& xs) {
  std::set<std::int64_t> out;
  for (const auto& x : xs) out.insert(x.answer_id);
  return out;
}

bool subset_of(const std::set<std::int64_t>& a, const std::set<std::int64_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

Outcome refinement_logic() {
  Check c;
  RunInputs in("accept_audit", 60, 0);
  auto cfg = in.config("run");
  cfg.test_tsv.clear();
  Pipeline p(cfg);
  for (auto st : {Stage::Ingest, Stage::Generate, Stage::Audit}) p.run(st);
  std::istringstream train(in.train_text);
  const auto planted = fixtures::planted_mislabels(ingest_dataset(train));
  std::set<std::int64_t> flagged;
  for (const auto& j : humaneval::read_jsonl(fs::path(cfg.run_dir) / "audit.jsonl")) {
    const auto v = audit_from_json(j);
    if (v.flagged) flagged.insert(v.answer_id);
    if (v.flagged) c.expect(v.top_prob >= cfg.threshold && std::abs(*v.proposed_gold - v.original_gold) > 1,
                            "flag " + std::to_string(v.answer_id) + " breaks the rule");
  }
  c.expect(!planted.empty(), "no planted mislabels");
  c.expect(flagged == planted, "flagged " + std::to_string(flagged.size()) + " vs planted " +
                                   std::to_string(planted.size()));

  // Random pipelines: records, first passes, audits and refinements.
  const auto contexts = fixtures::shipped_contexts();
  std::mt19937_64 gen(4242);
  auto pick = [&](int n) { return static_cast<int>(gen() % static_cast<std::uint64_t>(n)); };
  const int subsets[] = {1, 2, 5, 6};
  for (int pipeline = 0; pipeline < 100; ++pipeline) {
    std::vector<AnswerRecord> records;
    std::map<std::int64_t, GenerationRecord> fp;
    std::map<std::int64_t, AuditVerdict> audits;
    std::map<std::int64_t, std::vector<ScoredRationale>> refinements;
    const int n = 5 + pick(60);
    for (int i = 0; i < n; ++i) {
      AnswerRecord r;
      r.id = i;
      r.subset = std::to_string(subsets[pick(4)]);
      r.gold = r.rater1_score = pick(4);
      r.text = "answer " + std::to_string(i);
      records.push_back(r);
      if (pick(10) < 8) {
        GenerationRecord g;
        g.answer_id = r.id;
        g.subset = r.subset;
        if (pick(8) > 0) g.parsed = ScoredRationale{pick(4), "first pass"};
        fp.emplace(r.id, g);
      }
      if (pick(3) == 0) {
        const int proposed = pick(4);
        const bool flag = std::abs(proposed - r.gold) > 1;
        audits[r.id] = {r.id, r.gold, flag ? std::optional<int>(proposed) : std::nullopt, flag, 0.95, ""};
      }
      for (int k = pick(3); k > 0; --k) refinements[r.id].push_back(ScoredRationale{pick(4), "refined"});
    }
    auto build = [&](Strategy s) { return ids(compose_training_set(records, contexts, fp, audits, refinements, s)); };
    const auto correct = build(Strategy::CorrectOnly);
    const auto fixed = build(Strategy::FixedLabels);
    const auto full = build(Strategy::Full);
    c.expect(subset_of(correct, fixed) && subset_of(fixed, full), "chain broken in pipeline " + std::to_string(pipeline));
  }
  return c.outcome(std::to_string(flagged.size()) + " planted mislabels flagged exactly; inclusion chain held on 100 random pipelines");
}

std::map<std::string, std::string> artifact_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    if (rel == "config.json" || rel == "manifest.json" || rel.rfind("cache/", 0) == 0)
      continue;
    out[rel] = fixtures::read_file(e.path());
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AERA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome end_to_end() {
  Check c;
  RunInputs in("accept_e2e", 40, 10);
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Stage> chain{Stage::Ingest,  Stage::Generate,       Stage::Audit,   Stage::Refine,
                                 Stage::Compose, Stage::ExportFinetune, Stage::Evaluate};

  // First machine: one process, serial requests.
  auto a = in.config("machine_a");
  a.parallelism = 1;
  {
    Pipeline p(a);
    for (auto st : chain) p.run(st);
  }
  // Second machine: the CLI, one process per stage, wide fan-out, copied inputs.
  fs::create_directories(in.dir / "elsewhere");
  for (const char* f : {"train.tsv", "test.tsv", "teacher.json"}) fs::copy_file(in.dir / f, in.dir / "elsewhere" / f);
  auto b = in.config("machine_b");
  b.train_tsv = (in.dir / "elsewhere/train.tsv").string();
  b.test_tsv = (in.dir / "elsewhere/test.tsv").string();
  b.provider.mock_script = (in.dir / "elsewhere/teacher.json").string();
  b.parallelism = 8;
  fixtures::write_file(in.dir / "machine_b.json", to_json(b).dump(2));
  for (auto st : chain) {
    const int rc = run_cli("--config " + (in.dir / "machine_b.json").string() + " " + std::string(to_string(st)));
    c.expect(rc == 0, "cli " + std::string(to_string(st)) + " exited " + std::to_string(rc));
  }
  const double secs = seconds_since(t0);

  const auto ta = artifact_tree(a.run_dir);
  const auto tb = artifact_tree(b.run_dir);
  c.expect(!ta.empty() && ta.size() == tb.size(), "artifact sets differ in size");
  for (const auto& [rel, body] : ta) {
    auto it = tb.find(rel);
    c.expect(it != tb.end() && it->second == body, rel + " differs");
  }
  for (const char* rel : {"generations.jsonl", "audit.jsonl", "refinements.jsonl", "training_set.jsonl",
                          "finetune/train.jsonl", "finetune/dev.jsonl", "finetune/test.jsonl", "metrics.json"})
    c.expect(ta.count(rel) == 1, std::string("missing ") + rel);
  c.expect(config_digest(a) != "" && config_digest(a) == config_digest(b), "config digests differ");
  c.expect(secs < 60.0, "took " + fmt(secs, 1) + " s");
  return c.outcome(std::to_string(ta.size()) + " artifacts byte-identical across in-process and CLI runs, " +
                   fmt(secs, 2) + " s");
}

Outcome humaneval_counts() {
  Check c;
  const std::map<std::string, std::size_t> sizes{{"1", 557}, {"2", 426}, {"5", 598}, {"6", 599}};
  const auto plan = humaneval::planned_counts(sizes, 0.1, 0.2);
  const std::map<std::string, std::size_t> want{{"1", 56}, {"2", 43}, {"5", 60}, {"6", 60}};
  c.expect(plan.sampled == want, "per-subset sample sizes");
  c.expect(plan.total_duplicates == 44, "duplicates " + std::to_string(plan.total_duplicates));
  c.expect(plan.total_sampled + plan.total_duplicates == 263, "total instances");

  humaneval::SystemPredictions a{"systemAlpha", {}}, b{"systemBeta", {}};
  std::int64_t id = 500;
  for (const auto& [subset, n] : sizes)
    for (std::size_t i = 0; i < n; ++i, ++id) {
      const std::string text = "student text " + std::to_string(id);
      a.items.push_back({id, subset, text, "2 points; first view of " + std::to_string(id)});
      b.items.push_back({id, subset, text, "1 point; second view of " + std::to_string(id)});
    }
  const auto tasks = humaneval::sample_eval_tasks(a, b, 0.1, 0.2, 42);
  c.expect(tasks.size() == 263, "tasks " + std::to_string(tasks.size()));
  fixtures::TempDir dir("accept_he");
  const auto exp = humaneval::export_tasks(tasks, fixtures::shipped_contexts(), dir / "blind", dir / "sealed/key.json");
  c.expect(exp.correctness_items == 526, "correctness items " + std::to_string(exp.correctness_items));
  c.expect(exp.preference_items == 263, "preference items " + std::to_string(exp.preference_items));
  for (const auto& f : {exp.correctness, exp.preference}) {
    const auto body = fixtures::read_file(f);
    for (const char* leak : {"systemAlpha", "systemBeta", "duplicate", "answer_id", "system"})
      c.expect(body.find(leak) == std::string::npos, std::string(leak) + " visible in " + f.filename().string());
  }
  return c.outcome("56/43/60/60 sampled, 44 duplicates, 263 instances, 526 correctness items, blind export clean");
}

Outcome simulatability() {
  Check c;
  const double gain = metrics::simulatability_gain(80.91, 69.96);
  c.expect(std::abs(gain - 10.95) < 1e-9, "gain " + std::to_string(gain));
  return c.outcome("80.91 - 69.96 = +" + fmt(gain, 2));
}

Outcome no_secondary_component() {
  Check c;
  // The fine-tuning worker is not built here; the pipeline must still finish
  // and leave its input files in the documented shape.
  RunInputs in("accept_standalone", 8, 2);
  auto cfg = in.config("run");
  Pipeline p(cfg);
  for (auto st : {Stage::Ingest, Stage::Generate, Stage::Audit, Stage::Refine, Stage::Compose,
                  Stage::ExportFinetune, Stage::Evaluate, Stage::Report})
    p.run(st);
  for (const char* f : {"finetune/train.jsonl", "finetune/dev.jsonl", "finetune/test.jsonl"}) {
    const auto lines = humaneval::read_jsonl(fs::path(cfg.run_dir) / f);
    c.expect(!lines.empty(), std::string(f) + " is empty");
    for (const auto& j : lines) c.expect(j.contains("input"), std::string(f) + " line without input");
  }
  return c.outcome("full chain completed with no fine-tuning worker present");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks{
      {"QWK oracle equivalence", qwk_oracle},
      {"Metric suite oracles", metric_suite},
      {"Split reproduction", split_reproduction},
      {"Parser golden suite", parser_golden},
      {"Refinement logic", refinement_logic},
      {"End-to-end determinism", end_to_end},
      {"Human-eval counts", humaneval_counts},
      {"Simulatability", simulatability},
      {"Runs without secondary component", no_secondary_component},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.ok ? 0 : 1;
    std::cout << (o.ok ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  std::cout << (checks.size() - failed) << "/" << checks.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
