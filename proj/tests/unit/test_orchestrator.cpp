#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <sstream>

#include "aera/error.hpp"
#include "aera/humaneval.hpp"
#include "aera/orchestrator.hpp"
#include "synthetic.hpp"

using namespace aera;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Inputs for a small mock-provider run: train and test TSVs plus a teacher script.
struct Fixture {
  explicit Fixture(const std::string& tag, std::size_t per_subset = 40, std::size_t test_per_subset = 10)
      : dir(tag) {
    const std::map<std::string, std::size_t> train_counts{
        {"1", per_subset}, {"2", per_subset}, {"5", per_subset}, {"6", per_subset}};
    const std::map<std::string, std::size_t> test_counts{
        {"1", test_per_subset}, {"2", test_per_subset}, {"5", test_per_subset}, {"6", test_per_subset}};
    const auto train = fixtures::synthetic_tsv(train_counts, 3);
    const auto test = fixtures::synthetic_tsv(test_counts, 4, 100000);
    fixtures::write_file(dir / "train.tsv", train);
    fixtures::write_file(dir / "test.tsv", test);

    std::istringstream a(train), b(test);
    auto records = ingest_dataset(a);
    auto more = ingest_dataset(b);
    records.insert(records.end(), more.begin(), more.end());
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
    c.samples = 10;
    return c;
  }

  fixtures::TempDir dir;
};

const std::vector<Stage> kChain{Stage::Ingest,  Stage::Generate,       Stage::Audit,   Stage::Refine,
                                Stage::Compose, Stage::ExportFinetune, Stage::Evaluate};

// Relative path -> content, minus timestamped bookkeeping and the latency-bearing cache.
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

class CountingProvider : public ChatProvider {
 public:
  explicit CountingProvider(std::shared_ptr<ChatProvider> inner) : inner_(std::move(inner)) {}
  ProviderReply send(const CompletionRequest& req) override {
    ++calls;
    return inner_->send(req);
  }
  std::atomic<int> calls{0};

 private:
  std::shared_ptr<ChatProvider> inner_;
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AERA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Pipeline, EndToEndIsByteIdenticalAcrossRuns) {
  Fixture fx("e2e");
  const auto t0 = std::chrono::steady_clock::now();
  auto c1 = fx.config("machine_a");
  c1.parallelism = 1;
  auto c2 = fx.config("machine_b");
  c2.parallelism = 8;
  for (auto* c : {&c1, &c2}) {
    Pipeline p(*c);
    for (auto st : kChain) p.run(st);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);

  const auto a = artifact_tree(c1.run_dir);
  const auto b = artifact_tree(c2.run_dir);
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [rel, body] : a) {
    auto it = b.find(rel);
    ASSERT_NE(it, b.end()) << rel;
    EXPECT_TRUE(body == it->second) << rel << " differs";
  }
  for (const char* rel : {"records.jsonl", "generations.jsonl", "audit.jsonl", "refinements.jsonl",
                          "training_set.jsonl", "finetune/train.jsonl", "finetune/test.jsonl", "metrics.json"})
    EXPECT_TRUE(a.count(rel)) << rel;

  const auto metrics = json::parse(a.at("metrics.json"));
  EXPECT_EQ(metrics["split"], "test");
  EXPECT_EQ(metrics["predictions_file"], "teacher_predictions.tsv");
}

TEST(Pipeline, StagesInSeparateProcessesAgree) {
  Fixture fx("stagewise");
  auto c1 = fx.config("one");
  auto c2 = fx.config("two");
  {
    Pipeline p(c1);
    for (auto st : kChain) p.run(st);
  }
  // A fresh Pipeline per stage mimics one process per CLI call.
  for (auto st : kChain) Pipeline(c2).run(st);
  EXPECT_EQ(artifact_tree(c1.run_dir), artifact_tree(c2.run_dir));
}

TEST(Pipeline, AuditFlagsPlantedMislabels) {
  Fixture fx("audit");
  auto c = fx.config("run");
  Pipeline p(c);
  for (auto st : {Stage::Ingest, Stage::Generate, Stage::Audit}) p.run(st);

  std::istringstream in(fixtures::read_file(fx.dir / "train.tsv"));
  const auto planted = fixtures::planted_mislabels(ingest_dataset(in));
  std::set<std::int64_t> flagged;
  std::istringstream lines(fixtures::read_file(fs::path(c.run_dir) / "audit.jsonl"));
  for (std::string line; std::getline(lines, line);) {
    auto j = json::parse(line);
    if (j["flagged"].get<bool>()) flagged.insert(j["answer_id"].get<std::int64_t>());
  }
  EXPECT_EQ(flagged, planted);
}

TEST(Pipeline, WarmRerunHitsCacheOnly) {
  Fixture fx("warm");
  auto c = fx.config("run");
  {
    Pipeline p(c);
    p.run(Stage::Ingest);
    p.run(Stage::Generate);
  }
  const auto before = fixtures::read_file(fs::path(c.run_dir) / "generations.jsonl");
  auto probe = std::make_shared<CountingProvider>(MockChatProvider::from_file(c.provider.mock_script));
  Pipeline again(c, probe);
  again.run(Stage::Generate);
  EXPECT_EQ(probe->calls.load(), 0);
  EXPECT_EQ(fixtures::read_file(fs::path(c.run_dir) / "generations.jsonl"), before);
}

TEST(Pipeline, MissingInputsAreReported) {
  Fixture fx("missing");
  auto c = fx.config("empty");
  Pipeline p(c);
  try {
    p.run(Stage::Evaluate);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.stage(), "evaluate");
    EXPECT_NE(e.path().find("records.jsonl"), std::string::npos);
  }
  EXPECT_THROW(p.run(Stage::Generate), MissingArtifact);
  EXPECT_THROW(p.run(Stage::Refine), MissingArtifact);
  p.run(Stage::Ingest);
  EXPECT_THROW(p.run(Stage::Audit), MissingArtifact);
  EXPECT_THROW(p.run(Stage::Evaluate), MissingArtifact);
}

TEST(Pipeline, DumpPromptsWritesPromptsWithoutCalls) {
  Fixture fx("dump", 10, 2);
  auto c = fx.config("run");
  c.dump_prompts = true;
  auto probe = std::make_shared<CountingProvider>(MockChatProvider::from_file(c.provider.mock_script));
  Pipeline p(c, probe);
  p.run(Stage::Ingest);
  const auto res = p.run(Stage::Generate);
  EXPECT_TRUE(res.artifacts.count("prompts.jsonl"));
  EXPECT_EQ(probe->calls.load(), 0);
  const auto body = fixtures::read_file(fs::path(c.run_dir) / "prompts.jsonl");
  EXPECT_NE(body.find("[Student answer]"), std::string::npos);
  EXPECT_FALSE(fs::exists(fs::path(c.run_dir) / "generations.jsonl"));
}

TEST(Pipeline, ManifestListsStagesAndDigests) {
  Fixture fx("manifest", 10, 2);
  auto c = fx.config("run");
  Pipeline p(c);
  const auto res = p.run(Stage::Ingest);
  p.run(Stage::Generate);
  const auto m = json::parse(fixtures::read_file(fs::path(c.run_dir) / "manifest.json"));
  EXPECT_EQ(m["config_digest"], config_digest(c));
  const auto dump = m.dump();
  EXPECT_NE(dump.find("generations.jsonl"), std::string::npos);
  EXPECT_NE(dump.find(res.artifacts.at("records.jsonl")), std::string::npos);
  EXPECT_EQ(res.artifacts.at("records.jsonl"), file_sha256(fs::path(c.run_dir) / "records.jsonl"));
}

TEST(Pipeline, HumanEvalRoundTrip) {
  Fixture fx("he", 20, 30);
  auto c = fx.config("run");
  {
    Pipeline p(c);
    for (auto st : {Stage::Ingest, Stage::Generate}) p.run(st);
  }
  // Second system: the teacher with every rationale reworded.
  const auto teacher = read_predictions(fs::path(c.run_dir) / "teacher_predictions.tsv");
  std::string other;
  for (const auto& [id, t] : teacher) other += format_prediction_line(id, t + " Alternative wording.");
  fixtures::write_file(fx.dir / "other.tsv", other);

  c.predictions_a = (fs::path(c.run_dir) / "teacher_predictions.tsv").string();
  c.predictions_b = (fx.dir / "other.tsv").string();
  c.system_a = "teacher";
  c.system_b = "reworded";
  const auto exp = Pipeline(c).run(Stage::HumanevalExport);
  ASSERT_TRUE(exp.artifacts.count("humaneval/correctness.jsonl"));
  const auto plan = json::parse(fixtures::read_file(fs::path(c.run_dir) / "humaneval/plan.json"));
  EXPECT_EQ(plan["total_sampled"], 12);  // 10% of 30 per subset
  EXPECT_EQ(plan["correctness_items"].get<int>(), 2 * plan["tasks"].get<int>());

  std::string ann;
  int n = 0;
  for (const auto& j : humaneval::read_jsonl(fs::path(c.run_dir) / "humaneval/correctness.jsonl"))
    ann += json{{"item_id", j["item_id"]}, {"annotator", n++ % 2 ? "x" : "y"},
                {"label", {"key_elements_correct", "rubric_faithful"}}}
               .dump() +
           "\n";
  for (const auto& j : humaneval::read_jsonl(fs::path(c.run_dir) / "humaneval/preference.jsonl"))
    ann += json{{"item_id", j["item_id"]}, {"annotator", n++ % 2 ? "x" : "y"}, {"choice", "A"}}.dump() + "\n";
  fixtures::write_file(fx.dir / "ann.jsonl", ann);
  c.annotations = {(fx.dir / "ann.jsonl").string()};
  Pipeline(c).run(Stage::HumanevalImport);
  const auto report = json::parse(fixtures::read_file(fs::path(c.run_dir) / "humaneval/report.json"));
  EXPECT_FALSE(report.empty());
  const auto unblinded = fixtures::read_file(fs::path(c.run_dir) / "humaneval/annotations_unblinded.jsonl");
  EXPECT_NE(unblinded.find("\"reworded\""), std::string::npos);
  EXPECT_TRUE(Pipeline(c).run(Stage::Report).artifacts.count("report.txt"));
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig c;
  c.subsets = {"1", "6"};
  c.samples = 3;
  c.threshold = 0.75;
  c.strategy = Strategy::FixedLabels;
  c.demo_count = 2;
  c.budget_cap_usd = 1.5;
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(config_from_json(json{{"sampels", 3}}), ConfigInvalid);
  EXPECT_THROW(config_from_json(json{{"provider", {{"knd", "mock"}}}}), ConfigInvalid);
  EXPECT_THROW(config_from_json(json{{"template", "fancy"}}), ConfigInvalid);

  const auto partial = config_from_json(json{{"samples", 7}});
  EXPECT_EQ(partial.samples, 7);
  EXPECT_EQ(partial.threshold, 0.9);
}

TEST(Config, DigestIgnoresRunLocation) {
  Fixture fx("digest", 5, 1);
  auto a = fx.config("x");
  auto b = fx.config("y");
  b.cache_dir = "/somewhere/else";
  b.parallelism = 16;
  EXPECT_EQ(config_digest(a), config_digest(b));
  // Same content at another path still matches.
  fs::copy_file(a.train_tsv, fx.dir / "copy.tsv");
  b.train_tsv = (fx.dir / "copy.tsv").string();
  EXPECT_EQ(config_digest(a), config_digest(b));
  b.threshold = 0.8;
  EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(Config, ValidateRejectsBadValues) {
  Fixture fx("validate", 5, 1);
  auto base = fx.config("run");
  EXPECT_NO_THROW(validate(base));
  auto bad = [&](auto mutate) {
    auto c = base;
    mutate(c);
    EXPECT_THROW(validate(c), ConfigInvalid);
  };
  bad([](RunConfig& c) { c.samples = 0; });
  bad([](RunConfig& c) { c.threshold = 1.5; });
  bad([](RunConfig& c) { c.dev_fraction = 1.0; });
  bad([](RunConfig& c) { c.parallelism = 0; });
  bad([](RunConfig& c) { c.subsets.clear(); });
  bad([](RunConfig& c) { c.provider.kind = "carrier-pigeon"; });
  bad([](RunConfig& c) { c.provider.mock_script = "/nonexistent/script.json"; });
}

TEST(Cli, ExitCodes) {
  Fixture fx("cli", 5, 1);
  const auto c = fx.config("run");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("ingest --no-such-flag"), 2);
  EXPECT_EQ(run_cli("--run-dir " + c.run_dir + " --samples 0 --mock-provider " + c.provider.mock_script + " ingest"),
            2);

  const std::string common = "--run-dir " + c.run_dir + " --train-tsv " + c.train_tsv + " --contexts-dir " +
                             c.contexts_dir + " --mock-provider " + c.provider.mock_script;
  EXPECT_EQ(run_cli(common + " evaluate"), 4);
  EXPECT_EQ(run_cli(common + " ingest"), 0);

  fixtures::write_file(fx.dir / "deny.json", json{{"default", {{"status", 401}, {"body", "no key"}}}}.dump());
  const std::string denied = "--run-dir " + (fx.dir / "denied").string() + " --train-tsv " + c.train_tsv +
                             " --contexts-dir " + c.contexts_dir + " --mock-provider " +
                             (fx.dir / "deny.json").string();
  EXPECT_EQ(run_cli(denied + " ingest"), 0);
  EXPECT_EQ(run_cli(denied + " generate"), 3);
}
