#include "aera/orchestrator.hpp"

#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "aera/error.hpp"
#include "aera/humaneval.hpp"
#include "aera/metrics.hpp"
#include "aera/parsing.hpp"
#include "aera/text.hpp"

namespace aera {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, p);
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedRow(n, "invalid JSON in " + p.string());
    out.push_back(std::move(j));
  }
  return out;
}

template <class T, class F>
std::string to_jsonl(const std::vector<T>& items, F&& fn) {
  std::string out;
  for (const auto& it : items) {
    out += fn(it).dump();
    out += '\n';
  }
  return out;
}

std::string ctx_file(const std::string& subset) { return "subset_" + subset + ".ctx"; }

// Records whose outputs get scored: the test split, or dev when no test file was given.
Split eval_split(const std::vector<AnswerRecord>& records) {
  for (const auto& r : records)
    if (r.split == Split::Test) return Split::Test;
  return Split::Dev;
}

// Counters in stats objects start out as null.
void bump(json& counter) { counter = counter.is_null() ? 1 : counter.get<int>() + 1; }

std::optional<int> opt_int(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<int>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage names

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest:
      return "ingest";
    case Stage::Generate:
      return "generate";
    case Stage::Audit:
      return "audit";
    case Stage::Refine:
      return "refine";
    case Stage::Compose:
      return "compose";
    case Stage::ExportFinetune:
      return "export-finetune";
    case Stage::Evaluate:
      return "evaluate";
    case Stage::HumanevalExport:
      return "humaneval-export";
    case Stage::HumanevalImport:
      return "humaneval-import";
    case Stage::Report:
      return "report";
  }
  return "report";
}

Stage stage_from_string(std::string_view s) {
  for (auto st : {Stage::Ingest, Stage::Generate, Stage::Audit, Stage::Refine, Stage::Compose,
                  Stage::ExportFinetune, Stage::Evaluate, Stage::HumanevalExport, Stage::HumanevalImport,
                  Stage::Report})
    if (to_string(st) == s) return st;
  throw ConfigInvalid("unknown stage: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Config

fs::path RunConfig::cache_path() const { return cache_dir.empty() ? run_path() / "cache" : fs::path(cache_dir); }

fs::path RunConfig::key_file() const {
  return key_path.empty() ? run_path() / "sealed" / "key.json" : fs::path(key_path);
}

json to_json(const RunConfig& c) {
  json prices = json::object();
  for (const auto& [m, p] : c.prices)
    prices[m] = {{"prompt_usd_per_million", p.prompt_usd_per_million},
                 {"output_usd_per_million", p.output_usd_per_million}};
  return {
      {"run_dir", c.run_dir},
      {"train_tsv", c.train_tsv},
      {"test_tsv", c.test_tsv},
      {"contexts_dir", c.contexts_dir},
      {"subsets", c.subsets},
      {"gold_rule", to_string(c.gold_rule)},
      {"dev_fraction", c.dev_fraction},
      {"seed", c.seed},
      {"template", to_string(c.template_kind)},
      {"model_id", c.model_id},
      {"temperature", c.temperature},
      {"samples", c.samples},
      {"demo_count", c.demo_count ? json(*c.demo_count) : json(nullptr)},
      {"describe_tables", c.describe_tables},
      {"threshold", c.threshold},
      {"refine_retries", c.refine_retries},
      {"strategy", to_string(c.strategy)},
      {"provider",
       {{"kind", c.provider.kind},
        {"endpoint", c.provider.endpoint},
        {"api_key_env", c.provider.api_key_env},
        {"mock_script", c.provider.mock_script}}},
      {"parallelism", c.parallelism},
      {"max_attempts", c.max_attempts},
      {"backoff_ms", c.backoff_ms},
      {"cache_dir", c.cache_dir},
      {"budget_cap_usd", c.budget_cap_usd ? json(*c.budget_cap_usd) : json(nullptr)},
      {"prices", prices},
      {"predictions", c.predictions},
      {"humaneval",
       {{"sample_fraction", c.he_sample_fraction},
        {"iaa_fraction", c.he_iaa_fraction},
        {"system_a", c.system_a},
        {"system_b", c.system_b},
        {"predictions_a", c.predictions_a},
        {"predictions_b", c.predictions_b},
        {"key_path", c.key_path},
        {"annotations", c.annotations}}},
      {"dump_prompts", c.dump_prompts},
  };
}

RunConfig config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigInvalid("config must be a JSON object");
  static const std::set<std::string> known = {
      "run_dir",     "train_tsv",      "test_tsv",    "contexts_dir", "subsets",     "gold_rule",
      "dev_fraction", "seed",          "template",    "model_id",     "temperature", "samples",
      "demo_count",  "describe_tables", "threshold",  "refine_retries", "strategy",  "provider",
      "parallelism", "max_attempts",   "backoff_ms",  "cache_dir",    "budget_cap_usd", "prices",
      "predictions", "humaneval",      "dump_prompts"};
  for (const auto& [k, _] : j.items())
    if (!known.contains(k)) throw ConfigInvalid("unknown config key: " + k);
  auto check_nested = [&](const char* section, const std::set<std::string>& keys) {
    if (!j.contains(section)) return;
    if (!j[section].is_object()) throw ConfigInvalid(std::string(section) + " must be an object");
    for (const auto& [k, _] : j[section].items())
      if (!keys.contains(k)) throw ConfigInvalid("unknown config key: " + std::string(section) + "." + k);
  };
  check_nested("provider", {"kind", "endpoint", "api_key_env", "mock_script"});
  check_nested("humaneval", {"sample_fraction", "iaa_fraction", "system_a", "system_b", "predictions_a",
                             "predictions_b", "key_path", "annotations"});

  try {
    auto str = [&](const char* k, std::string& dst) {
      if (j.contains(k)) dst = j[k].get<std::string>();
    };
    str("run_dir", c.run_dir);
    str("train_tsv", c.train_tsv);
    str("test_tsv", c.test_tsv);
    str("contexts_dir", c.contexts_dir);
    str("model_id", c.model_id);
    str("cache_dir", c.cache_dir);
    str("predictions", c.predictions);
    if (j.contains("subsets")) c.subsets = j["subsets"].get<std::vector<std::string>>();
    if (j.contains("gold_rule")) c.gold_rule = gold_rule_from_string(j["gold_rule"].get<std::string>());
    if (j.contains("dev_fraction")) c.dev_fraction = j["dev_fraction"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("template")) c.template_kind = prompt_kind_from_string(j["template"].get<std::string>());
    if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
    if (j.contains("samples")) c.samples = j["samples"].get<int>();
    if (j.contains("demo_count")) c.demo_count = opt_int(j, "demo_count");
    if (j.contains("describe_tables")) c.describe_tables = j["describe_tables"].get<bool>();
    if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
    if (j.contains("refine_retries")) c.refine_retries = j["refine_retries"].get<int>();
    if (j.contains("strategy")) c.strategy = strategy_from_string(j["strategy"].get<std::string>());
    if (j.contains("provider")) {
      const auto& p = j["provider"];
      c.provider.kind = p.value("kind", c.provider.kind);
      c.provider.endpoint = p.value("endpoint", c.provider.endpoint);
      c.provider.api_key_env = p.value("api_key_env", c.provider.api_key_env);
      c.provider.mock_script = p.value("mock_script", c.provider.mock_script);
    }
    if (j.contains("parallelism")) c.parallelism = j["parallelism"].get<std::size_t>();
    if (j.contains("max_attempts")) c.max_attempts = j["max_attempts"].get<int>();
    if (j.contains("backoff_ms")) c.backoff_ms = j["backoff_ms"].get<int>();
    if (j.contains("budget_cap_usd"))
      c.budget_cap_usd = j["budget_cap_usd"].is_null() ? std::nullopt
                                                       : std::optional<double>(j["budget_cap_usd"].get<double>());
    if (j.contains("prices")) {
      c.prices.clear();
      for (const auto& [m, p] : j["prices"].items())
        c.prices[m] = {p.value("prompt_usd_per_million", 0.0), p.value("output_usd_per_million", 0.0)};
    }
    if (j.contains("humaneval")) {
      const auto& h = j["humaneval"];
      c.he_sample_fraction = h.value("sample_fraction", c.he_sample_fraction);
      c.he_iaa_fraction = h.value("iaa_fraction", c.he_iaa_fraction);
      c.system_a = h.value("system_a", c.system_a);
      c.system_b = h.value("system_b", c.system_b);
      c.predictions_a = h.value("predictions_a", c.predictions_a);
      c.predictions_b = h.value("predictions_b", c.predictions_b);
      c.key_path = h.value("key_path", c.key_path);
      if (h.contains("annotations")) c.annotations = h["annotations"].get<std::vector<std::string>>();
    }
    if (j.contains("dump_prompts")) c.dump_prompts = j["dump_prompts"].get<bool>();
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("config type error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid(e.what());
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigInvalid("config is not valid JSON: " + path.string());
  return config_from_json(j);
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigInvalid(m); };
  if (c.run_dir.empty()) fail("run_dir is empty");
  if (c.subsets.empty()) fail("no subsets configured");
  if (!(c.dev_fraction > 0.0 && c.dev_fraction < 1.0)) fail("dev_fraction must be in (0, 1)");
  if (!(c.temperature >= 0.0)) fail("temperature must be >= 0");
  if (c.samples < 1) fail("samples must be >= 1");
  if (c.demo_count && *c.demo_count < 1) fail("demo_count must be >= 1");
  if (!(c.threshold > 0.0 && c.threshold <= 1.0)) fail("threshold must be in (0, 1]");
  if (c.refine_retries < 1) fail("refine_retries must be >= 1");
  if (c.parallelism < 1 || c.parallelism > 1024) fail("parallelism must be in 1..1024");
  if (c.max_attempts < 1) fail("max_attempts must be >= 1");
  if (c.backoff_ms < 0) fail("backoff_ms must be >= 0");
  if (c.budget_cap_usd && *c.budget_cap_usd < 0) fail("budget_cap_usd must be >= 0");
  if (!(c.he_sample_fraction >= 0.0 && c.he_sample_fraction <= 1.0)) fail("humaneval.sample_fraction must be in [0, 1]");
  if (!(c.he_iaa_fraction >= 0.0 && c.he_iaa_fraction <= 1.0)) fail("humaneval.iaa_fraction must be in [0, 1]");
  if (c.system_a.empty() || c.system_b.empty() || c.system_a == c.system_b)
    fail("humaneval system names must be distinct and non-empty");
  if (c.template_kind == PromptKind::RationaleRefinement || c.template_kind == PromptKind::FineTune)
    fail("template must be simple, complex or example");
  if (c.provider.kind != "http" && c.provider.kind != "mock") fail("provider.kind must be http or mock");
  if (c.provider.kind == "mock" && !fs::exists(c.provider.mock_script))
    fail("mock script not found: " + c.provider.mock_script);
  if (c.provider.kind == "http" && c.provider.endpoint.find("://") == std::string::npos)
    fail("provider.endpoint must be a URL");
  if (!fs::is_directory(c.contexts_dir)) fail("contexts_dir not found: " + c.contexts_dir);
}

std::string config_digest(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("run_dir");
  j.erase("cache_dir");
  j["humaneval"].erase("key_path");
  j.erase("dump_prompts");
  j.erase("parallelism");
  // Inputs are identified by content; the contexts are copied into the run
  // directory and hashed in the manifest.
  j.erase("contexts_dir");
  auto by_content = [](json& field) {
    const auto p = field.get<std::string>();
    if (!p.empty() && fs::is_regular_file(p)) field = "sha256:" + file_sha256(p);
  };
  by_content(j["train_tsv"]);
  by_content(j["test_tsv"]);
  by_content(j["predictions"]);
  by_content(j["provider"]["mock_script"]);
  by_content(j["humaneval"]["predictions_a"]);
  by_content(j["humaneval"]["predictions_b"]);
  for (auto& a : j["humaneval"]["annotations"]) by_content(a);
  return text::sha256_hex(j.dump());
}

std::string file_sha256(const fs::path& path) { return text::sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Predictions files

std::string format_prediction_line(std::int64_t answer_id, std::string_view t) {
  std::string flat(t);
  for (char& ch : flat)
    if (ch == '\n' || ch == '\r' || ch == '\t') ch = ' ';
  return std::to_string(answer_id) + "\t" + flat + "\n";
}

std::map<std::int64_t, std::string> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("evaluate", path.string());
  std::map<std::int64_t, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw MalformedRow(n, "prediction line needs answer_id<TAB>text");
    std::int64_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoll(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw MalformedRow(n, "answer id is not an integer");
    }
    if (!out.emplace(id, line.substr(tab + 1)).second) throw MalformedRow(n, "duplicate answer id");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(RunConfig cfg, std::shared_ptr<ChatProvider> provider)
    : cfg_(std::move(cfg)), provider_(std::move(provider)) {
  validate(cfg_);
  fs::create_directories(cfg_.run_path());
  write_atomic(path("config.json"), to_json(cfg_).dump(2) + "\n");
}

Gateway& Pipeline::gateway() {
  if (gateway_) return *gateway_;
  if (!provider_) {
    if (cfg_.provider.kind == "mock") {
      provider_ = MockChatProvider::from_file(cfg_.provider.mock_script);
    } else {
      provider_ = std::make_shared<HttpChatProvider>(cfg_.provider.endpoint, cfg_.provider.api_key_env);
    }
  }
  GatewayOptions opts;
  opts.parallelism = cfg_.parallelism;
  opts.max_attempts = cfg_.max_attempts;
  opts.backoff_base = std::chrono::milliseconds(cfg_.backoff_ms);
  opts.cache_dir = cfg_.cache_path();
  opts.budget_cap_usd = cfg_.budget_cap_usd;
  opts.prices = cfg_.prices;
  gateway_ = std::make_unique<Gateway>(provider_, std::move(opts));
  if (fs::exists(path("ledger.json"))) {
    auto snap = json::parse(read_file(path("ledger.json")), nullptr, false);
    if (!snap.is_discarded()) gateway_->ledger().restore(snap);
  }
  return *gateway_;
}

fs::path Pipeline::path(const std::string& rel) const { return cfg_.run_path() / rel; }

fs::path Pipeline::require(Stage stage, const std::string& rel) const {
  auto p = path(rel);
  if (!fs::exists(p)) throw MissingArtifact(std::string(to_string(stage)), p.string());
  return p;
}

void Pipeline::put(StageResult& res, const std::string& rel, const std::string& content) {
  write_atomic(path(rel), content);
  res.artifacts[rel] = text::sha256_hex(content);
}

std::vector<AnswerRecord> Pipeline::load_records(Stage stage) const {
  std::vector<AnswerRecord> out;
  for (const auto& j : read_jsonl(require(stage, "records.jsonl"))) out.push_back(answer_record_from_json(j));
  return out;
}

std::map<std::string, AssessmentContext> Pipeline::load_contexts(Stage stage) const {
  std::map<std::string, AssessmentContext> out;
  for (const auto& s : cfg_.subsets)
    out.emplace(s, load_assessment_context_file(require(stage, "contexts/" + ctx_file(s)).string(), s));
  return out;
}

std::map<std::int64_t, GenerationRecord> Pipeline::first_pass(Stage stage) const {
  std::map<std::int64_t, GenerationRecord> out;
  for (const auto& j : read_jsonl(require(stage, "generations.jsonl"))) {
    auto g = generation_from_json(j);
    if (g.sample_index == 0) out.emplace(g.answer_id, std::move(g));
  }
  return out;
}

void Pipeline::persist_ledger() {
  if (gateway_) write_atomic(path("ledger.json"), gateway_->ledger().snapshot().dump(2) + "\n");
}

void Pipeline::record_manifest(const StageResult& res, const std::string& started_at) {
  json m;
  if (fs::exists(path("manifest.json"))) {
    m = json::parse(read_file(path("manifest.json")), nullptr, false);
    if (m.is_discarded()) m = json::object();
  }
  if (!m.contains("stages")) m["stages"] = json::array();
  if (!m.contains("artifacts")) m["artifacts"] = json::object();
  m["config_digest"] = config_digest(cfg_);
  json entry{{"stage", to_string(res.stage)},
             {"started_at", started_at},
             {"finished_at", now_utc()},
             {"config_digest", config_digest(cfg_)},
             {"artifacts", res.artifacts},
             {"notes", res.notes}};
  m["stages"].push_back(entry);
  for (const auto& [rel, digest] : res.artifacts) m["artifacts"][rel] = digest;
  if (fs::exists(path("ledger.json"))) m["ledger"] = json::parse(read_file(path("ledger.json")), nullptr, false);
  write_atomic(path("manifest.json"), m.dump(2) + "\n");
}

StageResult Pipeline::run(Stage stage) {
  const auto started = now_utc();
  StageResult res;
  switch (stage) {
    case Stage::Ingest:
      res = ingest();
      break;
    case Stage::Generate:
      res = generate();
      break;
    case Stage::Audit:
      res = audit();
      break;
    case Stage::Refine:
      res = refine();
      break;
    case Stage::Compose:
      res = compose();
      break;
    case Stage::ExportFinetune:
      res = export_finetune();
      break;
    case Stage::Evaluate:
      res = evaluate();
      break;
    case Stage::HumanevalExport:
      res = humaneval_export();
      break;
    case Stage::HumanevalImport:
      res = humaneval_import();
      break;
    case Stage::Report:
      res = report();
      break;
  }
  res.stage = stage;
  persist_ledger();
  record_manifest(res, started);
  return res;
}

StageResult run_stage(Stage stage, const RunConfig& cfg) { return Pipeline(cfg).run(stage); }

// ---------------------------------------------------------------------------
// Stages

StageResult Pipeline::ingest() {
  StageResult res;
  if (cfg_.train_tsv.empty()) throw ConfigInvalid("train_tsv is not set");
  if (!fs::exists(cfg_.train_tsv)) throw MissingArtifact("ingest", cfg_.train_tsv);

  IngestOptions opts;
  opts.subset_filter = {cfg_.subsets.begin(), cfg_.subsets.end()};
  opts.gold_rule = cfg_.gold_rule;
  std::ifstream train_in(cfg_.train_tsv);
  auto pool = ingest_dataset(train_in, opts);
  auto split = split_train_dev(pool, cfg_.dev_fraction, cfg_.seed);

  std::map<std::pair<std::string, std::int64_t>, Split> assigned;
  for (const auto& r : split.dev) assigned[{r.subset, r.id}] = Split::Dev;
  for (auto& r : pool) {
    auto it = assigned.find({r.subset, r.id});
    r.split = it == assigned.end() ? Split::Train : Split::Dev;
  }

  std::vector<AnswerRecord> records = std::move(pool);
  if (!cfg_.test_tsv.empty()) {
    if (!fs::exists(cfg_.test_tsv)) throw MissingArtifact("ingest", cfg_.test_tsv);
    std::ifstream test_in(cfg_.test_tsv);
    auto test_opts = opts;
    test_opts.assign_split = Split::Test;
    auto test = ingest_dataset(test_in, test_opts);
    records.insert(records.end(), test.begin(), test.end());
  }

  json stats = json::object();
  for (const auto& s : cfg_.subsets) stats[s] = {{"train", 0}, {"dev", 0}, {"test", 0}, {"degenerate", 0}};
  for (const auto& r : records) {
    auto& st = stats[r.subset];
    st[std::string(to_string(r.split))] = st[std::string(to_string(r.split))].get<int>() + 1;
    if (r.degenerate) st["degenerate"] = st["degenerate"].get<int>() + 1;
  }

  for (const auto& s : cfg_.subsets) {
    const auto src = fs::path(cfg_.contexts_dir) / ctx_file(s);
    if (!fs::exists(src)) throw MissingArtifact("ingest", src.string());
    auto ctx = load_assessment_context_file(src.string(), s);
    std::vector<AnswerRecord> mine;
    for (const auto& r : records)
      if (r.subset == s) mine.push_back(r);
    check_gold_in_range(mine, ctx);
    if (ctx.table && !ctx.table->empty() && !ctx.table->verified && cfg_.describe_tables) {
      ctx.table = describe_table(*ctx.table, gateway(), {cfg_.model_id, 0.0});
      if (!ctx.table->verified) res.notes.push_back("subset " + s + " table not verified: " + ctx.table->diagnostic);
    }
    put(res, "contexts/" + ctx_file(s), write_bundle(ctx));
  }

  put(res, "records.jsonl", to_jsonl(records, [](const AnswerRecord& r) { return to_json(r); }));
  put(res, "split_stats.json", stats.dump(2) + "\n");
  return res;
}

StageResult Pipeline::generate() {
  StageResult res;
  const auto records = load_records(Stage::Generate);
  auto contexts = load_contexts(Stage::Generate);
  if (cfg_.demo_count)
    for (auto& [s, ctx] : contexts) ctx = with_demonstrations(ctx, *cfg_.demo_count);

  std::vector<RenderedPrompt> prompts;
  prompts.reserve(records.size());
  for (const auto& r : records) prompts.push_back(render_prompt(cfg_.template_kind, contexts.at(r.subset), r));

  if (cfg_.dump_prompts) {
    std::string out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& p = prompts[i];
      out += json{{"answer_id", p.answer_id},
                  {"subset", p.subset},
                  {"split", to_string(records[i].split)},
                  {"template", to_string(p.kind)},
                  {"demo_count", p.demo_count},
                  {"char_length", p.char_length},
                  {"text", p.text}}
                 .dump();
      out += '\n';
    }
    put(res, "prompts.jsonl", out);
    res.notes.push_back("prompts dumped, no provider calls");
    return res;
  }

  auto& gw = gateway();
  std::vector<std::vector<GenerationRecord>> per_answer(records.size());
  parallel_for(records.size(), cfg_.parallelism, [&](std::size_t i) {
    const auto& r = records[i];
    const auto& ctx = contexts.at(r.subset);
    auto req = CompletionRequest::user_prompt(cfg_.model_id, prompts[i].text, cfg_.temperature);
    std::vector<SampleOutcome> outcomes;
    try {
      outcomes = gw.sample_completions(req, cfg_.samples);
    } catch (const AllSamplesFailed& e) {
      for (int k = 0; k < cfg_.samples; ++k) outcomes.push_back({k, std::nullopt, e.what()});
    }
    for (const auto& o : outcomes) {
      GenerationRecord g;
      g.answer_id = r.id;
      g.subset = r.subset;
      g.kind = cfg_.template_kind;
      g.sample_index = o.sample_index;
      if (!o.result) {
        g.error = o.error;
      } else {
        g.raw_text = o.result->text;
        g.usage = o.result->usage;
        if (g.raw_text.empty()) {
          g.error = o.result->diagnostic;
        } else {
          auto parsed = parse_any(g.raw_text, ctx.score_range, cfg_.template_kind);
          g.parsed = parsed.scored;
          g.verdict = parsed.verdict;
          g.error = parsed.error;
          if (g.parsed && g.verdict.category == HallucinationCategory::None)
            g.verdict = detect_hallucination(*g.parsed, ctx, r);
        }
      }
      per_answer[i].push_back(std::move(g));
    }
  });

  std::string gens;
  std::string teacher;
  const Split scored = eval_split(records);
  json stats = json::object();
  std::size_t failed_answers = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    bool any_text = false;
    for (const auto& g : per_answer[i]) {
      gens += to_json(g).dump() + "\n";
      auto& st = stats[g.subset];
      bump(st["samples"]);
      bump(st[g.parsed ? "parsed" : "unparsed"]);
      bump(st["verdicts"][std::string(to_string(g.verdict.category))]);
      any_text = any_text || !g.raw_text.empty();
    }
    if (!any_text) ++failed_answers;
    if (records[i].split == scored && !per_answer[i].empty())
      teacher += format_prediction_line(records[i].id, per_answer[i].front().raw_text);
  }
  if (!records.empty() && failed_answers == records.size())
    throw AllSamplesFailed("every answer failed to generate");
  if (failed_answers) res.notes.push_back(std::to_string(failed_answers) + " answers produced no output");

  put(res, "generations.jsonl", gens);
  put(res, "generation_stats.json", stats.dump(2) + "\n");
  put(res, "teacher_predictions.tsv", teacher);
  return res;
}

StageResult Pipeline::audit() {
  StageResult res;
  const auto records = load_records(Stage::Audit);
  std::map<std::int64_t, std::vector<ScoredRationale>> samples;
  for (const auto& j : read_jsonl(require(Stage::Audit, "generations.jsonl"))) {
    auto g = generation_from_json(j);
    auto& v = samples[g.answer_id];
    if (g.parsed) v.push_back(*g.parsed);
  }

  std::vector<AnswerRecord> pool, estimable;
  std::vector<ConfidenceEstimate> estimates;
  for (const auto& r : records) {
    if (r.split == Split::Test) continue;
    pool.push_back(r);
    auto it = samples.find(r.id);
    if (it == samples.end() || it->second.empty()) continue;
    estimates.push_back(estimate_score_confidence(r.id, it->second));
    estimable.push_back(r);
  }
  const auto verdicts = audit_gold_labels(estimates, estimable, cfg_.threshold);
  std::map<std::int64_t, const AuditVerdict*> by_id;
  for (const auto& v : verdicts) by_id[v.answer_id] = &v;

  std::string audit_out;
  std::size_t flagged = 0;
  for (const auto& r : pool) {
    AuditVerdict v;
    if (auto it = by_id.find(r.id); it != by_id.end()) {
      v = *it->second;
    } else {
      v.answer_id = r.id;
      v.original_gold = r.gold;
      v.reason = "no parsed samples";
    }
    flagged += v.flagged ? 1 : 0;
    audit_out += to_json(v).dump() + "\n";
  }
  put(res, "confidence.jsonl", to_jsonl(estimates, [](const ConfidenceEstimate& e) { return to_json(e); }));
  put(res, "audit.jsonl", audit_out);
  res.notes.push_back(std::to_string(flagged) + " labels flagged at threshold " + std::to_string(cfg_.threshold));
  return res;
}

namespace {

std::map<std::int64_t, AuditVerdict> load_audits(const fs::path& p) {
  std::map<std::int64_t, AuditVerdict> out;
  for (const auto& j : read_jsonl(p)) {
    auto v = audit_from_json(j);
    out.emplace(v.answer_id, std::move(v));
  }
  return out;
}

}  // namespace

StageResult Pipeline::refine() {
  StageResult res;
  const auto records = load_records(Stage::Refine);
  const auto contexts = load_contexts(Stage::Refine);
  const auto fp = first_pass(Stage::Refine);
  const auto audits = load_audits(require(Stage::Refine, "audit.jsonl"));

  std::vector<AnswerRecord> pool;
  for (const auto& r : records)
    if (r.split != Split::Test) pool.push_back(r);
  const auto targets = refinement_targets(pool, fp, audits);

  auto& gw = gateway();
  const RefineOptions opts{cfg_.refine_retries, cfg_.model_id, cfg_.temperature};
  std::vector<std::optional<ScoredRationale>> results(targets.size());
  parallel_for(targets.size(), cfg_.parallelism, [&](std::size_t i) {
    const auto& t = targets[i];
    results[i] = refine_rationale(*t.record, contexts.at(t.record->subset), t.gold, gw, opts);
  });

  std::string out;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ok += results[i] ? 1 : 0;
    out += json{{"answer_id", targets[i].record->id},
                {"subset", targets[i].record->subset},
                {"conditioned_on", targets[i].gold},
                {"refined", results[i] ? to_json(*results[i]) : json(nullptr)}}
               .dump() +
           "\n";
  }
  put(res, "refinements.jsonl", out);
  res.notes.push_back(std::to_string(ok) + " of " + std::to_string(targets.size()) + " refinements agreed");
  return res;
}

StageResult Pipeline::compose() {
  StageResult res;
  const auto records = load_records(Stage::Compose);
  const auto contexts = load_contexts(Stage::Compose);
  const auto fp = first_pass(Stage::Compose);
  const bool fix = cfg_.strategy == Strategy::FixedLabels || cfg_.strategy == Strategy::Full;
  const bool refine = cfg_.strategy == Strategy::Refined || cfg_.strategy == Strategy::Full;

  std::map<std::int64_t, AuditVerdict> audits;
  if (fix) audits = load_audits(require(Stage::Compose, "audit.jsonl"));
  std::map<std::int64_t, std::vector<ScoredRationale>> refinements;
  if (refine) {
    for (const auto& j : read_jsonl(require(Stage::Compose, "refinements.jsonl")))
      if (!j["refined"].is_null())
        refinements[j["answer_id"].get<std::int64_t>()].push_back(scored_rationale_from_json(j["refined"]));
  }

  std::vector<AnswerRecord> train, dev;
  for (const auto& r : records) {
    if (r.split == Split::Train) train.push_back(r);
    if (r.split == Split::Dev) dev.push_back(r);
  }
  const auto train_set = compose_training_set(train, contexts, fp, audits, refinements, cfg_.strategy);
  const auto dev_set = compose_training_set(dev, contexts, fp, audits, refinements, cfg_.strategy);

  json stats = json::object();
  stats["strategy"] = to_string(cfg_.strategy);
  for (const auto& r : train) {
    bump(stats["subsets"][r.subset]["pool"]);
  }
  for (const auto& t : train_set) {
    auto& st = stats["subsets"][t.subset];
    bump(st["kept"]);
    bump(st["provenance"][std::string(to_string(t.provenance))]);
  }
  auto line = [](const TrainingExample& t) { return to_json(t); };
  put(res, "training_set.jsonl", to_jsonl(train_set, line));
  put(res, "dev_set.jsonl", to_jsonl(dev_set, line));
  put(res, "training_stats.json", stats.dump(2) + "\n");
  res.notes.push_back(std::to_string(train_set.size()) + " training examples (" + std::string(to_string(cfg_.strategy)) + ")");
  return res;
}

StageResult Pipeline::export_finetune() {
  StageResult res;
  const auto records = load_records(Stage::ExportFinetune);
  const auto contexts = load_contexts(Stage::ExportFinetune);
  auto worker_line = [](const json& j) {
    return json{{"input", j.at("input")},
                {"target", j.at("target")},
                {"provenance", j.at("provenance")},
                {"answer_id", j.at("answer_id")}};
  };
  for (const auto& [src, dst] : {std::pair{"training_set.jsonl", "finetune/train.jsonl"},
                                 std::pair{"dev_set.jsonl", "finetune/dev.jsonl"}}) {
    std::string out;
    for (const auto& j : read_jsonl(require(Stage::ExportFinetune, src))) out += worker_line(j).dump() + "\n";
    put(res, dst, out);
  }
  const Split scored = eval_split(records);
  std::string test;
  for (const auto& r : records) {
    if (r.split != scored) continue;
    test += json{{"input", render_prompt(PromptKind::FineTune, contexts.at(r.subset), r).text},
                 {"answer_id", r.id},
                 {"subset", r.subset},
                 {"gold", r.gold}}
                .dump() +
            "\n";
  }
  put(res, "finetune/test.jsonl", test);
  return res;
}

StageResult Pipeline::evaluate() {
  StageResult res;
  const auto records = load_records(Stage::Evaluate);
  const auto contexts = load_contexts(Stage::Evaluate);
  const fs::path pred_path = cfg_.predictions.empty() ? path("teacher_predictions.tsv") : fs::path(cfg_.predictions);
  if (!fs::exists(pred_path)) throw MissingArtifact("evaluate", pred_path.string());
  const auto preds = read_predictions(pred_path);

  const Split scored = eval_split(records);
  std::vector<metrics::ScoredPair> pairs;
  std::size_t missing = 0;
  for (const auto& r : records) {
    if (r.split != scored) continue;
    metrics::ScoredPair p{r.subset, r.gold, std::nullopt};
    if (auto it = preds.find(r.id); it != preds.end()) {
      auto parsed = parse_any(it->second, contexts.at(r.subset).score_range, PromptKind::FineTune);
      if (parsed.scored) p.pred = parsed.scored->score;
    } else {
      ++missing;
    }
    pairs.push_back(p);
  }
  std::map<std::string, int> k;
  for (const auto& [s, ctx] : contexts) k[s] = ctx.score_range.categories();
  // Scores are shifted so that the lowest category is 0.
  for (auto& p : pairs) {
    const int lo = contexts.at(p.subset).score_range.min;
    p.gold -= lo;
    if (p.pred) *p.pred -= lo;
  }
  const auto report = metrics::build_report(pairs, k);
  auto j = metrics::to_json(report);
  j["split"] = to_string(scored);
  j["predictions_file"] = pred_path.filename().string();
  j["missing_predictions"] = missing;
  put(res, "metrics.json", j.dump(2) + "\n");
  put(res, "metrics.txt", metrics::format_table(report));
  if (missing) res.notes.push_back(std::to_string(missing) + " answers had no prediction line");
  return res;
}

StageResult Pipeline::humaneval_export() {
  StageResult res;
  const auto records = load_records(Stage::HumanevalExport);
  const auto contexts = load_contexts(Stage::HumanevalExport);
  for (const auto& p : {cfg_.predictions_a, cfg_.predictions_b})
    if (p.empty() || !fs::exists(p)) throw MissingArtifact("humaneval-export", p.empty() ? "<predictions_a/b unset>" : p);
  const auto pa = read_predictions(cfg_.predictions_a);
  const auto pb = read_predictions(cfg_.predictions_b);

  const Split scored = eval_split(records);
  humaneval::SystemPredictions a{cfg_.system_a, {}}, b{cfg_.system_b, {}};
  std::map<std::string, std::size_t> sizes;
  for (const auto& r : records) {
    if (r.split != scored) continue;
    ++sizes[r.subset];
    if (auto it = pa.find(r.id); it != pa.end()) a.items.push_back({r.id, r.subset, r.text, it->second});
    if (auto it = pb.find(r.id); it != pb.end()) b.items.push_back({r.id, r.subset, r.text, it->second});
  }
  const auto tasks =
      humaneval::sample_eval_tasks(a, b, cfg_.he_sample_fraction, cfg_.he_iaa_fraction, cfg_.seed);
  if (tasks.empty()) throw ConfigInvalid("humaneval sampling produced no tasks");
  const auto exp = humaneval::export_tasks(tasks, contexts, path("humaneval"), cfg_.key_file());
  res.artifacts["humaneval/correctness.jsonl"] = file_sha256(exp.correctness);
  res.artifacts["humaneval/preference.jsonl"] = file_sha256(exp.preference);

  const auto plan = humaneval::planned_counts(sizes, cfg_.he_sample_fraction, cfg_.he_iaa_fraction);
  json pj{{"sampled", plan.sampled},
          {"duplicates", plan.duplicates},
          {"total_sampled", plan.total_sampled},
          {"total_duplicates", plan.total_duplicates},
          {"tasks", tasks.size()},
          {"correctness_items", exp.correctness_items},
          {"preference_items", exp.preference_items}};
  put(res, "humaneval/plan.json", pj.dump(2) + "\n");
  res.notes.push_back("sealed key written to " + exp.key.string());
  return res;
}

StageResult Pipeline::humaneval_import() {
  StageResult res;
  if (cfg_.annotations.empty()) throw ConfigInvalid("no annotation files given");
  const auto key_path = cfg_.key_file();
  if (!fs::exists(key_path)) throw MissingArtifact("humaneval-import", key_path.string());
  auto key = json::parse(read_file(key_path), nullptr, false);
  if (key.is_discarded()) throw MissingKey("key file is not valid JSON: " + key_path.string());

  std::vector<json> lines;
  for (const auto& f : cfg_.annotations) {
    if (!fs::exists(f)) throw MissingArtifact("humaneval-import", f);
    auto more = humaneval::read_jsonl(f);
    lines.insert(lines.end(), more.begin(), more.end());
  }
  const auto records = humaneval::import_annotations(lines, key);
  const auto report = humaneval::compute_reports(records, {cfg_.system_a, cfg_.system_b});

  std::string unblinded;
  for (const auto& a : records) {
    unblinded += json{{"task_id", a.task_id},
                      {"annotator_id", a.annotator_id},
                      {"kind", a.kind == humaneval::TaskKind::Correctness ? "correctness" : "preference"},
                      {"subset", a.subset},
                      {"answer_id", a.answer_id},
                      {"system", a.system},
                      {"key_elements_correct", a.key_elements_correct},
                      {"rubric_faithful", a.rubric_faithful},
                      {"preferred_system", a.preferred_system},
                      {"is_iaa_duplicate", a.is_iaa_duplicate},
                      {"original_task_id", a.original_task_id}}
                     .dump() +
                 "\n";
  }
  put(res, "humaneval/annotations_unblinded.jsonl", unblinded);
  put(res, "humaneval/report.json", humaneval::to_json(report).dump(2) + "\n");
  put(res, "humaneval/report.txt", humaneval::format_report(report));
  for (const auto& w : report.warnings) res.notes.push_back(w);
  return res;
}

StageResult Pipeline::report() {
  StageResult res;
  require(Stage::Report, "records.jsonl");
  std::ostringstream out;
  auto section = [&](const char* title, const std::string& rel) {
    if (!fs::exists(path(rel))) return;
    out << "== " << title << " (" << rel << ")\n" << read_file(path(rel));
    if (out.str().back() != '\n') out << '\n';
    out << '\n';
  };
  out << "config digest: " << config_digest(cfg_) << "\n\n";
  section("Split sizes", "split_stats.json");
  section("Teacher generations", "generation_stats.json");
  section("Training set", "training_stats.json");
  section("Metrics", "metrics.txt");
  section("Human evaluation", "humaneval/report.txt");
  if (fs::exists(path("audit.jsonl"))) {
    std::size_t flagged = 0, total = 0;
    for (const auto& j : read_jsonl(path("audit.jsonl"))) {
      ++total;
      flagged += j.value("flagged", false) ? 1 : 0;
    }
    out << "== Label audit\n" << flagged << " of " << total << " labels flagged\n\n";
  }
  if (fs::exists(path("ledger.json"))) {
    auto l = json::parse(read_file(path("ledger.json")), nullptr, false);
    if (!l.is_discarded()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", l.value("total_usd", 0.0));
      out << "== Cost\ntotal USD " << buf << "\n";
      for (const auto& [m, e] : l["models"].items())
        out << "  " << m << ": " << e.value("requests", 0) << " requests, " << e.value("prompt_tokens", 0)
            << " prompt tokens, " << e.value("output_tokens", 0) << " output tokens\n";
    }
  }
  put(res, "report.txt", out.str());
  return res;
}

}  // namespace aera
