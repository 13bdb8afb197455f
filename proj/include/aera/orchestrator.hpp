#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aera/corpus.hpp"
#include "aera/llm_gateway.hpp"
#include "aera/prompts.hpp"
#include "aera/refine.hpp"

namespace aera {

enum class Stage {
  Ingest,
  Generate,
  Audit,
  Refine,
  Compose,
  ExportFinetune,
  Evaluate,
  HumanevalExport,
  HumanevalImport,
  Report,
};

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

struct ProviderConfig {
  std::string kind = "http";  // http | mock
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env = "AERA_API_KEY";
  std::string mock_script;
};

struct RunConfig {
  std::string run_dir = "runs/default";
  std::string train_tsv;
  std::string test_tsv;  // optional; without it evaluation uses the dev split
  std::string contexts_dir = "data/contexts";
  std::vector<std::string> subsets{"1", "2", "5", "6"};
  GoldRule gold_rule = GoldRule::Score1;
  double dev_fraction = 0.2;
  std::uint64_t seed = 42;

  PromptKind template_kind = PromptKind::ExampleInstruction;
  std::string model_id = "gpt-3.5-turbo";
  double temperature = 1.0;
  int samples = 10;
  std::optional<int> demo_count;  // unset = every demonstration in the bundle
  bool describe_tables = true;

  double threshold = 0.9;
  int refine_retries = 3;
  Strategy strategy = Strategy::Full;

  ProviderConfig provider;
  std::size_t parallelism = 4;
  int max_attempts = 5;
  int backoff_ms = 500;
  std::string cache_dir;  // empty = <run_dir>/cache
  std::optional<double> budget_cap_usd;
  std::map<std::string, ModelPrice> prices;

  std::string predictions;  // evaluate input; empty = teacher predictions in the run dir

  double he_sample_fraction = 0.1;
  double he_iaa_fraction = 0.2;
  std::string system_a = "aera";
  std::string system_b = "teacher";
  std::string predictions_a;
  std::string predictions_b;
  std::string key_path;  // empty = <run_dir>/sealed/key.json
  std::vector<std::string> annotations;

  bool dump_prompts = false;

  std::filesystem::path run_path() const { return run_dir; }
  std::filesystem::path cache_path() const;
  std::filesystem::path key_file() const;
};

/// Every field is written, defaults included.
nlohmann::json to_json(const RunConfig& c);

/// Fields missing from `j` keep their defaults; unknown keys raise ConfigInvalid.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

/// Value checks plus existence of the static inputs (contexts dir, mock script).
void validate(const RunConfig& c);

/// SHA-256 of the effective config with run-location fields removed, so two
/// machines running the same experiment agree.
std::string config_digest(const RunConfig& c);

struct StageResult {
  Stage stage = Stage::Ingest;
  std::map<std::string, std::string> artifacts;  // run-dir relative path -> sha256
  std::vector<std::string> notes;
};

/// Owns one run directory. Stages read their inputs from the run directory,
/// so each can run in a separate process.
class Pipeline {
 public:
  /// provider overrides the configured one (tests inject probes this way).
  explicit Pipeline(RunConfig cfg, std::shared_ptr<ChatProvider> provider = nullptr);

  StageResult run(Stage stage);
  const RunConfig& config() const noexcept { return cfg_; }
  Gateway& gateway();

 private:
  StageResult ingest();
  StageResult generate();
  StageResult audit();
  StageResult refine();
  StageResult compose();
  StageResult export_finetune();
  StageResult evaluate();
  StageResult humaneval_export();
  StageResult humaneval_import();
  StageResult report();

  std::filesystem::path path(const std::string& rel) const;
  std::filesystem::path require(Stage stage, const std::string& rel) const;
  void put(StageResult& res, const std::string& rel, const std::string& content);
  std::vector<AnswerRecord> load_records(Stage stage) const;
  std::map<std::string, AssessmentContext> load_contexts(Stage stage) const;
  std::map<std::int64_t, GenerationRecord> first_pass(Stage stage) const;
  void record_manifest(const StageResult& res, const std::string& started_at);
  void persist_ledger();

  RunConfig cfg_;
  std::shared_ptr<ChatProvider> provider_;
  std::unique_ptr<Gateway> gateway_;
};

/// Convenience wrapper: Pipeline(cfg).run(stage).
StageResult run_stage(Stage stage, const RunConfig& cfg);

/// answer_id TAB text, one per line.
std::map<std::int64_t, std::string> read_predictions(const std::filesystem::path& path);
std::string format_prediction_line(std::int64_t answer_id, std::string_view text);

std::string file_sha256(const std::filesystem::path& path);

}  // namespace aera
