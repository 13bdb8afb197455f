#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aera/error.hpp"
#include "aera/orchestrator.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kProvider = 3, kMissingArtifact = 4 };

struct Overrides {
  std::string config;
  std::optional<std::string> run_dir, train_tsv, test_tsv, contexts_dir, template_kind, strategy, mock_provider,
      model, predictions, key, system_a, system_b, predictions_a, predictions_b;
  std::vector<std::string> subsets, annotations;
  std::optional<int> samples, retries, demos;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold, budget;
  std::optional<std::size_t> parallelism;
  bool dump_prompts = false;
};

aera::RunConfig build_config(const Overrides& o) {
  aera::RunConfig c = o.config.empty() ? aera::RunConfig{} : aera::load_config(o.config);
  nlohmann::json j;
  if (o.run_dir) j["run_dir"] = *o.run_dir;
  if (o.train_tsv) j["train_tsv"] = *o.train_tsv;
  if (o.test_tsv) j["test_tsv"] = *o.test_tsv;
  if (o.contexts_dir) j["contexts_dir"] = *o.contexts_dir;
  if (o.template_kind) j["template"] = *o.template_kind;
  if (o.strategy) j["strategy"] = *o.strategy;
  if (o.model) j["model_id"] = *o.model;
  if (o.predictions) j["predictions"] = *o.predictions;
  if (!o.subsets.empty()) {
    std::vector<std::string> flat;
    for (const auto& s : o.subsets) {
      std::size_t start = 0;
      while (start <= s.size()) {
        auto comma = s.find(',', start);
        auto part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!part.empty()) flat.push_back(part);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
    j["subsets"] = flat;
  }
  if (o.samples) j["samples"] = *o.samples;
  if (o.retries) j["refine_retries"] = *o.retries;
  if (o.demos) j["demo_count"] = *o.demos;
  if (o.seed) j["seed"] = *o.seed;
  if (o.threshold) j["threshold"] = *o.threshold;
  if (o.budget) j["budget_cap_usd"] = *o.budget;
  if (o.parallelism) j["parallelism"] = *o.parallelism;
  if (o.dump_prompts) j["dump_prompts"] = true;
  if (o.mock_provider) j["provider"] = {{"kind", "mock"}, {"mock_script", *o.mock_provider}};
  nlohmann::json he = nlohmann::json::object();
  if (o.key) he["key_path"] = *o.key;
  if (o.system_a) he["system_a"] = *o.system_a;
  if (o.system_b) he["system_b"] = *o.system_b;
  if (o.predictions_a) he["predictions_a"] = *o.predictions_a;
  if (o.predictions_b) he["predictions_b"] = *o.predictions_b;
  if (!o.annotations.empty()) he["annotations"] = o.annotations;
  if (!he.empty()) j["humaneval"] = he;
  return j.empty() ? c : aera::config_from_json(j, c);
}

void print(const aera::StageResult& r) {
  std::cout << to_string(r.stage) << ": ok\n";
  for (const auto& [rel, digest] : r.artifacts) std::cout << "  " << rel << "  " << digest.substr(0, 16) << "\n";
  for (const auto& n : r.notes) std::cout << "  note: " << n << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aera: short-answer scoring rationales, label refinement and distillation data"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;

  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--run-dir", o.run_dir, "Run directory (artifacts, cache, manifest)");
  app.add_option("--train-tsv", o.train_tsv, "Training TSV (Id, EssaySet, Score1, Score2, EssayText)");
  app.add_option("--test-tsv", o.test_tsv, "Scored test TSV");
  app.add_option("--contexts-dir", o.contexts_dir, "Directory with subset_<n>.ctx bundles");
  app.add_option("--subset", o.subsets, "Subset label(s), repeatable or comma separated");
  app.add_option("--template", o.template_kind, "simple|complex|example");
  app.add_option("--samples", o.samples, "Samples per answer");
  app.add_option("--strategy", o.strategy, "correct-only|fixed-labels|refined|full");
  app.add_option("--seed", o.seed, "Seed for splits and sampling");
  app.add_option("--threshold", o.threshold, "Audit confidence threshold");
  app.add_option("--retries", o.retries, "Refinement attempts per answer");
  app.add_option("--demos", o.demos, "Number of demonstrations to embed");
  app.add_option("--model", o.model, "Teacher model id");
  app.add_option("--parallelism", o.parallelism, "Max in-flight provider requests");
  app.add_option("--budget-usd", o.budget, "Spend cap in USD");
  app.add_option("--mock-provider", o.mock_provider, "Scripted mock provider JSON")->check(CLI::ExistingFile);
  app.add_flag("--dump-prompts", o.dump_prompts, "generate: write rendered prompts only");
  app.add_option("--predictions", o.predictions, "evaluate: predictions TSV (answer_id<TAB>text)");
  app.add_option("--predictions-a", o.predictions_a, "humaneval export: first system's predictions");
  app.add_option("--predictions-b", o.predictions_b, "humaneval export: second system's predictions");
  app.add_option("--system-a", o.system_a, "Name of the first system");
  app.add_option("--system-b", o.system_b, "Name of the second system");
  app.add_option("--key", o.key, "Sealed A/B key file");
  app.add_option("--annotations", o.annotations, "humaneval import: annotation JSONL file(s)");

  std::optional<aera::Stage> stage;
  for (auto st : {aera::Stage::Ingest, aera::Stage::Generate, aera::Stage::Audit, aera::Stage::Refine,
                  aera::Stage::Compose, aera::Stage::ExportFinetune, aera::Stage::Evaluate, aera::Stage::Report}) {
    app.add_subcommand(std::string(to_string(st)), "Run the " + std::string(to_string(st)) + " stage")
        ->callback([&stage, st] { stage = st; });
  }
  auto* he = app.add_subcommand("humaneval", "Human evaluation bundles");
  he->require_subcommand(1);
  he->fallthrough();
  he->add_subcommand("export", "Sample tasks and write blind annotation files")->callback([&] {
    stage = aera::Stage::HumanevalExport;
  });
  he->add_subcommand("import", "Unblind annotations and compute the report")->callback([&] {
    stage = aera::Stage::HumanevalImport;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    auto cfg = build_config(o);
    aera::Pipeline pipeline(std::move(cfg));
    print(pipeline.run(*stage));
    return kOk;
  } catch (const aera::ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const aera::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const aera::ProviderError& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kProvider;
  } catch (const aera::BudgetExceeded& e) {
    std::cerr << "budget exceeded: " << e.what() << "\n";
    return kProvider;
  } catch (const aera::PromptTooLong& e) {
    std::cerr << "prompt too long: " << e.what() << "\n";
    return kProvider;
  } catch (const aera::AllSamplesFailed& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kProvider;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
