#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aera/corpus.hpp"

namespace aera::humaneval {

struct Prediction {
  std::int64_t answer_id = 0;
  std::string subset;
  std::string answer_text;
  std::string rationale;
};

struct SystemPredictions {
  std::string name;  // never written to the blind export
  std::vector<Prediction> items;
};

/// One sampled instance. It yields two correctness items (one rationale per
/// system) and one preference item.
struct EvalTask {
  std::string task_id;
  std::int64_t answer_id = 0;
  std::string subset;
  std::string answer_text;
  std::string rationale_a;
  std::string rationale_b;
  std::string system_a;  // hidden map: label A -> system
  std::string system_b;
  bool is_iaa_duplicate = false;
  std::string duplicate_of;  // original task id when is_iaa_duplicate
};

/// round(x) with halves going up.
std::size_t round_half_up(double x);

struct SampleCounts {
  std::map<std::string, std::size_t> sampled;
  std::map<std::string, std::size_t> duplicates;
  std::size_t total_sampled = 0;
  std::size_t total_duplicates = 0;
};

SampleCounts planned_counts(const std::map<std::string, std::size_t>& test_sizes, double sample_fraction,
                            double iaa_fraction);

/// Both systems must cover the same (subset, answer_id) set, else CoverageMismatch.
std::vector<EvalTask> sample_eval_tasks(const SystemPredictions& a, const SystemPredictions& b,
                                        double sample_fraction, double iaa_fraction, std::uint64_t seed);

struct ExportResult {
  std::filesystem::path correctness;
  std::filesystem::path preference;
  std::filesystem::path key;
  std::size_t correctness_items = 0;
  std::size_t preference_items = 0;
};

/// Writes correctness.jsonl and preference.jsonl into `dir` and the sealed key
/// to `key_path`. Throws std::invalid_argument on an empty task list.
ExportResult export_tasks(const std::vector<EvalTask>& tasks,
                          const std::map<std::string, AssessmentContext>& contexts,
                          const std::filesystem::path& dir, const std::filesystem::path& key_path);

nlohmann::json make_key(const std::vector<EvalTask>& tasks);

enum class TaskKind { Correctness, Preference };

struct AnnotationRecord {
  std::string task_id;  // instance task id
  std::string annotator_id;
  TaskKind kind = TaskKind::Correctness;
  std::string subset;
  std::int64_t answer_id = 0;
  // correctness
  std::string system;
  bool key_elements_correct = false;
  bool rubric_faithful = false;
  // preference: unblinded system name, empty for no preference
  std::string blind_choice;  // "A", "B" or "no-preference"
  std::string preferred_system;
  bool is_iaa_duplicate = false;
  std::string original_task_id;  // == task_id for originals
};

/// Parse blind annotation lines (flat objects, or doccano-style "label" lists)
/// and unblind them with the key. Throws UnknownTask, MissingKey.
std::vector<AnnotationRecord> import_annotations(const std::vector<nlohmann::json>& lines,
                                                 const nlohmann::json& key);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

struct CorrectnessRates {
  std::size_t n = 0;
  double key_elements = 0.0;
  double rubric = 0.0;
};

struct PreferenceShares {
  std::size_t n = 0;
  std::map<std::string, double> share;  // system name or "no-preference"
};

struct IaaPair {
  std::string original_task_id;
  std::string duplicate_task_id;
  TaskKind kind = TaskKind::Correctness;
  std::string system;  // correctness pairs only
  std::string first_annotator;
  std::string second_annotator;
  bool key_elements[2] = {false, false};
  bool rubric[2] = {false, false};
  std::string preference[2];
};

std::vector<IaaPair> link_iaa_pairs(const std::vector<AnnotationRecord>& records);

struct KappaSet {
  std::optional<double> key_elements;
  std::optional<double> rubric;
  std::optional<double> preference;
  std::size_t correctness_pairs = 0;
  std::size_t preference_pairs = 0;
};

/// Throws NoIaaPairs when there is nothing to compare.
KappaSet iaa_kappa(const std::vector<IaaPair>& pairs);

struct Report {
  std::vector<std::string> systems;
  std::map<std::string, CorrectnessRates> correctness;  // by system
  PreferenceShares preference;
  std::map<std::string, std::map<std::string, CorrectnessRates>> correctness_by_annotator;
  std::map<std::string, PreferenceShares> preference_by_annotator;
  std::map<std::string, std::map<std::string, CorrectnessRates>> correctness_by_subset;
  std::map<std::string, PreferenceShares> preference_by_subset;
  KappaSet kappa;
  std::vector<std::string> warnings;
};

/// Throws std::invalid_argument on empty input. Missing IAA pairs become a warning.
Report compute_reports(const std::vector<AnnotationRecord>& records, const std::vector<std::string>& systems);

nlohmann::json to_json(const Report& r);
std::string format_report(const Report& r);

}  // namespace aera::humaneval
