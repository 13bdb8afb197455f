#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aera/corpus.hpp"
#include "aera/llm_gateway.hpp"
#include "aera/parsing.hpp"
#include "aera/prompts.hpp"

namespace aera {

/// One teacher output. latency and cache status are left out of the
/// serialized form so that cold and warm runs write identical files.
struct GenerationRecord {
  std::int64_t answer_id = 0;
  std::string subset;
  PromptKind kind = PromptKind::ExampleInstruction;
  int sample_index = 0;
  std::string raw_text;
  std::optional<ScoredRationale> parsed;
  HallucinationVerdict verdict;
  Usage usage;
  std::string error;  // provider failure or parse failure reason
};

nlohmann::json to_json(const GenerationRecord& g);
GenerationRecord generation_from_json(const nlohmann::json& j);

struct ConfidenceEstimate {
  std::int64_t answer_id = 0;
  int sample_count = 0;
  std::map<int, double> distribution;
  int top_score = 0;
  double top_prob = 0.0;
};

/// Samples with the same score form one group; ties on the top probability go
/// to the lower score. Throws EmptySamples.
ConfidenceEstimate estimate_score_confidence(std::int64_t answer_id, std::span<const ScoredRationale> samples);
ConfidenceEstimate estimate_score_confidence(std::span<const ScoredRationale> samples);

nlohmann::json to_json(const ConfidenceEstimate& e);
ConfidenceEstimate confidence_from_json(const nlohmann::json& j);

struct AuditVerdict {
  std::int64_t answer_id = 0;
  int original_gold = 0;
  std::optional<int> proposed_gold;
  bool flagged = false;
  double top_prob = 0.0;
  std::string reason;
};

/// flagged iff top_prob >= threshold and |top_score - gold| > 1. One verdict
/// per record, in record order. Throws MissingEstimate.
std::vector<AuditVerdict> audit_gold_labels(const std::vector<ConfidenceEstimate>& estimates,
                                            const std::vector<AnswerRecord>& records, double threshold);

nlohmann::json to_json(const AuditVerdict& v);
AuditVerdict audit_from_json(const nlohmann::json& j);

struct RefineOptions {
  int retries = 3;
  std::string model_id = "gpt-3.5-turbo";
  double temperature = 1.0;
};

/// Ask for a rationale conditioned on effective_gold. Attempt i uses sample
/// index i. A reply without a score clause inherits effective_gold; a reply
/// restating a different score is rejected. nullopt after opts.retries misses.
std::optional<ScoredRationale> refine_rationale(const AnswerRecord& answer, const AssessmentContext& ctx,
                                                int effective_gold, Gateway& gateway,
                                                const RefineOptions& opts = {});

enum class Strategy { CorrectOnly, FixedLabels, Refined, Full };
std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

enum class Provenance { CorrectOriginal, LabelFixed, RationaleRefined };
std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct TrainingExample {
  RenderedPrompt input;  // FineTune kind
  std::string target;    // "<n> points; <rationale>"
  Provenance provenance = Provenance::CorrectOriginal;
  std::int64_t answer_id = 0;
  std::string subset;
  int effective_gold = 0;
};

nlohmann::json to_json(const TrainingExample& t);
TrainingExample training_example_from_json(const nlohmann::json& j);

/// Gold label after audit. A flagged relabel is applied only when the
/// first-pass prediction disagrees with the original gold, so a correct
/// first-pass answer is never dropped by relabeling.
int effective_gold(const AnswerRecord& r, const GenerationRecord* first_pass, const AuditVerdict* audit);

struct RefinementTarget {
  const AnswerRecord* record = nullptr;
  int gold = 0;
};

/// Answers whose first pass missed: one target at the audited gold, and a
/// second at the original gold when the audit relabeled it.
std::vector<RefinementTarget> refinement_targets(const std::vector<AnswerRecord>& records,
                                                 const std::map<std::int64_t, GenerationRecord>& first_pass,
                                                 const std::map<std::int64_t, AuditVerdict>& audits);

/// Refinements hold every accepted rationale per answer; compose picks the
/// first whose score equals the strategy's gold. Output follows record order.
std::vector<TrainingExample> compose_training_set(
    const std::vector<AnswerRecord>& records, const std::map<std::string, AssessmentContext>& contexts,
    const std::map<std::int64_t, GenerationRecord>& first_pass,
    const std::map<std::int64_t, AuditVerdict>& audits,
    const std::map<std::int64_t, std::vector<ScoredRationale>>& refinements, Strategy strategy);

nlohmann::json to_json(const ScoredRationale& s);
ScoredRationale scored_rationale_from_json(const nlohmann::json& j);

}  // namespace aera
