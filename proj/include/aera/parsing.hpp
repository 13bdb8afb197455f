#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "aera/corpus.hpp"
#include "aera/prompts.hpp"

namespace aera {

enum class ParsePath { Structured, FreeformSalvaged };

std::string_view to_string(ParsePath p);

struct ScoredRationale {
  int score = 0;
  std::string rationale;
  PromptKind source_template = PromptKind::ExampleInstruction;
  ParsePath parse_path = ParsePath::Structured;
};

enum class HallucinationCategory {
  None,
  IncorrectScoringScale,
  InconsistentAssessment,
  UncertainScore,
  FactualMistakeSuspect,
  VagueRationale,
};

std::string_view to_string(HallucinationCategory c);

struct HallucinationVerdict {
  HallucinationCategory category = HallucinationCategory::None;
  std::string evidence;  // empty iff category == None
};

/// "<n> point(s); <rationale>". Throws ParseFailure when there is no leading
/// score clause or the rationale is empty; ScoreOutOfRange when n is outside range.
ScoredRationale parse_scored_rationale(std::string_view text, const ScoreRange& range,
                                       PromptKind source = PromptKind::ExampleInstruction);

struct FreeformScore {
  std::optional<int> score;
  HallucinationVerdict verdict;
};

/// Ordered rules for zero-shot output:
///   1. "out of <m>" with m != range.max, a fractional score, or an asserted
///      score outside the range -> IncorrectScoringScale
///   2. two distinct asserted scores -> InconsistentAssessment
///   3. "<a>-<b> points" -> UncertainScore
///   4. one asserted score in range -> that score
FreeformScore extract_freeform_score(std::string_view text, const ScoreRange& range);

/// Structured parse first, then free-form salvage. Returns nullopt when neither yields a score.
struct ParseOutcome {
  std::optional<ScoredRationale> scored;
  HallucinationVerdict verdict;
  std::string error;
};
ParseOutcome parse_any(std::string_view text, const ScoreRange& range, PromptKind source);

/// Quoted spans (straight, typographic) found in a rationale, ASCII-normalized.
std::vector<std::string> quoted_spans(std::string_view rationale);

/// FactualMistakeSuspect: a quoted span is not in the student answer.
/// VagueRationale: no quotes and no key element named. Advisory only.
HallucinationVerdict detect_hallucination(const ScoredRationale& sr, const AssessmentContext& ctx,
                                          const AnswerRecord& answer);

}  // namespace aera
