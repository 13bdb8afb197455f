#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aera/corpus.hpp"

namespace aera {

enum class PromptKind {
  SimpleInstruction,
  ComplexInstruction,
  ExampleInstruction,
  RationaleRefinement,
  FineTune,
};

std::string_view to_string(PromptKind k);
PromptKind prompt_kind_from_string(std::string_view s);  // accepts simple|complex|example|refine|finetune too

/// Zero-shot kinds produce free-form text that needs score salvage.
inline bool is_freeform(PromptKind k) {
  return k == PromptKind::SimpleInstruction || k == PromptKind::ComplexInstruction;
}

struct RenderedPrompt {
  PromptKind kind = PromptKind::ExampleInstruction;
  std::string text;
  std::string subset;
  std::int64_t answer_id = 0;
  int demo_count = 0;
  std::size_t char_length = 0;
};

/// "<n> point; " for n == 1, "<n> points; " otherwise, followed by the rationale.
std::string format_scored_rationale(int score, std::string_view rationale);

/// Render one of the five templates. Demonstrations embedded by the example
/// and refinement templates are all of ctx.demonstrations; trim them first with
/// select_demonstrations to vary M.
RenderedPrompt render_prompt(PromptKind kind, const AssessmentContext& ctx, const AnswerRecord& answer,
                             std::optional<int> gold_for_refinement = std::nullopt);

/// First `count` demonstrations in bundle order.
std::vector<Demonstration> select_demonstrations(const AssessmentContext& ctx, int count);

/// Copy of ctx keeping only the first `count` demonstrations.
AssessmentContext with_demonstrations(const AssessmentContext& ctx, int count);

}  // namespace aera
