#include "aera/prompts.hpp"

#include <stdexcept>

#include "aera/error.hpp"

namespace aera {

namespace {

constexpr std::string_view kSimpleQuestion = "What score should this Student answer get and why?";

constexpr std::string_view kComplexInstruction =
    "Carefully read the [Question], [Key Elements], and [Rubric], then compare [Student answer] "
    "with the [Key Elements], and apply the [Rubric] to derive the student score. Please be "
    "certain to spell out your reasoning so anyone can verify them. Spell out the [Key Elements] "
    "that the [Student answer] matches, and also spell out which rule in the [Rubric] is applied.";

// Casing differs between the example template and the refinement/fine-tune
// templates; both are kept as written.
constexpr std::string_view kDemoTag = "[score and Rationale]:";
constexpr std::string_view kTargetTag = "[Score and Rationale]:";

std::string join_lines(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += items[i];
  }
  return out;
}

std::string render_rubric(const std::vector<RubricLevel>& rubric) {
  std::string out;
  for (std::size_t i = 0; i < rubric.size(); ++i) {
    const auto& lvl = rubric[i];
    if (i) out += '\n';
    out += std::to_string(lvl.points) + " " + lvl.unit + ": " + lvl.criterion;
    out += (i + 1 < rubric.size()) ? ";" : ".";
  }
  return out;
}

std::string header(const AssessmentContext& ctx) {
  return "[Question]: " + ctx.question_text() + "\n[Key Elements]: " + join_lines(ctx.key_elements) +
         "\n[Rubric]: " + render_rubric(ctx.rubric) + "\n";
}

std::string demonstrations_block(const AssessmentContext& ctx) {
  std::string out;
  for (const auto& d : ctx.demonstrations) {
    out += "[Student answer]: " + d.answer + "\n";
    out += std::string(kDemoTag) + " " + format_scored_rationale(d.score, d.rationale) + "\n";
  }
  return out;
}

}  // namespace

std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::SimpleInstruction:
      return "simple";
    case PromptKind::ComplexInstruction:
      return "complex";
    case PromptKind::ExampleInstruction:
      return "example";
    case PromptKind::RationaleRefinement:
      return "refine";
    case PromptKind::FineTune:
      return "finetune";
  }
  return "example";
}

PromptKind prompt_kind_from_string(std::string_view s) {
  if (s == "simple" || s == "SimpleInstruction") return PromptKind::SimpleInstruction;
  if (s == "complex" || s == "ComplexInstruction") return PromptKind::ComplexInstruction;
  if (s == "example" || s == "ExampleInstruction") return PromptKind::ExampleInstruction;
  if (s == "refine" || s == "RationaleRefinement") return PromptKind::RationaleRefinement;
  if (s == "finetune" || s == "FineTune") return PromptKind::FineTune;
  throw std::invalid_argument("unknown template kind: " + std::string(s));
}

std::string format_scored_rationale(int score, std::string_view rationale) {
  return std::to_string(score) + (score == 1 ? " point; " : " points; ") + std::string(rationale);
}

RenderedPrompt render_prompt(PromptKind kind, const AssessmentContext& ctx, const AnswerRecord& answer,
                             std::optional<int> gold_for_refinement) {
  RenderedPrompt p;
  p.kind = kind;
  p.subset = ctx.subset;
  p.answer_id = answer.id;

  std::string t = header(ctx);
  switch (kind) {
    case PromptKind::SimpleInstruction:
      t += "[Student answer]: " + answer.text + "\n" + std::string(kSimpleQuestion);
      break;
    case PromptKind::ComplexInstruction:
      t += "[Student answer]: " + answer.text + "\n" + std::string(kComplexInstruction);
      break;
    case PromptKind::ExampleInstruction:
      if (ctx.demonstrations.empty())
        throw MissingDemonstrations("subset " + ctx.subset + " has no demonstrations");
      t += demonstrations_block(ctx);
      t += "[Student answer]: " + answer.text + "\n" + std::string(kDemoTag);
      p.demo_count = static_cast<int>(ctx.demonstrations.size());
      break;
    case PromptKind::RationaleRefinement:
      if (!gold_for_refinement)
        throw MissingGoldScore("refinement prompt for answer " + std::to_string(answer.id) +
                               " needs a score");
      t += demonstrations_block(ctx);
      t += "[Student answer]: " + answer.text + "\n" + std::string(kTargetTag) + " " +
           std::to_string(*gold_for_refinement) + ";";
      p.demo_count = static_cast<int>(ctx.demonstrations.size());
      break;
    case PromptKind::FineTune:
      t += "[Student answer]: " + answer.text + "\n" + std::string(kTargetTag);
      break;
  }
  p.text = std::move(t);
  p.char_length = p.text.size();
  return p;
}

std::vector<Demonstration> select_demonstrations(const AssessmentContext& ctx, int count) {
  if (count <= 0 || static_cast<std::size_t>(count) > ctx.demonstrations.size())
    throw CountOutOfRange("demonstration count " + std::to_string(count) + " not in 1.." +
                          std::to_string(ctx.demonstrations.size()));
  return {ctx.demonstrations.begin(), ctx.demonstrations.begin() + count};
}

AssessmentContext with_demonstrations(const AssessmentContext& ctx, int count) {
  AssessmentContext out = ctx;
  out.demonstrations = select_demonstrations(ctx, count);
  return out;
}

}  // namespace aera
