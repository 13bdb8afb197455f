#include "aera/refine.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "aera/error.hpp"
#include "aera/text.hpp"

namespace aera {

nlohmann::json to_json(const ScoredRationale& s) {
  return {{"score", s.score},
          {"rationale", s.rationale},
          {"source_template", to_string(s.source_template)},
          {"parse_path", to_string(s.parse_path)}};
}

ScoredRationale scored_rationale_from_json(const nlohmann::json& j) {
  ScoredRationale s;
  s.score = j.at("score").get<int>();
  s.rationale = j.at("rationale").get<std::string>();
  s.source_template = prompt_kind_from_string(j.value("source_template", std::string("example")));
  s.parse_path = j.value("parse_path", std::string("structured")) == "structured" ? ParsePath::Structured
                                                                                   : ParsePath::FreeformSalvaged;
  return s;
}

namespace {

HallucinationCategory category_from_string(std::string_view s) {
  for (auto c : {HallucinationCategory::None, HallucinationCategory::IncorrectScoringScale,
                 HallucinationCategory::InconsistentAssessment, HallucinationCategory::UncertainScore,
                 HallucinationCategory::FactualMistakeSuspect, HallucinationCategory::VagueRationale})
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown hallucination category: " + std::string(s));
}

}  // namespace

nlohmann::json to_json(const GenerationRecord& g) {
  nlohmann::json j{{"answer_id", g.answer_id},
                   {"subset", g.subset},
                   {"template", to_string(g.kind)},
                   {"sample_index", g.sample_index},
                   {"raw_text", g.raw_text},
                   {"verdict", {{"category", to_string(g.verdict.category)}, {"evidence", g.verdict.evidence}}},
                   {"usage", {{"prompt_tokens", g.usage.prompt_tokens}, {"output_tokens", g.usage.output_tokens}}},
                   {"error", g.error}};
  j["parsed"] = g.parsed ? to_json(*g.parsed) : nlohmann::json(nullptr);
  return j;
}

GenerationRecord generation_from_json(const nlohmann::json& j) {
  GenerationRecord g;
  g.answer_id = j.at("answer_id").get<std::int64_t>();
  g.subset = j.at("subset").get<std::string>();
  g.kind = prompt_kind_from_string(j.at("template").get<std::string>());
  g.sample_index = j.at("sample_index").get<int>();
  g.raw_text = j.value("raw_text", std::string());
  if (j.contains("parsed") && !j["parsed"].is_null()) g.parsed = scored_rationale_from_json(j["parsed"]);
  if (j.contains("verdict")) {
    g.verdict.category = category_from_string(j["verdict"].value("category", std::string("None")));
    g.verdict.evidence = j["verdict"].value("evidence", std::string());
  }
  if (j.contains("usage")) {
    g.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
    g.usage.output_tokens = j["usage"].value("output_tokens", std::int64_t{0});
  }
  g.error = j.value("error", std::string());
  return g;
}

// ---------------------------------------------------------------------------

ConfidenceEstimate estimate_score_confidence(std::int64_t answer_id, std::span<const ScoredRationale> samples) {
  if (samples.empty()) throw EmptySamples("no parsed samples for answer " + std::to_string(answer_id));
  std::map<int, int> counts;
  for (const auto& s : samples) ++counts[s.score];

  ConfidenceEstimate e;
  e.answer_id = answer_id;
  e.sample_count = static_cast<int>(samples.size());
  int best = -1;
  for (const auto& [score, count] : counts) {
    e.distribution[score] = static_cast<double>(count) / static_cast<double>(samples.size());
    // std::map iterates ascending, so strict > keeps the lower score on ties.
    if (count > best) {
      best = count;
      e.top_score = score;
    }
  }
  e.top_prob = e.distribution[e.top_score];
  return e;
}

ConfidenceEstimate estimate_score_confidence(std::span<const ScoredRationale> samples) {
  return estimate_score_confidence(0, samples);
}

nlohmann::json to_json(const ConfidenceEstimate& e) {
  nlohmann::json dist = nlohmann::json::object();
  for (const auto& [score, p] : e.distribution) dist[std::to_string(score)] = p;
  return {{"answer_id", e.answer_id},
          {"sample_count", e.sample_count},
          {"distribution", dist},
          {"top_score", e.top_score},
          {"top_prob", e.top_prob}};
}

ConfidenceEstimate confidence_from_json(const nlohmann::json& j) {
  ConfidenceEstimate e;
  e.answer_id = j.at("answer_id").get<std::int64_t>();
  e.sample_count = j.at("sample_count").get<int>();
  for (const auto& [k, v] : j.at("distribution").items()) e.distribution[std::stoi(k)] = v.get<double>();
  e.top_score = j.at("top_score").get<int>();
  e.top_prob = j.at("top_prob").get<double>();
  return e;
}

// ---------------------------------------------------------------------------

std::vector<AuditVerdict> audit_gold_labels(const std::vector<ConfidenceEstimate>& estimates,
                                            const std::vector<AnswerRecord>& records, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw std::invalid_argument("audit threshold must be in (0, 1]");
  std::map<std::int64_t, const ConfidenceEstimate*> by_id;
  for (const auto& e : estimates) by_id[e.answer_id] = &e;

  std::vector<AuditVerdict> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw MissingEstimate(r.id);
    const auto& e = *it->second;
    AuditVerdict v;
    v.answer_id = r.id;
    v.original_gold = r.gold;
    v.top_prob = e.top_prob;
    const int gap = std::abs(e.top_score - r.gold);
    if (e.top_prob >= threshold && gap > 1) {
      v.flagged = true;
      v.proposed_gold = e.top_score;
      v.reason = "confident prediction " + std::to_string(e.top_score) + " (p=" + std::to_string(e.top_prob) +
                 ") differs from gold " + std::to_string(r.gold) + " by " + std::to_string(gap);
    } else if (gap > 1) {
      v.reason = "disagreement below threshold";
    } else {
      v.reason = "consistent";
    }
    out.push_back(std::move(v));
  }
  return out;
}

nlohmann::json to_json(const AuditVerdict& v) {
  return {{"answer_id", v.answer_id},
          {"original", v.original_gold},
          {"proposed", v.proposed_gold ? nlohmann::json(*v.proposed_gold) : nlohmann::json(nullptr)},
          {"flagged", v.flagged},
          {"top_prob", v.top_prob},
          {"reason", v.reason}};
}

AuditVerdict audit_from_json(const nlohmann::json& j) {
  AuditVerdict v;
  v.answer_id = j.at("answer_id").get<std::int64_t>();
  v.original_gold = j.at("original").get<int>();
  if (!j.at("proposed").is_null()) v.proposed_gold = j["proposed"].get<int>();
  v.flagged = j.at("flagged").get<bool>();
  v.top_prob = j.value("top_prob", 0.0);
  v.reason = j.value("reason", std::string());
  return v;
}

// ---------------------------------------------------------------------------

std::optional<ScoredRationale> refine_rationale(const AnswerRecord& answer, const AssessmentContext& ctx,
                                                int gold, Gateway& gateway, const RefineOptions& opts) {
  if (!ctx.score_range.contains(gold))
    throw ValueOutOfRange("refinement score " + std::to_string(gold) + " outside subset " + ctx.subset + " range");
  const auto prompt = render_prompt(PromptKind::RationaleRefinement, ctx, answer, gold);
  auto req = CompletionRequest::user_prompt(opts.model_id, prompt.text, opts.temperature);

  for (int attempt = 0; attempt < opts.retries; ++attempt) {
    req.sample_index = attempt;
    const auto reply = gateway.complete_chat(req);
    ScoredRationale sr;
    try {
      sr = parse_scored_rationale(reply.text, ctx.score_range, PromptKind::RationaleRefinement);
    } catch (const ScoreOutOfRange&) {
      continue;
    } catch (const ParseFailure&) {
      // The prompt already ends with the score, so a bare rationale is expected.
      sr.score = gold;
      sr.rationale = text::trim(reply.text);
      sr.source_template = PromptKind::RationaleRefinement;
      sr.parse_path = ParsePath::Structured;
      if (sr.rationale.empty()) continue;
    }
    if (sr.score == gold) return sr;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::CorrectOnly:
      return "correct-only";
    case Strategy::FixedLabels:
      return "fixed-labels";
    case Strategy::Refined:
      return "refined";
    case Strategy::Full:
      return "full";
  }
  return "full";
}

Strategy strategy_from_string(std::string_view s) {
  for (auto v : {Strategy::CorrectOnly, Strategy::FixedLabels, Strategy::Refined, Strategy::Full})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown strategy: " + std::string(s));
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::CorrectOriginal:
      return "correct-original";
    case Provenance::LabelFixed:
      return "label-fixed";
    case Provenance::RationaleRefined:
      return "rationale-refined";
  }
  return "correct-original";
}

Provenance provenance_from_string(std::string_view s) {
  for (auto v : {Provenance::CorrectOriginal, Provenance::LabelFixed, Provenance::RationaleRefined})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown provenance: " + std::string(s));
}

nlohmann::json to_json(const TrainingExample& t) {
  return {{"input", t.input.text},      {"target", t.target},   {"provenance", to_string(t.provenance)},
          {"answer_id", t.answer_id},   {"subset", t.subset},   {"effective_gold", t.effective_gold}};
}

TrainingExample training_example_from_json(const nlohmann::json& j) {
  TrainingExample t;
  t.input.kind = PromptKind::FineTune;
  t.input.text = j.at("input").get<std::string>();
  t.input.char_length = t.input.text.size();
  t.target = j.at("target").get<std::string>();
  t.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  t.answer_id = j.at("answer_id").get<std::int64_t>();
  t.subset = j.value("subset", std::string());
  t.input.subset = t.subset;
  t.input.answer_id = t.answer_id;
  t.effective_gold = j.value("effective_gold", 0);
  return t;
}

int effective_gold(const AnswerRecord& r, const GenerationRecord* first_pass, const AuditVerdict* audit) {
  if (audit == nullptr || !audit->flagged || !audit->proposed_gold) return r.gold;
  const bool first_pass_correct = first_pass && first_pass->parsed && first_pass->parsed->score == r.gold;
  return first_pass_correct ? r.gold : *audit->proposed_gold;
}

namespace {

template <class Map>
const typename Map::mapped_type* find_ptr(const Map& m, std::int64_t id) {
  auto it = m.find(id);
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace

std::vector<RefinementTarget> refinement_targets(const std::vector<AnswerRecord>& records,
                                                 const std::map<std::int64_t, GenerationRecord>& first_pass,
                                                 const std::map<std::int64_t, AuditVerdict>& audits) {
  std::vector<RefinementTarget> out;
  for (const auto& r : records) {
    const auto* g = find_ptr(first_pass, r.id);
    if (g && g->parsed && g->parsed->score == r.gold) continue;
    const int eff = effective_gold(r, g, find_ptr(audits, r.id));
    out.push_back({&r, eff});
    if (eff != r.gold) out.push_back({&r, r.gold});
  }
  return out;
}

std::vector<TrainingExample> compose_training_set(
    const std::vector<AnswerRecord>& records, const std::map<std::string, AssessmentContext>& contexts,
    const std::map<std::int64_t, GenerationRecord>& first_pass,
    const std::map<std::int64_t, AuditVerdict>& audits,
    const std::map<std::int64_t, std::vector<ScoredRationale>>& refinements, Strategy strategy) {
  const bool fix = strategy == Strategy::FixedLabels || strategy == Strategy::Full;
  const bool refine = strategy == Strategy::Refined || strategy == Strategy::Full;

  std::vector<TrainingExample> out;
  for (const auto& r : records) {
    auto ctx_it = contexts.find(r.subset);
    if (ctx_it == contexts.end()) throw MissingSection("no assessment context for subset " + r.subset);
    const auto* g = find_ptr(first_pass, r.id);
    const int gold = fix ? effective_gold(r, g, find_ptr(audits, r.id)) : r.gold;

    std::optional<std::pair<std::string, Provenance>> chosen;
    if (g && g->parsed && g->parsed->score == gold) {
      chosen.emplace(g->parsed->rationale, gold == r.gold ? Provenance::CorrectOriginal : Provenance::LabelFixed);
    } else if (refine) {
      if (const auto* list = find_ptr(refinements, r.id)) {
        for (const auto& sr : *list) {
          if (sr.score == gold) {
            chosen.emplace(sr.rationale, Provenance::RationaleRefined);
            break;
          }
        }
      }
    }
    if (!chosen) continue;

    TrainingExample t;
    t.input = render_prompt(PromptKind::FineTune, ctx_it->second, r);
    t.target = format_scored_rationale(gold, chosen->first);
    t.provenance = chosen->second;
    t.answer_id = r.id;
    t.subset = r.subset;
    t.effective_gold = gold;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace aera
