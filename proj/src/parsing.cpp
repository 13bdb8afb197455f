#include "aera/parsing.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "aera/error.hpp"
#include "aera/text.hpp"

namespace aera {

namespace {

// Replaces a matched span with 'x' so later patterns cannot see through it.
void mask(std::string& s, std::size_t pos, std::size_t len) {
  std::fill(s.begin() + static_cast<std::ptrdiff_t>(pos),
            s.begin() + static_cast<std::ptrdiff_t>(pos + len), 'x');
}

struct Assertion {
  int value;
  std::size_t pos;
  std::string span;
};

std::string strip_punct(std::string_view s) {
  auto is_p = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == ',' || c == ';' ||
           c == ':' || c == '!' || c == '?' || c == '"' || c == '\'';
  };
  std::size_t b = 0, e = s.size();
  while (b < e && is_p(s[b])) ++b;
  while (e > b && is_p(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "about", "acceptable", "across", "after", "also", "answer", "because", "before", "being",
      "could", "does", "each", "element", "elements", "from", "have", "information", "into",
      "know", "less", "make", "many", "more", "much", "need", "needed", "only", "other", "over",
      "point", "points", "response", "responses", "score", "should", "some", "student",
      "students", "than", "that", "their", "them", "then", "there", "these", "they", "this",
      "those", "used", "uses", "what", "when", "where", "which", "while", "will", "with",
      "would", "your"};
  return words;
}

std::set<std::string> content_words(std::string_view s) {
  std::set<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 4 && !stopwords().contains(cur)) out.insert(cur);
    cur.clear();
  };
  for (char c : text::to_lower(s)) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

}  // namespace

std::string_view to_string(ParsePath p) {
  return p == ParsePath::Structured ? "structured" : "freeform-salvaged";
}

std::string_view to_string(HallucinationCategory c) {
  switch (c) {
    case HallucinationCategory::None:
      return "None";
    case HallucinationCategory::IncorrectScoringScale:
      return "IncorrectScoringScale";
    case HallucinationCategory::InconsistentAssessment:
      return "InconsistentAssessment";
    case HallucinationCategory::UncertainScore:
      return "UncertainScore";
    case HallucinationCategory::FactualMistakeSuspect:
      return "FactualMistakeSuspect";
    case HallucinationCategory::VagueRationale:
      return "VagueRationale";
  }
  return "None";
}

ScoredRationale parse_scored_rationale(std::string_view input, const ScoreRange& range,
                                       PromptKind source) {
  static const std::regex clause_re(R"(^\s*(\d+)\s+points?\s*;)", std::regex::icase);
  std::string s(input);
  std::smatch m;
  if (!std::regex_search(s, m, clause_re, std::regex_constants::match_continuous))
    throw ParseFailure("no leading '<n> point(s);' clause");

  int score = 0;
  try {
    score = std::stoi(m[1].str());
  } catch (const std::out_of_range&) {
    throw ParseFailure("score does not fit an integer");
  }
  if (!range.contains(score)) throw ScoreOutOfRange(score);

  ScoredRationale sr;
  sr.score = score;
  sr.rationale = text::trim(std::string_view(s).substr(static_cast<std::size_t>(m.length(0))));
  sr.source_template = source;
  sr.parse_path = ParsePath::Structured;
  if (sr.rationale.empty()) throw ParseFailure("empty rationale");
  return sr;
}

FreeformScore extract_freeform_score(std::string_view input, const ScoreRange& range) {
  auto verdict = [](HallucinationCategory c, std::string ev) {
    return FreeformScore{std::nullopt, HallucinationVerdict{c, std::move(ev)}};
  };

  const std::string original = text::ascii_quotes(input);
  std::string s = text::to_lower(replace_all(original, "\xE2\x80\x93", "-"));

  // Score ranges such as "1-2 points" are recorded, then hidden from the other rules.
  static const std::regex range_re(R"((\d+)\s*(?:-|to)\s*(\d+)\s*points?\b)");
  std::optional<std::string> range_evidence;
  for (std::smatch m; std::regex_search(s, m, range_re);) {
    if (!range_evidence) range_evidence = m.str(0);
    mask(s, static_cast<std::size_t>(m.position(0)), static_cast<std::size_t>(m.length(0)));
  }

  // Rule 1: wrong scale. A score written in front of "out of" still counts as asserted.
  std::vector<Assertion> found;
  static const std::regex out_of_re(
      R"((?:(\d+(?:\.\d+)?)\s*(?:points?\s*)?)?out\s+of\s+(\d+)(?:\s*points?)?)");
  for (std::smatch m; std::regex_search(s, m, out_of_re);) {
    if (std::stoi(m[2].str()) != range.max)
      return verdict(HallucinationCategory::IncorrectScoringScale, m.str(0));
    if (m[1].matched && m[1].str().find('.') != std::string::npos)
      return verdict(HallucinationCategory::IncorrectScoringScale, m.str(0));
    const auto pos = static_cast<std::size_t>(m.position(0));
    if (m[1].matched) found.push_back({std::stoi(m[1].str()), pos, m.str(0)});
    mask(s, pos, static_cast<std::size_t>(m.length(0)));
  }
  static const std::regex fractional_re(R"(\d+\.\d+\s*points?\b)");
  if (std::smatch m; std::regex_search(s, m, fractional_re))
    return verdict(HallucinationCategory::IncorrectScoringScale, m.str(0));

  // Asserted scores.
  static const std::regex assert_res[] = {
      std::regex(R"(score\s*(?:of|:|=|is|would be)?\s*(\d+)\b)"),
      std::regex(R"(\b(\d+)\s+points?\b)"),
      std::regex(R"((?:receives?|awarded|earns?|gets?)\s+(?:a\s+)?(\d+)\b)"),
  };
  for (const auto& re : assert_res) {
    for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      found.push_back({std::stoi(m[1].str()), static_cast<std::size_t>(m.position(0)), m.str(0)});
    }
  }
  std::sort(found.begin(), found.end(),
            [](const Assertion& a, const Assertion& b) { return a.pos < b.pos; });
  std::set<int> distinct;
  for (const auto& a : found) distinct.insert(a.value);

  // Rule 2.
  if (distinct.size() > 1) {
    const Assertion& first = found.front();
    auto second = std::find_if(found.begin(), found.end(),
                               [&](const Assertion& a) { return a.value != first.value; });
    return verdict(HallucinationCategory::InconsistentAssessment, first.span + " ... " + second->span);
  }
  // Rule 3.
  if (range_evidence) return verdict(HallucinationCategory::UncertainScore, *range_evidence);
  // Rule 4.
  if (distinct.size() == 1) {
    int v = *distinct.begin();
    if (!range.contains(v))
      return verdict(HallucinationCategory::IncorrectScoringScale, found.front().span);
    return FreeformScore{v, {}};
  }
  return FreeformScore{std::nullopt, {}};
}

ParseOutcome parse_any(std::string_view text, const ScoreRange& range, PromptKind source) {
  ParseOutcome out;
  try {
    out.scored = parse_scored_rationale(text, range, source);
    return out;
  } catch (const ScoreOutOfRange& e) {
    out.verdict = {HallucinationCategory::IncorrectScoringScale,
                   std::to_string(e.score()) + " points"};
    out.error = e.what();
    return out;
  } catch (const ParseFailure& e) {
    out.error = e.what();
  }
  auto ff = extract_freeform_score(text, range);
  out.verdict = ff.verdict;
  if (ff.score) {
    ScoredRationale sr;
    sr.score = *ff.score;
    sr.rationale = text::trim(text);
    sr.source_template = source;
    sr.parse_path = ParsePath::FreeformSalvaged;
    if (!sr.rationale.empty()) {
      out.scored = std::move(sr);
      out.error.clear();
    }
  }
  return out;
}

std::vector<std::string> quoted_spans(std::string_view rationale) {
  static constexpr std::string_view kLeftSingle = "\xE2\x80\x98";
  static constexpr std::string_view kRightSingle = "\xE2\x80\x99";

  std::string s(rationale);
  s = replace_all(s, "\xE2\x80\x9C", "\"");
  s = replace_all(s, "\xE2\x80\x9D", "\"");
  s = replace_all(s, "\xE2\x80\x9E", "\"");
  s = replace_all(s, "\xE2\x80\x9A", "");
  s = replace_all(s, "\xE2\x80\xA6", "...");

  std::vector<std::string> spans;
  // Typographic single quotes: the closing mark must not be an apostrophe inside a word.
  for (std::size_t open = s.find(kLeftSingle); open != std::string::npos;
       open = s.find(kLeftSingle, open)) {
    std::size_t from = open + kLeftSingle.size();
    std::size_t close = s.find(kRightSingle, from);
    while (close != std::string::npos) {
      std::size_t after = close + kRightSingle.size();
      if (after >= s.size() || !std::isalpha(static_cast<unsigned char>(s[after]))) break;
      close = s.find(kRightSingle, after);
    }
    if (close == std::string::npos) break;
    spans.push_back(text::ascii_quotes(s.substr(from, close - from)));
    s.replace(open, close + kRightSingle.size() - open, " ");
  }
  for (std::size_t open = s.find('"'); open != std::string::npos; open = s.find('"', open)) {
    std::size_t close = s.find('"', open + 1);
    if (close == std::string::npos) break;
    spans.push_back(text::ascii_quotes(s.substr(open + 1, close - open - 1)));
    open = close + 1;
  }
  return spans;
}

HallucinationVerdict detect_hallucination(const ScoredRationale& sr, const AssessmentContext& ctx,
                                          const AnswerRecord& answer) {
  const auto spans = quoted_spans(sr.rationale);
  const std::string haystack = text::normalize_for_match(replace_all(answer.text, "\xE2\x80\xA6", "..."));

  for (const auto& span : spans) {
    std::size_t start = 0;
    while (start <= span.size()) {
      auto dots = span.find("...", start);
      auto frag = strip_punct(text::normalize_for_match(
          std::string_view(span).substr(start, dots == std::string::npos ? std::string::npos : dots - start)));
      if (!frag.empty() && haystack.find(frag) == std::string::npos)
        return {HallucinationCategory::FactualMistakeSuspect, span};
      if (dots == std::string::npos) break;
      start = dots + 3;
    }
  }
  if (!spans.empty()) return {};

  // A minimum-score rationale legitimately names nothing.
  if (sr.score == ctx.score_range.min) return {};

  const auto said = content_words(sr.rationale);
  for (const auto& ke : ctx.key_elements) {
    const auto words = content_words(ke);
    std::size_t hits = 0;
    for (const auto& w : words) hits += said.contains(w) ? 1 : 0;
    if (hits >= 2 || (words.size() == 1 && hits == 1)) return {};
  }
  return {HallucinationCategory::VagueRationale, text::trim(sr.rationale)};
}

}  // namespace aera
