#include "aera/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "aera/error.hpp"
#include "aera/llm_gateway.hpp"
#include "aera/rng.hpp"
#include "aera/text.hpp"

namespace aera {

namespace {

constexpr std::string_view kTablePlaceholder = "{{table}}";

std::optional<int> parse_int(std::string_view s) {
  auto t = text::trim(s);
  int v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int64(std::string_view s) {
  auto t = text::trim(s);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

int resolve_gold(GoldRule rule, int s1, std::optional<int> s2) {
  if (!s2) return s1;
  switch (rule) {
    case GoldRule::Score1:
      return s1;
    case GoldRule::Max:
      return std::max(s1, *s2);
    case GoldRule::Score1Tiebreak: {
      int diff = std::abs(s1 - *s2);
      if (diff <= 1) return s1;
      // Integer mean, rounded toward Score1.
      int sum = s1 + *s2;
      return s1 > *s2 ? (sum + 1) / 2 : sum / 2;
    }
  }
  return s1;
}

std::string strip_line_end(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::string strip_bom(std::string line) {
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);
  return line;
}

std::string section_key(std::string_view header) {
  std::string k = text::to_lower(text::trim(header));
  std::replace(k.begin(), k.end(), ' ', '_');
  return k;
}

std::string rtrim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::vector<std::string> split_cells(std::string_view line) {
  std::vector<std::string> cells;
  for (auto& c : text::split(line, '|')) cells.push_back(text::trim(c));
  return cells;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Unassigned:
      return "unassigned";
    case Split::Train:
      return "train";
    case Split::Dev:
      return "dev";
    case Split::Test:
      return "test";
  }
  return "unassigned";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  if (s == "unassigned") return Split::Unassigned;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

GoldRule gold_rule_from_string(std::string_view s) {
  if (s == "score1") return GoldRule::Score1;
  if (s == "max") return GoldRule::Max;
  if (s == "score1-tiebreak") return GoldRule::Score1Tiebreak;
  throw std::invalid_argument("unknown gold rule: " + std::string(s));
}

std::string_view to_string(GoldRule r) {
  switch (r) {
    case GoldRule::Score1:
      return "score1";
    case GoldRule::Max:
      return "max";
    case GoldRule::Score1Tiebreak:
      return "score1-tiebreak";
  }
  return "score1";
}

// ---------------------------------------------------------------------------

std::vector<AnswerRecord> ingest_dataset(std::istream& in, const IngestOptions& opts) {
  std::string line;
  if (!std::getline(in, line)) throw EmptyStream("input stream is empty");
  line = strip_bom(strip_line_end(line));
  const auto header = text::split(line, '\t');

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[text::to_lower(text::trim(header[i]))] = i;
  for (const char* need : {"id", "essayset", "score1", "essaytext"}) {
    if (!col.contains(need)) throw MalformedRow(1, std::string("header lacks column ") + need);
  }
  const auto c_id = col["id"], c_set = col["essayset"], c_s1 = col["score1"], c_text = col["essaytext"];
  const std::optional<std::size_t> c_s2 =
      col.contains("score2") ? std::optional<std::size_t>(col["score2"]) : std::nullopt;

  std::vector<AnswerRecord> out;
  std::map<std::string, std::set<std::int64_t>> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_line_end(line);
    if (line.empty()) continue;
    auto cells = text::split(line, '\t');
    if (cells.size() != header.size())
      throw MalformedRow(row, "expected " + std::to_string(header.size()) + " columns, got " +
                                  std::to_string(cells.size()));

    AnswerRecord r;
    auto id = parse_int64(cells[c_id]);
    if (!id) throw MalformedRow(row, "non-integer Id '" + cells[c_id] + "'");
    r.id = *id;
    r.subset = text::trim(cells[c_set]);
    if (!opts.subset_filter.empty() && !opts.subset_filter.contains(r.subset)) continue;

    auto s1 = parse_int(cells[c_s1]);
    if (!s1) throw MalformedRow(row, "non-integer Score1 '" + cells[c_s1] + "'");
    r.rater1_score = *s1;
    if (c_s2 && !text::trim(cells[*c_s2]).empty()) {
      auto s2 = parse_int(cells[*c_s2]);
      if (!s2) throw MalformedRow(row, "non-integer Score2 '" + cells[*c_s2] + "'");
      r.rater2_score = *s2;
    }
    r.gold = resolve_gold(opts.gold_rule, r.rater1_score, r.rater2_score);
    r.text = cells[c_text];
    r.degenerate = text::collapse_whitespace(r.text).empty();
    r.split = opts.assign_split;

    if (!seen[r.subset].insert(r.id).second)
      throw MalformedRow(row, "duplicate Id " + std::to_string(r.id) + " in subset " + r.subset);
    out.push_back(std::move(r));
  }
  return out;
}

void write_tsv(std::ostream& out, const std::vector<AnswerRecord>& records) {
  out << "Id\tEssaySet\tScore1\tScore2\tEssayText\n";
  for (const auto& r : records) {
    out << r.id << '\t' << r.subset << '\t' << r.rater1_score << '\t';
    if (r.rater2_score) out << *r.rater2_score;
    out << '\t' << r.text << '\n';
  }
}

SplitResult split_train_dev(const std::vector<AnswerRecord>& records, double dev_fraction,
                            std::uint64_t seed) {
  if (records.empty()) throw EmptyInput("split_train_dev: no records");
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0))
    throw std::invalid_argument("dev_fraction must lie in (0, 1)");

  std::map<std::string, std::vector<std::size_t>> by_subset;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split != Split::Unassigned)
      throw std::invalid_argument("split_train_dev: record " + std::to_string(records[i].id) +
                                  " already has a split");
    by_subset[records[i].subset].push_back(i);
  }

  std::vector<bool> is_dev(records.size(), false);
  for (auto& [subset, idx] : by_subset) {
    // Guard against 0.2 * N landing a hair below an integer.
    const auto n_dev =
        static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(idx.size()) + 1e-9));
    std::mt19937_64 gen(mix_seed(seed, subset));
    auto shuffled = idx;
    seeded_shuffle(std::span<std::size_t>(shuffled), gen);
    for (std::size_t k = 0; k < n_dev; ++k) is_dev[shuffled[k]] = true;
  }

  SplitResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    AnswerRecord r = records[i];
    r.split = is_dev[i] ? Split::Dev : Split::Train;
    (is_dev[i] ? out.dev : out.train).push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(const AnswerRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["subset"] = r.subset;
  j["text"] = r.text;
  j["rater1_score"] = r.rater1_score;
  j["rater2_score"] = r.rater2_score ? nlohmann::json(*r.rater2_score) : nlohmann::json(nullptr);
  j["gold"] = r.gold;
  j["split"] = std::string(to_string(r.split));
  j["degenerate"] = r.degenerate;
  return j;
}

AnswerRecord answer_record_from_json(const nlohmann::json& j) {
  AnswerRecord r;
  r.id = j.at("id").get<std::int64_t>();
  r.subset = j.at("subset").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.rater1_score = j.at("rater1_score").get<int>();
  if (j.contains("rater2_score") && !j["rater2_score"].is_null())
    r.rater2_score = j["rater2_score"].get<int>();
  r.gold = j.at("gold").get<int>();
  r.split = split_from_string(j.at("split").get<std::string>());
  r.degenerate = j.value("degenerate", false);
  return r;
}

// ---------------------------------------------------------------------------

std::string AssessmentContext::question_text() const {
  if (!table || table->empty()) return question;
  auto pos = question.find(kTablePlaceholder);
  if (pos == std::string::npos) return question;
  const std::string body =
      table->description ? *table->description : render_table_plain(*table);
  std::string out = question;
  out.replace(pos, kTablePlaceholder.size(), body);
  return out;
}

AssessmentContext load_assessment_context(std::string_view bundle, std::string_view subset) {
  std::map<std::string, std::vector<std::string>> sections;
  std::string current;
  std::istringstream in{std::string(bundle)};
  std::string line;
  while (std::getline(in, line)) {
    line = strip_line_end(line);
    if (!line.empty() && line[0] == '#') continue;
    auto t = text::trim(line);
    if (t.size() > 2 && t.front() == '[' && t.back() == ']' && t.find(':') == std::string::npos) {
      current = section_key(std::string_view(t).substr(1, t.size() - 2));
      sections[current];
      continue;
    }
    if (current.empty()) {
      if (!t.empty()) throw MissingSection("content before the first section: " + t);
      continue;
    }
    sections[current].push_back(rtrim(line));
  }

  auto need = [&](const std::string& name) -> std::vector<std::string>& {
    auto it = sections.find(name);
    if (it == sections.end()) throw MissingSection("bundle lacks [" + name + "] section");
    return it->second;
  };
  auto block_text = [](const std::vector<std::string>& lines) {
    std::size_t b = 0, e = lines.size();
    while (b < e && text::trim(lines[b]).empty()) ++b;
    while (e > b && text::trim(lines[e - 1]).empty()) --e;
    std::vector<std::string> kept(lines.begin() + static_cast<std::ptrdiff_t>(b),
                                  lines.begin() + static_cast<std::ptrdiff_t>(e));
    return join(kept, "\n");
  };

  AssessmentContext ctx;
  ctx.subset = std::string(subset);
  ctx.question = block_text(need("question"));
  if (ctx.question.empty()) throw MissingSection("[question] is empty");

  for (const auto& l : need("key_elements")) {
    auto t = text::trim(l);
    if (t.rfind("- ", 0) == 0) t = text::trim(std::string_view(t).substr(2));
    if (!t.empty()) ctx.key_elements.push_back(t);
  }
  if (ctx.key_elements.empty()) throw MissingSection("[key_elements] is empty");

  static const std::regex level_re(R"(^(\d+)\s+(points?)\s*:\s*(.*)$)", std::regex::icase);
  for (const auto& l : need("rubric")) {
    auto t = text::trim(l);
    if (t.empty()) continue;
    std::smatch m;
    if (std::regex_match(t, m, level_re)) {
      RubricLevel lvl;
      lvl.points = std::stoi(m[1].str());
      lvl.unit = m[2].str();
      lvl.criterion = text::trim(m[3].str());
      ctx.rubric.push_back(std::move(lvl));
    } else if (!ctx.rubric.empty()) {
      ctx.rubric.back().criterion += " " + t;
    } else {
      throw MissingSection("[rubric] line is not a score level: " + t);
    }
  }
  if (ctx.rubric.empty()) throw MissingSection("[rubric] is empty");
  for (auto& lvl : ctx.rubric) {
    auto& c = lvl.criterion;
    if (!c.empty() && (c.back() == ';' || c.back() == '.')) c.pop_back();
    c = text::trim(c);
  }

  std::set<int> points;
  for (const auto& lvl : ctx.rubric) {
    if (!points.insert(lvl.points).second)
      throw RubricGap("rubric lists " + std::to_string(lvl.points) + " points twice");
  }
  ctx.score_range = {*points.begin(), *points.rbegin()};
  if (auto it = sections.find("score_range"); it != sections.end()) {
    static const std::regex range_re(R"(^\s*(\d+)\s*(?:-|\s)\s*(\d+)\s*$)");
    std::smatch m;
    auto t = block_text(it->second);
    if (!std::regex_match(t, m, range_re)) throw MissingSection("[score_range] must be 'min-max'");
    ctx.score_range = {std::stoi(m[1].str()), std::stoi(m[2].str())};
  }
  if (ctx.score_range.min < 0 || ctx.score_range.max < ctx.score_range.min)
    throw RubricGap("invalid score range");
  for (int s = ctx.score_range.min; s <= ctx.score_range.max; ++s) {
    if (!points.contains(s)) throw RubricGap("no rubric criterion for score " + std::to_string(s));
  }

  if (auto it = sections.find("demonstrations"); it != sections.end()) {
    std::optional<Demonstration> cur;
    std::string* last_field = nullptr;
    auto flush = [&] {
      if (!cur) return;
      if (!ctx.score_range.contains(cur->score))
        throw ValueOutOfRange("demonstration score " + std::to_string(cur->score) +
                              " outside the rubric range");
      ctx.demonstrations.push_back(std::move(*cur));
      cur.reset();
      last_field = nullptr;
    };
    for (const auto& l : it->second) {
      auto t = text::trim(l);
      if (t == "---") {
        flush();
        continue;
      }
      if (t.empty()) continue;
      if (!cur) cur.emplace();
      if (text::starts_with_ci(t, "score:")) {
        auto v = parse_int(std::string_view(t).substr(6));
        if (!v) throw MissingSection("demonstration score is not an integer: " + t);
        cur->score = *v;
        last_field = nullptr;
      } else if (text::starts_with_ci(t, "answer:")) {
        cur->answer = text::trim(std::string_view(t).substr(7));
        last_field = &cur->answer;
      } else if (text::starts_with_ci(t, "rationale:")) {
        cur->rationale = text::trim(std::string_view(t).substr(10));
        last_field = &cur->rationale;
      } else if (last_field) {
        *last_field += " " + t;
      } else {
        throw MissingSection("unrecognised demonstration line: " + t);
      }
    }
    flush();
  }

  if (auto it = sections.find("table"); it != sections.end()) {
    TableSpec table;
    for (const auto& l : it->second) {
      auto t = text::trim(l);
      if (t.empty()) continue;
      if (text::starts_with_ci(t, "columns:")) {
        table.columns = split_cells(std::string_view(t).substr(8));
      } else if (text::starts_with_ci(t, "row:")) {
        table.rows.push_back(split_cells(std::string_view(t).substr(4)));
      } else if (text::starts_with_ci(t, "verified:")) {
        table.verified = text::trim(std::string_view(t).substr(9)) == "true";
      } else {
        throw MissingSection("unrecognised [table] line: " + t);
      }
    }
    for (const auto& row : table.rows) {
      if (row.size() != table.columns.size())
        throw MissingSection("[table] row has " + std::to_string(row.size()) + " cells, expected " +
                             std::to_string(table.columns.size()));
    }
    if (auto d = sections.find("table_description"); d != sections.end()) {
      auto desc = block_text(d->second);
      if (!desc.empty()) table.description = desc;
    }
    if (table.verified && !table.description) table.verified = false;
    ctx.table = std::move(table);
  }
  return ctx;
}

AssessmentContext load_assessment_context_file(const std::string& path, std::string_view subset) {
  std::ifstream f(path);
  if (!f) throw MissingSection("cannot open context bundle " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_assessment_context(ss.str(), subset);
}

std::string write_bundle(const AssessmentContext& ctx) {
  std::ostringstream out;
  out << "[question]\n" << ctx.question << "\n\n[key_elements]\n";
  for (const auto& k : ctx.key_elements) out << k << "\n";
  out << "\n[rubric]\n";
  for (std::size_t i = 0; i < ctx.rubric.size(); ++i) {
    const auto& lvl = ctx.rubric[i];
    out << lvl.points << ' ' << lvl.unit << ": " << lvl.criterion
        << (i + 1 < ctx.rubric.size() ? ";" : ".") << "\n";
  }
  out << "\n[score_range]\n" << ctx.score_range.min << '-' << ctx.score_range.max << "\n";
  if (!ctx.demonstrations.empty()) {
    out << "\n[demonstrations]\n";
    for (std::size_t i = 0; i < ctx.demonstrations.size(); ++i) {
      const auto& d = ctx.demonstrations[i];
      if (i) out << "---\n";
      out << "score: " << d.score << "\nanswer: " << d.answer << "\nrationale: " << d.rationale
          << "\n";
    }
  }
  if (ctx.table) {
    out << "\n[table]\ncolumns: " << join(ctx.table->columns, " | ") << "\n";
    for (const auto& row : ctx.table->rows) out << "row: " << join(row, " | ") << "\n";
    out << "verified: " << (ctx.table->verified ? "true" : "false") << "\n";
    if (ctx.table->description)
      out << "\n[table_description]\n" << *ctx.table->description << "\n";
  }
  return out.str();
}

void check_gold_in_range(const std::vector<AnswerRecord>& records, const AssessmentContext& ctx) {
  for (const auto& r : records) {
    if (r.subset != ctx.subset) continue;
    if (!ctx.score_range.contains(r.gold))
      throw ValueOutOfRange("record " + std::to_string(r.id) + " gold " + std::to_string(r.gold) +
                            " outside " + std::to_string(ctx.score_range.min) + "-" +
                            std::to_string(ctx.score_range.max));
  }
}

// ---------------------------------------------------------------------------

std::string render_table_plain(const TableSpec& table) {
  std::string out = "| " + join(table.columns, " | ") + " |";
  for (const auto& row : table.rows) out += "\n| " + join(row, " | ") + " |";
  return out;
}

std::optional<TableSpec> parse_pipe_table(std::string_view body) {
  static const std::regex sep_re(R"(^[\s|:\-]+$)");
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(body)};
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(strip_line_end(line));
    if (t.find('|') == std::string::npos) continue;
    if (std::regex_match(t, sep_re)) continue;
    if (t.front() == '|') t.erase(0, 1);
    if (!t.empty() && t.back() == '|') t.pop_back();
    rows.push_back(split_cells(t));
  }
  if (rows.empty()) return std::nullopt;
  TableSpec spec;
  spec.columns = std::move(rows.front());
  spec.rows.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
  return spec;
}

TableSpec describe_table(const TableSpec& table, Gateway& gateway, const DescribeOptions& opts) {
  if (table.empty() || table.rows.empty()) return table;
  if (table.verified && table.description) return table;

  TableSpec out = table;
  const std::string describe_prompt =
      "Describe the following table in plain sentences so that a reader could rebuild it "
      "exactly. Mention every column name and repeat every cell value verbatim.\n\n" +
      render_table_plain(table);
  auto described = gateway.complete_chat(
      CompletionRequest::user_prompt(opts.model_id, describe_prompt, opts.temperature));
  out.description = text::trim(described.text);
  out.verified = false;

  for (const auto& row : table.rows) {
    for (const auto& cell : row) {
      if (out.description->find(cell) == std::string::npos) {
        out.diagnostic = "description omits cell value '" + cell + "'";
        return out;
      }
    }
  }

  const std::string rebuild_prompt =
      "Rebuild the table described below as a pipe-delimited table with a header row. "
      "Output only the table.\n\n" +
      *out.description;
  auto rebuilt = gateway.complete_chat(
      CompletionRequest::user_prompt(opts.model_id, rebuild_prompt, opts.temperature));
  auto parsed = parse_pipe_table(rebuilt.text);
  if (!parsed) {
    out.diagnostic = "reconstruction contained no table";
    return out;
  }

  auto norm_row = [](const std::vector<std::string>& cells) {
    std::vector<std::string> n;
    for (const auto& c : cells) n.push_back(text::normalize_for_match(c));
    return n;
  };
  if (norm_row(parsed->columns) != norm_row(table.columns)) {
    out.diagnostic = "reconstructed header differs";
    return out;
  }
  if (parsed->rows.size() != table.rows.size()) {
    out.diagnostic = "reconstructed table has " + std::to_string(parsed->rows.size()) +
                     " rows, expected " + std::to_string(table.rows.size());
    return out;
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (norm_row(parsed->rows[i]) != norm_row(table.rows[i])) {
      out.diagnostic = "reconstructed row " + std::to_string(i + 1) + " differs";
      return out;
    }
  }
  out.verified = true;
  out.diagnostic.clear();
  return out;
}

}  // namespace aera
