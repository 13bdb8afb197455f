#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace aera {

class Gateway;

enum class Split { Unassigned, Train, Dev, Test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

/// How the gold label is resolved from the two ASAP rater columns.
enum class GoldRule {
  Score1,          // first rater (competition convention)
  Max,             // max of both raters
  Score1Tiebreak,  // agree -> that score; off by one -> Score1; further apart -> mean rounded toward Score1
};

GoldRule gold_rule_from_string(std::string_view s);
std::string_view to_string(GoldRule r);

struct ScoreRange {
  int min = 0;
  int max = 3;

  bool contains(int s) const noexcept { return s >= min && s <= max; }
  int categories() const noexcept { return max - min + 1; }
  friend bool operator==(const ScoreRange&, const ScoreRange&) = default;
};

struct AnswerRecord {
  std::int64_t id = 0;
  std::string subset;
  std::string text;
  int rater1_score = 0;
  std::optional<int> rater2_score;
  int gold = 0;
  Split split = Split::Unassigned;
  bool degenerate = false;

  friend bool operator==(const AnswerRecord&, const AnswerRecord&) = default;
};

struct Demonstration {
  std::string answer;
  int score = 0;
  std::string rationale;
  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

struct RubricLevel {
  int points = 0;
  std::string unit = "points";  // "point" or "points", as written in the rubric
  std::string criterion;
  friend bool operator==(const RubricLevel&, const RubricLevel&) = default;
};

struct TableSpec {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::optional<std::string> description;
  bool verified = false;
  std::string diagnostic;

  bool empty() const noexcept { return columns.empty() && rows.empty(); }
  friend bool operator==(const TableSpec&, const TableSpec&) = default;
};

struct AssessmentContext {
  std::string subset;
  std::string question;  // may contain the {{table}} placeholder
  std::vector<std::string> key_elements;
  std::vector<RubricLevel> rubric;  // bundle order, normally descending points
  std::vector<Demonstration> demonstrations;
  ScoreRange score_range;
  std::optional<TableSpec> table;

  /// Question text with the table placeholder replaced by the table's prose
  /// description (or a plain rendering when no description exists yet).
  std::string question_text() const;

  friend bool operator==(const AssessmentContext&, const AssessmentContext&) = default;
};

// ---------------------------------------------------------------------------
// Ingest / split

struct IngestOptions {
  std::set<std::string> subset_filter;  // empty = keep everything
  GoldRule gold_rule = GoldRule::Score1;
  Split assign_split = Split::Unassigned;
};

/// Parse an ASAP-SAS style TSV (Id, EssaySet, Score1, Score2, EssayText).
std::vector<AnswerRecord> ingest_dataset(std::istream& in, const IngestOptions& opts = {});

/// Inverse of ingest_dataset for well-formed records.
void write_tsv(std::ostream& out, const std::vector<AnswerRecord>& records);

struct SplitResult {
  std::vector<AnswerRecord> train;
  std::vector<AnswerRecord> dev;
};

/// Per subset: seeded shuffle, the first floor(dev_fraction * N) go to dev.
/// Both outputs keep the input order.
SplitResult split_train_dev(const std::vector<AnswerRecord>& records, double dev_fraction,
                            std::uint64_t seed);

nlohmann::json to_json(const AnswerRecord& r);
AnswerRecord answer_record_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Context bundles

/// Parse a context bundle. Sections: [question], [key_elements], [rubric],
/// optional [score_range], [demonstrations], [table], [table_description].
AssessmentContext load_assessment_context(std::string_view bundle, std::string_view subset);
AssessmentContext load_assessment_context_file(const std::string& path, std::string_view subset);

/// Serialize back to bundle text; load(write(ctx)) == ctx.
std::string write_bundle(const AssessmentContext& ctx);

/// Throws ValueOutOfRange naming the first record whose gold is outside the range.
void check_gold_in_range(const std::vector<AnswerRecord>& records, const AssessmentContext& ctx);

// ---------------------------------------------------------------------------
// Table descriptions

struct DescribeOptions {
  std::string model_id = "gpt-3.5-turbo";
  double temperature = 0.0;
};

std::string render_table_plain(const TableSpec& table);

/// Parse a pipe-delimited (markdown style) table; the first row is the header.
std::optional<TableSpec> parse_pipe_table(std::string_view text);

/// Ask the gateway for a prose description, then ask it to rebuild the table
/// from that description. verified is set only when every cell appears in the
/// description and the rebuilt table equals the original after normalization.
/// Empty tables and tables already verified are returned unchanged.
TableSpec describe_table(const TableSpec& table, Gateway& gateway, const DescribeOptions& opts = {});

}  // namespace aera
