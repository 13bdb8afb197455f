#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "aera/corpus.hpp"

namespace aera::fixtures {

/// Directory holding the shipped context bundles (set by CMake).
std::filesystem::path contexts_dir();
std::map<std::string, AssessmentContext> shipped_contexts();

/// ASAP-SAS shaped TSV with `counts[subset]` rows per subset. Scores are
/// drawn from 0..3; every answer text is unique so mock rules can key on it.
std::string synthetic_tsv(const std::map<std::string, std::size_t>& counts, std::uint64_t seed,
                          std::int64_t first_id = 1);

enum class TeacherBehaviour {
  Correct,        // every sample returns the gold score
  Mislabel,       // every sample returns a score more than 1 away from gold
  NearMiss,       // off by one on every sample; refinement recovers it
  Unsure,         // 6 of 10 samples wrong by two, refinement fails
  Freeform,       // sample 0 is free text with a salvageable score, the rest correct
};

TeacherBehaviour behaviour_for(std::int64_t answer_id);

/// The score a planted mislabel's samples agree on.
int mislabel_score(int gold);

/// Mock provider script that plays the teacher for `records`, keyed on the
/// answer text at the end of each prompt.
nlohmann::json teacher_script(const std::vector<AnswerRecord>& records);

/// Ids whose behaviour is Mislabel.
std::set<std::int64_t> planted_mislabels(const std::vector<AnswerRecord>& records);

/// A scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& p, const std::string& content);
std::string read_file(const std::filesystem::path& p);

}  // namespace aera::fixtures
