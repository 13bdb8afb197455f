#pragma once

#include <stdexcept>
#include <string>

namespace aera {

/// Base class for every error raised by the library. Each subclass names one
/// contract violation so callers (and the CLI's exit-code mapping) can catch
/// precisely what they handle.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AERA_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

// corpus
AERA_DEFINE_ERROR(EmptyStream);
AERA_DEFINE_ERROR(EmptyInput);
AERA_DEFINE_ERROR(MissingSection);
AERA_DEFINE_ERROR(RubricGap);

class MalformedRow : public Error {
 public:
  MalformedRow(std::size_t row, const std::string& what)
      : Error("malformed row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// prompts
AERA_DEFINE_ERROR(MissingDemonstrations);
AERA_DEFINE_ERROR(MissingGoldScore);
AERA_DEFINE_ERROR(CountOutOfRange);

// llm_gateway
AERA_DEFINE_ERROR(BudgetExceeded);
AERA_DEFINE_ERROR(PromptTooLong);
AERA_DEFINE_ERROR(AllSamplesFailed);

class ProviderError : public Error {
 public:
  ProviderError(int status, std::string body)
      : Error("provider error " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

// parsing
AERA_DEFINE_ERROR(ParseFailure);

class ScoreOutOfRange : public Error {
 public:
  explicit ScoreOutOfRange(int score)
      : Error("score out of range: " + std::to_string(score)), score_(score) {}
  int score() const noexcept { return score_; }

 private:
  int score_;
};

// refine
AERA_DEFINE_ERROR(EmptySamples);

class MissingEstimate : public Error {
 public:
  explicit MissingEstimate(long long answer_id)
      : Error("no confidence estimate for answer " + std::to_string(answer_id)),
        answer_id_(answer_id) {}
  long long answer_id() const noexcept { return answer_id_; }

 private:
  long long answer_id_;
};

// metrics
AERA_DEFINE_ERROR(LengthMismatch);
AERA_DEFINE_ERROR(ValueOutOfRange);
AERA_DEFINE_ERROR(DegenerateMarginals);
AERA_DEFINE_ERROR(MixedScales);

// humaneval
AERA_DEFINE_ERROR(CoverageMismatch);
AERA_DEFINE_ERROR(UnknownTask);
AERA_DEFINE_ERROR(MissingKey);
AERA_DEFINE_ERROR(NoIaaPairs);

// orchestrator
AERA_DEFINE_ERROR(ConfigInvalid);

class MissingArtifact : public Error {
 public:
  MissingArtifact(const std::string& stage, const std::string& path)
      : Error("stage '" + stage + "' requires missing artifact: " + path),
        stage_(stage),
        path_(path) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string stage_;
  std::string path_;
};

#undef AERA_DEFINE_ERROR

}  // namespace aera
