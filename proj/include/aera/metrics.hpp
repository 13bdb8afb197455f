#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aera/error.hpp"

namespace aera::metrics {

double accuracy(std::span<const int> gold, std::span<const int> pred);

/// Unweighted mean of per-label F1 over `labels`; a label with no support in
/// either vector contributes 0.
double macro_f1(std::span<const int> gold, std::span<const int> pred, std::span<const int> labels);

struct KappaComputation {
  int k = 0;
  std::vector<std::vector<double>> weights;   // (i-j)^2 / (k-1)^2
  std::vector<std::vector<double>> observed;  // O, counts
  std::vector<std::vector<double>> expected;  // E, row_i * col_j / n
  double kappa = 0.0;
};

/// Scores must lie in [0, k-1].
KappaComputation quadratic_weighted_kappa_detail(std::span<const int> gold, std::span<const int> pred, int k);
double quadratic_weighted_kappa(std::span<const int> gold, std::span<const int> pred, int k);

struct AgreementComputation {
  double observed = 0.0;  // P_o
  double chance = 0.0;    // P_e
  double kappa = 0.0;
};

/// Cohen's kappa over arbitrary comparable labels.
template <class T>
AgreementComputation cohen_kappa_detail(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw LengthMismatch("cohen_kappa: length mismatch");
  if (a.empty()) throw LengthMismatch("cohen_kappa: empty input");
  const double n = static_cast<double>(a.size());
  std::map<T, double> ca, cb;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  AgreementComputation out;
  out.observed = agree / n;
  for (const auto& [label, count] : ca) {
    auto it = cb.find(label);
    if (it != cb.end()) out.chance += (count / n) * (it->second / n);
  }
  if (agree == n) {
    out.kappa = 1.0;
    return out;
  }
  if (out.chance >= 1.0) throw DegenerateMarginals("cohen_kappa: chance agreement is 1");
  out.kappa = 1.0 - (1.0 - out.observed) / (1.0 - out.chance);
  return out;
}

template <class T>
double cohen_kappa(std::span<const T> a, std::span<const T> b) {
  return cohen_kappa_detail(a, b).kappa;
}

inline double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  return cohen_kappa<int>(std::span<const int>(a), std::span<const int>(b));
}

/// sacreBLEU's 13a tokenizer.
std::vector<std::string> tokenize_13a(std::string_view line);

struct BleuStats {
  std::array<long long, 4> correct{};
  std::array<long long, 4> total{};
  long long hyp_len = 0;
  long long ref_len = 0;
  double brevity_penalty = 0.0;
  std::array<double, 4> precisions{};  // percent
  double score = 0.0;                  // 0..100
};

/// Corpus BLEU, single reference, 13a tokenization, exponential smoothing.
BleuStats corpus_bleu_detail(std::span<const std::string> hypotheses,
                             std::span<const std::string> references);
double corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

/// acc(with rationale) - acc(without). Both on the same scale (ratio or percent).
double simulatability_gain(double acc_with_rationale, double acc_without);

// ---------------------------------------------------------------------------

struct SubsetMetrics {
  std::string subset;
  std::size_t n = 0;
  std::size_t unparsed = 0;  // predictions that yielded no score (excluded from n)
  double accuracy = 0.0;     // percent
  double macro_f1 = 0.0;     // percent
  double qwk = 0.0;          // percent
};

struct MetricsReport {
  std::vector<SubsetMetrics> subsets;
  SubsetMetrics overall;  // unweighted mean over subsets
  std::string aggregation = "unweighted mean over subsets";
};

struct ScoredPair {
  std::string subset;
  int gold = 0;
  std::optional<int> pred;
};

/// k (the category count) comes from each subset's score range, labels are 0..k-1.
MetricsReport build_report(const std::vector<ScoredPair>& pairs,
                           const std::map<std::string, int>& categories_by_subset);

nlohmann::json to_json(const MetricsReport& r);
std::string format_table(const MetricsReport& r);

}  // namespace aera::metrics
