#include "aera/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>

namespace aera::metrics {

namespace {

void require_pair(std::span<const int> gold, std::span<const int> pred, const char* who) {
  if (gold.size() != pred.size())
    throw LengthMismatch(std::string(who) + ": gold has " + std::to_string(gold.size()) +
                         " items, pred has " + std::to_string(pred.size()));
  if (gold.empty()) throw LengthMismatch(std::string(who) + ": empty input");
}

// Characters that 13a pads with spaces: { | } ~ [ \ ] ^ _ ` space ! " # $ % &
// ( ) * + : ; < = > ? @ /
bool is_13a_symbol(unsigned char c) {
  return (c >= 0x7B && c <= 0x7E) || (c >= 0x5B && c <= 0x60) || (c >= 0x20 && c <= 0x26) ||
         (c >= 0x28 && c <= 0x2B) || (c >= 0x3A && c <= 0x40) || c == '/';
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

using NgramCounts = std::unordered_map<std::string, long long>;

std::array<NgramCounts, 4> ngram_counts(const std::vector<std::string>& toks) {
  std::array<NgramCounts, 4> out;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      std::string key = toks[i];
      for (std::size_t j = 1; j < n; ++j) key += ' ' + toks[i + j];
      ++out[n - 1][key];
    }
  }
  return out;
}

double percent(double x) { return 100.0 * x; }

}  // namespace

double accuracy(std::span<const int> gold, std::span<const int> pred) {
  require_pair(gold, pred, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += gold[i] == pred[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

double macro_f1(std::span<const int> gold, std::span<const int> pred, std::span<const int> labels) {
  require_pair(gold, pred, "macro_f1");
  if (labels.empty()) throw LengthMismatch("macro_f1: empty label set");
  double sum = 0.0;
  for (int label : labels) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == label, p = pred[i] == label;
      tp += (g && p) ? 1 : 0;
      fp += (!g && p) ? 1 : 0;
      fn += (g && !p) ? 1 : 0;
    }
    const double denom = 2 * tp + fp + fn;
    sum += denom > 0 ? 2 * tp / denom : 0.0;
  }
  return sum / static_cast<double>(labels.size());
}

KappaComputation quadratic_weighted_kappa_detail(std::span<const int> gold, std::span<const int> pred,
                                                 int k) {
  require_pair(gold, pred, "quadratic_weighted_kappa");
  if (k < 2) throw ValueOutOfRange("quadratic_weighted_kappa: k must be >= 2");
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= k || pred[i] < 0 || pred[i] >= k)
      throw ValueOutOfRange("quadratic_weighted_kappa: score outside [0, " + std::to_string(k - 1) +
                            "] at index " + std::to_string(i));
  }

  const auto uk = static_cast<std::size_t>(k);
  KappaComputation c;
  c.k = k;
  c.weights.assign(uk, std::vector<double>(uk, 0.0));
  c.observed.assign(uk, std::vector<double>(uk, 0.0));
  c.expected.assign(uk, std::vector<double>(uk, 0.0));

  std::vector<double> rows(uk, 0.0), cols(uk, 0.0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    c.observed[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])] += 1.0;
    rows[static_cast<std::size_t>(gold[i])] += 1.0;
    cols[static_cast<std::size_t>(pred[i])] += 1.0;
  }
  const double n = static_cast<double>(gold.size());
  const double denom = static_cast<double>((k - 1) * (k - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < uk; ++i) {
    for (std::size_t j = 0; j < uk; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      c.weights[i][j] = d * d / denom;
      c.expected[i][j] = rows[i] * cols[j] / n;
      num += c.weights[i][j] * c.observed[i][j];
      den += c.weights[i][j] * c.expected[i][j];
    }
  }
  c.kappa = (den == 0.0) ? 1.0 : 1.0 - num / den;
  return c;
}

double quadratic_weighted_kappa(std::span<const int> gold, std::span<const int> pred, int k) {
  return quadratic_weighted_kappa_detail(gold, pred, k).kappa;
}

std::vector<std::string> tokenize_13a(std::string_view input) {
  std::string line(input);
  line = replace_all(line, "<skipped>", "");
  line = replace_all(line, "-\n", "");
  line = replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    line = replace_all(line, "&quot;", "\"");
    line = replace_all(line, "&amp;", "&");
    line = replace_all(line, "&lt;", "<");
    line = replace_all(line, "&gt;", ">");
  }

  std::string padded;
  padded.reserve(line.size() * 2 + 2);
  padded.push_back(' ');
  for (char ch : line) {
    if (is_13a_symbol(static_cast<unsigned char>(ch))) {
      padded.push_back(' ');
      padded.push_back(ch);
      padded.push_back(' ');
    } else {
      padded.push_back(ch);
    }
  }
  padded.push_back(' ');

  static const std::regex punct_after_nondigit(R"(([^0-9])([\.,]))");
  static const std::regex punct_before_nondigit(R"(([\.,])([^0-9]))");
  static const std::regex dash_after_digit(R"(([0-9])(-))");
  padded = std::regex_replace(padded, punct_after_nondigit, "$1 $2 ");
  padded = std::regex_replace(padded, punct_before_nondigit, " $1 $2");
  padded = std::regex_replace(padded, dash_after_digit, "$1 $2 ");

  std::vector<std::string> toks;
  std::istringstream ss(padded);
  for (std::string t; ss >> t;) toks.push_back(std::move(t));
  return toks;
}

BleuStats corpus_bleu_detail(std::span<const std::string> hypotheses,
                             std::span<const std::string> references) {
  if (hypotheses.size() != references.size())
    throw LengthMismatch("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                         std::to_string(references.size()) + " references");
  if (hypotheses.empty()) throw LengthMismatch("corpus_bleu: empty corpus");

  auto rstrip = [](const std::string& s) {
    auto e = s.find_last_not_of(" \t\n\r\f\v");
    return e == std::string::npos ? std::string() : s.substr(0, e + 1);
  };

  BleuStats st;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto h = tokenize_13a(rstrip(hypotheses[i]));
    const auto r = tokenize_13a(rstrip(references[i]));
    st.hyp_len += static_cast<long long>(h.size());
    st.ref_len += static_cast<long long>(r.size());
    const auto hc = ngram_counts(h);
    const auto rc = ngram_counts(r);
    for (std::size_t n = 0; n < 4; ++n) {
      for (const auto& [gram, count] : hc[n]) {
        st.total[n] += count;
        auto it = rc[n].find(gram);
        if (it != rc[n].end()) st.correct[n] += std::min(count, it->second);
      }
    }
  }

  st.brevity_penalty = 1.0;
  if (st.hyp_len < st.ref_len)
    st.brevity_penalty =
        st.hyp_len > 0 ? std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len))
                       : 0.0;

  bool any_correct = false;
  for (auto c : st.correct) any_correct = any_correct || c > 0;
  if (!any_correct) {
    st.score = 0.0;
    return st;
  }

  double smooth = 1.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (st.total[n] == 0) break;
    if (st.correct[n] == 0) {
      smooth *= 2.0;
      st.precisions[n] = 100.0 / (smooth * static_cast<double>(st.total[n]));
    } else {
      st.precisions[n] = 100.0 * static_cast<double>(st.correct[n]) / static_cast<double>(st.total[n]);
    }
  }
  // A missing order contributes log(0), i.e. the score collapses to 0.
  double log_sum = 0.0;
  for (double p : st.precisions) {
    if (p == 0.0) {
      st.score = 0.0;
      return st;
    }
    log_sum += std::log(p);
  }
  st.score = st.brevity_penalty * std::exp(log_sum / 4.0);
  return st;
}

double corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  return corpus_bleu_detail(hypotheses, references).score;
}

double simulatability_gain(double acc_with_rationale, double acc_without) {
  if (!std::isfinite(acc_with_rationale) || !std::isfinite(acc_without))
    throw ValueOutOfRange("simulatability_gain: non-finite accuracy");
  const bool a_ratio = acc_with_rationale <= 1.0, b_ratio = acc_without <= 1.0;
  if (a_ratio != b_ratio)
    throw MixedScales("simulatability_gain: one accuracy looks like a ratio, the other a percentage");
  return acc_with_rationale - acc_without;
}

// ---------------------------------------------------------------------------

MetricsReport build_report(const std::vector<ScoredPair>& pairs,
                           const std::map<std::string, int>& categories_by_subset) {
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_subset;
  std::map<std::string, std::size_t> unparsed;
  for (const auto& p : pairs) {
    if (!categories_by_subset.contains(p.subset))
      throw ValueOutOfRange("no score range known for subset " + p.subset);
    auto& [g, q] = by_subset[p.subset];
    if (!p.pred) {
      ++unparsed[p.subset];
      continue;
    }
    g.push_back(p.gold);
    q.push_back(*p.pred);
  }

  MetricsReport report;
  for (const auto& [subset, gq] : by_subset) {
    const auto& [g, q] = gq;
    SubsetMetrics m;
    m.subset = subset;
    m.n = g.size();
    m.unparsed = unparsed[subset];
    if (!g.empty()) {
      const int k = categories_by_subset.at(subset);
      std::vector<int> labels(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) labels[static_cast<std::size_t>(i)] = i;
      m.accuracy = percent(accuracy(g, q));
      m.macro_f1 = percent(macro_f1(g, q, labels));
      m.qwk = percent(quadratic_weighted_kappa(g, q, k));
    }
    report.subsets.push_back(m);
  }

  report.overall.subset = "overall";
  if (!report.subsets.empty()) {
    const double count = static_cast<double>(report.subsets.size());
    for (const auto& m : report.subsets) {
      report.overall.n += m.n;
      report.overall.unparsed += m.unparsed;
      report.overall.accuracy += m.accuracy / count;
      report.overall.macro_f1 += m.macro_f1 / count;
      report.overall.qwk += m.qwk / count;
    }
  }
  return report;
}

nlohmann::json to_json(const MetricsReport& r) {
  auto row = [](const SubsetMetrics& m) {
    return nlohmann::json{{"subset", m.subset},     {"n", m.n},
                          {"unparsed", m.unparsed}, {"accuracy", m.accuracy},
                          {"macro_f1", m.macro_f1}, {"qwk", m.qwk}};
  };
  nlohmann::json j;
  j["subsets"] = nlohmann::json::array();
  for (const auto& m : r.subsets) j["subsets"].push_back(row(m));
  j["overall"] = row(r.overall);
  j["overall_aggregation"] = r.aggregation;
  j["scale"] = "percent";
  return j;
}

std::string format_table(const MetricsReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %6s %8s %8s %8s %8s\n", "subset", "n", "unparsed", "Acc", "F1",
                "QWK");
  out << buf;
  auto line = [&](const SubsetMetrics& m) {
    std::snprintf(buf, sizeof buf, "%-10s %6zu %8zu %8.2f %8.2f %8.2f\n", m.subset.c_str(), m.n,
                  m.unparsed, m.accuracy, m.macro_f1, m.qwk);
    out << buf;
  };
  for (const auto& m : r.subsets) line(m);
  line(r.overall);
  out << "(overall = " << r.aggregation << ")\n";
  return out.str();
}

}  // namespace aera::metrics
