#include "aera/humaneval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "aera/error.hpp"
#include "aera/metrics.hpp"
#include "aera/rng.hpp"

namespace aera::humaneval {

namespace {

constexpr std::string_view kNoPreference = "no-preference";

using Key = std::pair<std::string, std::int64_t>;

std::map<Key, const Prediction*> index(const SystemPredictions& s) {
  std::map<Key, const Prediction*> out;
  for (const auto& p : s.items) {
    if (!out.emplace(Key{p.subset, p.answer_id}, &p).second)
      throw CoverageMismatch("system " + s.name + " lists answer " + std::to_string(p.answer_id) + " twice");
  }
  return out;
}

void check_fraction(double f, const char* what) {
  if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument(std::string(what) + " must be in [0, 1]");
}

std::string rubric_text(const AssessmentContext& ctx) {
  std::string out;
  for (std::size_t i = 0; i < ctx.rubric.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(ctx.rubric[i].points) + " " + ctx.rubric[i].unit + ": " + ctx.rubric[i].criterion;
  }
  return out;
}

nlohmann::json context_fields(const EvalTask& t, const std::map<std::string, AssessmentContext>& contexts) {
  nlohmann::json j;
  if (auto it = contexts.find(t.subset); it != contexts.end()) {
    j["question"] = it->second.question_text();
    j["key_elements"] = it->second.key_elements;
    j["rubric"] = rubric_text(it->second);
  }
  return j;
}

std::string annotator_of(const nlohmann::json& j) {
  for (const char* k : {"annotator_id", "annotator", "user"}) {
    if (!j.contains(k)) continue;
    const auto& v = j[k];
    return v.is_string() ? v.get<std::string>() : v.dump();
  }
  return "unknown";
}

std::string item_of(const nlohmann::json& j) {
  for (const char* k : {"item_id", "task_id", "id"})
    if (j.contains(k) && j[k].is_string()) return j[k].get<std::string>();
  throw UnknownTask("annotation line has no item_id: " + j.dump());
}

std::set<std::string> labels_of(const nlohmann::json& j) {
  std::set<std::string> out;
  if (!j.contains("label")) return out;
  for (const auto& l : j["label"]) {
    if (l.is_string()) out.insert(l.get<std::string>());
    // doccano span labels look like [start, end, "label"].
    else if (l.is_array() && !l.empty() && l.back().is_string()) out.insert(l.back().get<std::string>());
  }
  return out;
}

bool flag_of(const nlohmann::json& j, const std::set<std::string>& labels, const char* name) {
  if (j.contains(name)) return j[name].get<bool>();
  return labels.contains(name);
}

void add_correctness(CorrectnessRates& r, const AnnotationRecord& a) {
  // Running means over n.
  r.n += 1;
  const double n = static_cast<double>(r.n);
  r.key_elements += ((a.key_elements_correct ? 1.0 : 0.0) - r.key_elements) / n;
  r.rubric += ((a.rubric_faithful ? 1.0 : 0.0) - r.rubric) / n;
}

struct PreferenceCounter {
  std::map<std::string, std::size_t> counts;
  std::size_t n = 0;
};

PreferenceShares shares(const PreferenceCounter& c, const std::vector<std::string>& systems) {
  PreferenceShares s;
  s.n = c.n;
  for (const auto& sys : systems) s.share[sys] = 0.0;
  s.share[std::string(kNoPreference)] = 0.0;
  for (const auto& [k, v] : c.counts)
    s.share[k] = c.n ? static_cast<double>(v) / static_cast<double>(c.n) : 0.0;
  return s;
}

}  // namespace

std::size_t round_half_up(double x) {
  if (x < 0) throw std::invalid_argument("round_half_up: negative input");
  // The epsilon absorbs binary error in products like 0.1 * 435 = 43.4999...
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

SampleCounts planned_counts(const std::map<std::string, std::size_t>& test_sizes, double sample_fraction,
                            double iaa_fraction) {
  check_fraction(sample_fraction, "sample_fraction");
  check_fraction(iaa_fraction, "iaa_fraction");
  SampleCounts c;
  for (const auto& [subset, n] : test_sizes) {
    const auto k = round_half_up(sample_fraction * static_cast<double>(n));
    const auto d = round_half_up(iaa_fraction * static_cast<double>(k));
    c.sampled[subset] = k;
    c.duplicates[subset] = d;
    c.total_sampled += k;
    c.total_duplicates += d;
  }
  return c;
}

std::vector<EvalTask> sample_eval_tasks(const SystemPredictions& a, const SystemPredictions& b,
                                        double sample_fraction, double iaa_fraction, std::uint64_t seed) {
  check_fraction(sample_fraction, "sample_fraction");
  check_fraction(iaa_fraction, "iaa_fraction");
  if (a.name == b.name) throw std::invalid_argument("the two systems need distinct names");
  const auto ia = index(a);
  const auto ib = index(b);
  for (const auto& [k, _] : ia)
    if (!ib.contains(k))
      throw CoverageMismatch("answer " + std::to_string(k.second) + " of subset " + k.first + " missing from " + b.name);
  for (const auto& [k, _] : ib)
    if (!ia.contains(k))
      throw CoverageMismatch("answer " + std::to_string(k.second) + " of subset " + k.first + " missing from " + a.name);

  std::map<std::string, std::vector<std::int64_t>> by_subset;
  for (const auto& [k, _] : ia) by_subset[k.first].push_back(k.second);

  struct Pick {
    Key key;
    bool duplicate;
  };
  std::vector<Pick> picks;
  for (auto& [subset, ids] : by_subset) {
    std::mt19937_64 gen(mix_seed(seed, "sample:" + subset));
    seeded_shuffle(std::span<std::int64_t>(ids), gen);
    const auto k = round_half_up(sample_fraction * static_cast<double>(ids.size()));
    const auto d = round_half_up(iaa_fraction * static_cast<double>(k));
    for (std::size_t i = 0; i < k; ++i) picks.push_back({{subset, ids[i]}, false});
    for (std::size_t i = 0; i < d; ++i) picks.push_back({{subset, ids[i]}, true});
  }

  // Opaque ids: tasks are numbered after a seeded shuffle so duplicates are
  // not recognizable from their position.
  std::vector<std::size_t> order(picks.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 id_gen(mix_seed(seed, "ids"));
  seeded_shuffle(std::span<std::size_t>(order), id_gen);
  std::vector<std::string> ids(picks.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "T%05zu", pos + 1);
    ids[order[pos]] = buf;
  }
  std::map<Key, std::string> original_id;
  for (std::size_t i = 0; i < picks.size(); ++i)
    if (!picks[i].duplicate) original_id[picks[i].key] = ids[i];

  std::mt19937_64 ab_gen(mix_seed(seed, "ab-order"));
  std::vector<EvalTask> tasks(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& pa = *ia.at(picks[i].key);
    const auto& pb = *ib.at(picks[i].key);
    const bool swap = uniform_below(ab_gen, 2) == 1;
    auto& t = tasks[i];
    t.task_id = ids[i];
    t.answer_id = pa.answer_id;
    t.subset = pa.subset;
    t.answer_text = pa.answer_text.empty() ? pb.answer_text : pa.answer_text;
    t.rationale_a = swap ? pb.rationale : pa.rationale;
    t.rationale_b = swap ? pa.rationale : pb.rationale;
    t.system_a = swap ? b.name : a.name;
    t.system_b = swap ? a.name : b.name;
    t.is_iaa_duplicate = picks[i].duplicate;
    if (t.is_iaa_duplicate) t.duplicate_of = original_id.at(picks[i].key);
  }
  std::sort(tasks.begin(), tasks.end(), [](const EvalTask& x, const EvalTask& y) { return x.task_id < y.task_id; });
  return tasks;
}

nlohmann::json make_key(const std::vector<EvalTask>& tasks) {
  nlohmann::json key;
  key["tasks"] = nlohmann::json::object();
  for (const auto& t : tasks) {
    key["tasks"][t.task_id] = {{"A", t.system_a},
                               {"B", t.system_b},
                               {"answer_id", t.answer_id},
                               {"subset", t.subset},
                               {"duplicate_of", t.is_iaa_duplicate ? nlohmann::json(t.duplicate_of) : nlohmann::json(nullptr)}};
  }
  return key;
}

ExportResult export_tasks(const std::vector<EvalTask>& tasks,
                          const std::map<std::string, AssessmentContext>& contexts,
                          const std::filesystem::path& dir, const std::filesystem::path& key_path) {
  if (tasks.empty()) throw std::invalid_argument("export_tasks: no tasks");
  std::filesystem::create_directories(dir);
  if (key_path.has_parent_path()) std::filesystem::create_directories(key_path.parent_path());

  ExportResult res;
  res.correctness = dir / "correctness.jsonl";
  res.preference = dir / "preference.jsonl";
  res.key = key_path;

  std::ofstream corr(res.correctness, std::ios::binary | std::ios::trunc);
  std::ofstream pref(res.preference, std::ios::binary | std::ios::trunc);
  for (const auto& t : tasks) {
    const auto ctx = context_fields(t, contexts);
    for (const char* label : {"A", "B"}) {
      nlohmann::json item = ctx;
      item["item_id"] = t.task_id + "/" + label;
      item["task_id"] = t.task_id;
      item["answer"] = t.answer_text;
      item["rationale"] = std::string_view(label) == "A" ? t.rationale_a : t.rationale_b;
      item["label"] = nlohmann::json::array();
      corr << item.dump() << '\n';
      ++res.correctness_items;
    }
    nlohmann::json item = ctx;
    item["item_id"] = t.task_id;
    item["task_id"] = t.task_id;
    item["answer"] = t.answer_text;
    item["rationale_A"] = t.rationale_a;
    item["rationale_B"] = t.rationale_b;
    item["label"] = nlohmann::json::array();
    pref << item.dump() << '\n';
    ++res.preference_items;
  }

  std::ofstream key(key_path, std::ios::binary | std::ios::trunc);
  key << make_key(tasks).dump(2) << '\n';
  return res;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("humaneval", path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedRow(n, "invalid JSON in " + path.string());
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<AnnotationRecord> import_annotations(const std::vector<nlohmann::json>& lines,
                                                 const nlohmann::json& key) {
  if (!key.is_object() || !key.contains("tasks") || !key["tasks"].is_object() || key["tasks"].empty())
    throw MissingKey("key file has no task map");
  const auto& map = key["tasks"];

  std::vector<AnnotationRecord> out;
  out.reserve(lines.size());
  for (const auto& j : lines) {
    const auto item = item_of(j);
    const auto slash = item.find('/');
    const std::string task_id = item.substr(0, slash);
    if (!map.contains(task_id)) throw UnknownTask("unknown task id: " + task_id);
    const auto& entry = map[task_id];
    if (!entry.contains("A") || !entry.contains("B"))
      throw MissingKey("key entry for " + task_id + " lacks the A/B map");

    AnnotationRecord a;
    a.task_id = task_id;
    a.annotator_id = annotator_of(j);
    a.subset = entry.value("subset", std::string());
    a.answer_id = entry.value("answer_id", std::int64_t{0});
    a.is_iaa_duplicate = entry.contains("duplicate_of") && entry["duplicate_of"].is_string();
    a.original_task_id = a.is_iaa_duplicate ? entry["duplicate_of"].get<std::string>() : task_id;
    const auto labels = labels_of(j);

    if (slash != std::string::npos) {
      const std::string side = item.substr(slash + 1);
      if (side != "A" && side != "B") throw UnknownTask("unknown item id: " + item);
      a.kind = TaskKind::Correctness;
      a.blind_choice = side;
      a.system = entry[side].get<std::string>();
      a.key_elements_correct = flag_of(j, labels, "key_elements_correct");
      a.rubric_faithful = flag_of(j, labels, "rubric_faithful");
    } else {
      a.kind = TaskKind::Preference;
      std::string choice;
      if (j.contains("choice")) {
        choice = j["choice"].get<std::string>();
      } else {
        for (const char* c : {"A", "B", "no-preference"})
          if (labels.contains(c)) choice = c;
      }
      if (choice == "none" || choice == "no preference" || choice == "tie") choice = std::string(kNoPreference);
      if (choice != "A" && choice != "B" && choice != kNoPreference)
        throw MalformedRow(out.size() + 1, "preference for " + task_id + " has no valid choice");
      a.blind_choice = choice;
      if (choice != kNoPreference) a.preferred_system = entry[choice].get<std::string>();
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<IaaPair> link_iaa_pairs(const std::vector<AnnotationRecord>& records) {
  std::map<std::string, std::vector<const AnnotationRecord*>> originals;
  for (const auto& r : records)
    if (!r.is_iaa_duplicate) originals[r.task_id].push_back(&r);

  std::vector<IaaPair> pairs;
  for (const auto& d : records) {
    if (!d.is_iaa_duplicate) continue;
    auto it = originals.find(d.original_task_id);
    if (it == originals.end()) continue;
    for (const auto* o : it->second) {
      if (o->kind != d.kind || o->annotator_id == d.annotator_id) continue;
      if (d.kind == TaskKind::Correctness && o->system != d.system) continue;
      IaaPair p;
      p.original_task_id = o->task_id;
      p.duplicate_task_id = d.task_id;
      p.kind = d.kind;
      p.system = d.system;
      p.first_annotator = o->annotator_id;
      p.second_annotator = d.annotator_id;
      p.key_elements[0] = o->key_elements_correct;
      p.key_elements[1] = d.key_elements_correct;
      p.rubric[0] = o->rubric_faithful;
      p.rubric[1] = d.rubric_faithful;
      p.preference[0] = o->preferred_system.empty() ? std::string(kNoPreference) : o->preferred_system;
      p.preference[1] = d.preferred_system.empty() ? std::string(kNoPreference) : d.preferred_system;
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

KappaSet iaa_kappa(const std::vector<IaaPair>& pairs) {
  std::vector<int> ke1, ke2, rb1, rb2;
  std::vector<std::string> pf1, pf2;
  for (const auto& p : pairs) {
    if (p.kind == TaskKind::Correctness) {
      ke1.push_back(p.key_elements[0]);
      ke2.push_back(p.key_elements[1]);
      rb1.push_back(p.rubric[0]);
      rb2.push_back(p.rubric[1]);
    } else {
      pf1.push_back(p.preference[0]);
      pf2.push_back(p.preference[1]);
    }
  }
  if (ke1.empty() && pf1.empty()) throw NoIaaPairs("no duplicate task was annotated by two different annotators");
  KappaSet k;
  k.correctness_pairs = ke1.size();
  k.preference_pairs = pf1.size();
  if (!ke1.empty()) {
    k.key_elements = metrics::cohen_kappa(ke1, ke2);
    k.rubric = metrics::cohen_kappa(rb1, rb2);
  }
  if (!pf1.empty())
    k.preference = metrics::cohen_kappa<std::string>(std::span<const std::string>(pf1), std::span<const std::string>(pf2));
  return k;
}

Report compute_reports(const std::vector<AnnotationRecord>& records, const std::vector<std::string>& systems) {
  if (records.empty()) throw std::invalid_argument("compute_reports: no annotations");
  Report r;
  r.systems = systems;
  for (const auto& s : systems) r.correctness[s];

  PreferenceCounter all;
  std::map<std::string, PreferenceCounter> by_annotator, by_subset;
  for (const auto& a : records) {
    if (a.kind == TaskKind::Correctness) {
      add_correctness(r.correctness[a.system], a);
      add_correctness(r.correctness_by_annotator[a.annotator_id][a.system], a);
      add_correctness(r.correctness_by_subset[a.subset][a.system], a);
    } else {
      const std::string label = a.preferred_system.empty() ? std::string(kNoPreference) : a.preferred_system;
      for (auto* c : {&all, &by_annotator[a.annotator_id], &by_subset[a.subset]}) {
        ++c->counts[label];
        ++c->n;
      }
    }
  }
  r.preference = shares(all, systems);
  for (const auto& [ann, c] : by_annotator) r.preference_by_annotator[ann] = shares(c, systems);
  for (const auto& [sub, c] : by_subset) r.preference_by_subset[sub] = shares(c, systems);

  try {
    r.kappa = iaa_kappa(link_iaa_pairs(records));
  } catch (const NoIaaPairs& e) {
    r.warnings.push_back(std::string("kappa omitted: ") + e.what());
  } catch (const DegenerateMarginals& e) {
    r.warnings.push_back(std::string("kappa omitted: ") + e.what());
  }
  return r;
}

nlohmann::json to_json(const Report& r) {
  auto rates = [](const CorrectnessRates& c) {
    return nlohmann::json{{"n", c.n}, {"key_elements", c.key_elements}, {"rubric", c.rubric}};
  };
  auto pref = [](const PreferenceShares& p) { return nlohmann::json{{"n", p.n}, {"share", p.share}}; };
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };

  nlohmann::json j;
  j["systems"] = r.systems;
  for (const auto& [s, c] : r.correctness) j["correctness"][s] = rates(c);
  j["preference"] = pref(r.preference);
  for (const auto& [ann, m] : r.correctness_by_annotator)
    for (const auto& [s, c] : m) j["by_annotator"][ann]["correctness"][s] = rates(c);
  for (const auto& [ann, p] : r.preference_by_annotator) j["by_annotator"][ann]["preference"] = pref(p);
  for (const auto& [sub, m] : r.correctness_by_subset)
    for (const auto& [s, c] : m) j["by_subset"][sub]["correctness"][s] = rates(c);
  for (const auto& [sub, p] : r.preference_by_subset) j["by_subset"][sub]["preference"] = pref(p);
  j["kappa"] = {{"key_elements", opt(r.kappa.key_elements)},
                {"rubric", opt(r.kappa.rubric)},
                {"preference", opt(r.kappa.preference)},
                {"correctness_pairs", r.kappa.correctness_pairs},
                {"preference_pairs", r.kappa.preference_pairs}};
  j["warnings"] = r.warnings;
  return j;
}

std::string format_report(const Report& r) {
  std::ostringstream out;
  char buf[200];
  out << "Rationale correctness\n";
  std::snprintf(buf, sizeof buf, "  %-20s %6s %14s %10s\n", "system", "n", "key elements", "rubric");
  out << buf;
  for (const auto& [s, c] : r.correctness) {
    std::snprintf(buf, sizeof buf, "  %-20s %6zu %14.3f %10.3f\n", s.c_str(), c.n, c.key_elements, c.rubric);
    out << buf;
  }
  out << "Preference (n=" << r.preference.n << ")\n";
  for (const auto& [s, v] : r.preference.share) {
    std::snprintf(buf, sizeof buf, "  %-20s %6.3f\n", s.c_str(), v);
    out << buf;
  }
  out << "Per annotator preference\n";
  for (const auto& [ann, p] : r.preference_by_annotator) {
    out << "  " << ann << ":";
    for (const auto& [s, v] : p.share) {
      std::snprintf(buf, sizeof buf, " %s=%.2f", s.c_str(), v);
      out << buf;
    }
    out << '\n';
  }
  out << "Inter-annotator agreement (Cohen's kappa)\n";
  auto line = [&](const char* what, const std::optional<double>& v) {
    if (v) {
      std::snprintf(buf, sizeof buf, "  %-14s %.3f\n", what, *v);
    } else {
      std::snprintf(buf, sizeof buf, "  %-14s n/a\n", what);
    }
    out << buf;
  };
  line("key elements", r.kappa.key_elements);
  line("rubric", r.kappa.rubric);
  line("preference", r.kappa.preference);
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  return out.str();
}

}  // namespace aera::humaneval
