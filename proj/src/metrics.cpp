#include "pbtw/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "pbtw/error.hpp"

namespace pbtw {

using nlohmann::json;

namespace {

void require_runs(const RunReport& r) {
  if (r.outcomes.empty()) throw Error(ErrorCode::EmptyReport, "run report has no outcomes");
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", v * 100.0);
  return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void Thresholds::validate() const {
  auto in_open = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_open(soundness)) throw Error(ErrorCode::InvalidArgument, "soundness threshold must lie in (0,1)");
  for (double v : {validity_min, branch_min, strength_min}) {
    if (v < 0.0 || v > 1.0) throw Error(ErrorCode::InvalidArgument, "issue thresholds must lie in [0,1]");
  }
}

void to_json(json& j, const Thresholds& t) {
  j = json{{"soundness", t.soundness},
           {"validity_min", t.validity_min},
           {"branch_min", t.branch_min},
           {"strength_min", t.strength_min}};
}

void from_json(const json& j, Thresholds& t) {
  Thresholds d;
  t.soundness = j.value("soundness", d.soundness);
  t.validity_min = j.value("validity_min", d.validity_min);
  t.branch_min = j.value("branch_min", d.branch_min);
  t.strength_min = j.value("strength_min", d.strength_min);
}

double generator_validity(const RunReport& report) {
  require_runs(report);
  long ok = std::count_if(report.outcomes.begin(), report.outcomes.end(),
                          [](const RunOutcome& o) { return o.status != RunStatus::GeneratorError; });
  return static_cast<double>(ok) / static_cast<double>(report.outcomes.size());
}

Diversity generator_diversity(const CoverageData& cov) {
  if (cov.statements_total <= 0) {
    throw Error(ErrorCode::UnresolvedScope, "coverage scope '" + cov.scope + "' has no statements");
  }
  Diversity d;
  d.statements = static_cast<double>(cov.statements_hit()) / cov.statements_total;
  d.branches = cov.branches_total == 0 ? 1.0 : static_cast<double>(cov.branches_hit()) / cov.branches_total;
  return d;
}

PropertyValidity property_validity(const RunReport& report, const std::vector<std::string>& property_ids) {
  require_runs(report);
  if (property_ids.empty()) throw Error(ErrorCode::InvalidArgument, "no properties to judge");
  PropertyValidity pv;
  int valid = 0;
  for (const auto& id : property_ids) {
    auto it = report.per_property_error_counts.find(id);
    bool ok = it == report.per_property_error_counts.end() || it->second == 0;
    pv.valid[id] = ok;
    valid += ok;
  }
  pv.ratio = static_cast<double>(valid) / static_cast<double>(property_ids.size());
  return pv;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Sound: return "Sound";
    case Verdict::Unsound: return "Unsound";
    case Verdict::Indeterminate: return "Indeterminate";
  }
  return "?";
}

Verdict verdict_from_string(std::string_view name) {
  if (name == "Sound") return Verdict::Sound;
  if (name == "Unsound") return Verdict::Unsound;
  if (name == "Indeterminate") return Verdict::Indeterminate;
  throw Error(ErrorCode::InvalidArgument, "unknown verdict '" + std::string(name) + "'");
}

void to_json(json& j, const SoundnessVerdict& v) {
  j = json{{"property_id", v.property_id},
           {"failure_rate", v.failure_rate},
           {"runs_reached", v.runs_reached},
           {"failures", v.failures},
           {"verdict", to_string(v.verdict)}};
}

void from_json(const json& j, SoundnessVerdict& v) {
  v.property_id = j.at("property_id").get<std::string>();
  v.failure_rate = j.at("failure_rate").get<double>();
  v.runs_reached = j.at("runs_reached").get<int>();
  v.failures = j.value("failures", 0);
  v.verdict = verdict_from_string(j.at("verdict").get<std::string>());
}

SoundnessVerdict judge_soundness(std::string property_id, int failures, int runs_reached, double threshold) {
  if (failures < 0 || runs_reached < 0 || failures > runs_reached) {
    throw Error(ErrorCode::InvalidArgument, "failure count outside [0, runs reached]");
  }
  SoundnessVerdict v;
  v.property_id = std::move(property_id);
  v.failures = failures;
  v.runs_reached = runs_reached;
  if (runs_reached == 0) {
    v.verdict = Verdict::Indeterminate;
    return v;
  }
  v.failure_rate = static_cast<double>(failures) / static_cast<double>(runs_reached);
  v.verdict = v.failure_rate > threshold ? Verdict::Unsound : Verdict::Sound;
  return v;
}

Soundness property_soundness(const RunReport& report, double threshold, const std::set<std::string>& invalid) {
  require_runs(report);
  Soundness s;
  int sound = 0, unsound = 0;
  for (const auto& id : report.property_ids) {
    auto fail = report.per_property_failure_counts.count(id) ? report.per_property_failure_counts.at(id) : 0;
    auto reached = report.per_property_reached_counts.count(id) ? report.per_property_reached_counts.at(id) : 0;
    auto v = judge_soundness(id, fail, reached, threshold);
    if (!invalid.count(id)) {
      sound += v.verdict == Verdict::Sound;
      unsound += v.verdict == Verdict::Unsound;
    }
    s.verdicts.push_back(std::move(v));
  }
  if (sound + unsound > 0) s.ratio = static_cast<double>(sound) / static_cast<double>(sound + unsound);
  return s;
}

void to_json(json& j, const Strength& s) {
  j = json{{"score", s.score},
           {"killed_by_sound", s.killed_by_sound},
           {"killed_by_other", s.killed_by_other},
           {"killed_by_crash", s.killed_by_crash},
           {"timed_out", s.timed_out},
           {"survived", s.survived},
           {"total", s.total},
           {"surviving_mutant_ids", s.surviving_mutant_ids}};
}

void from_json(const json& j, Strength& s) {
  s.score = j.at("score").get<double>();
  s.killed_by_sound = j.at("killed_by_sound").get<int>();
  s.killed_by_other = j.at("killed_by_other").get<int>();
  s.killed_by_crash = j.at("killed_by_crash").get<int>();
  s.timed_out = j.at("timed_out").get<int>();
  s.survived = j.at("survived").get<int>();
  s.total = j.at("total").get<int>();
  s.surviving_mutant_ids = j.at("surviving_mutant_ids").get<std::vector<std::string>>();
}

Strength property_strength(const std::vector<MutantResult>& mutants, const std::vector<SoundnessVerdict>& verdicts) {
  std::set<std::string> sound;
  for (const auto& v : verdicts) {
    if (v.verdict == Verdict::Sound) sound.insert(v.property_id);
  }
  Strength s;
  s.total = static_cast<int>(mutants.size());
  for (const auto& m : mutants) {
    switch (m.classification) {
      case MutantClass::KilledByCrash: ++s.killed_by_crash; break;
      case MutantClass::Timeout: ++s.timed_out; break;
      case MutantClass::Survived:
        ++s.survived;
        s.surviving_mutant_ids.push_back(m.mutant_id);
        break;
      case MutantClass::KilledByAssertion: {
        bool all_sound = !m.killing_property_ids.empty() &&
                         std::all_of(m.killing_property_ids.begin(), m.killing_property_ids.end(),
                                     [&](const std::string& id) { return sound.count(id) > 0; });
        if (all_sound) {
          ++s.killed_by_sound;
        } else {
          ++s.killed_by_other;
          s.surviving_mutant_ids.push_back(m.mutant_id);
        }
        break;
      }
    }
  }
  if (s.denominator() == 0) {
    throw Error(ErrorCode::NoMutants, "no mutants left after excluding crash kills and timeouts");
  }
  s.score = static_cast<double>(s.killed_by_sound) / static_cast<double>(s.denominator());
  return s;
}

std::string_view to_string(IssueKind k) {
  switch (k) {
    case IssueKind::InvalidGenerator: return "InvalidGenerator";
    case IssueKind::LowDiversityGenerator: return "LowDiversityGenerator";
    case IssueKind::InvalidProperty: return "InvalidProperty";
    case IssueKind::UnsoundProperty: return "UnsoundProperty";
    case IssueKind::WeakProperty: return "WeakProperty";
  }
  return "?";
}

IssueKind issue_kind_from_string(std::string_view name) {
  for (auto k : kAllIssueKinds) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown issue kind '" + std::string(name) + "'");
}

std::string_view evidence_tag(IssueKind k) {
  switch (k) {
    case IssueKind::InvalidGenerator:
    case IssueKind::InvalidProperty: return "error";
    case IssueKind::LowDiversityGenerator: return "coverage";
    case IssueKind::UnsoundProperty: return "counterexample";
    case IssueKind::WeakProperty: return "mutants";
  }
  return "?";
}

void Issue::validate() const {
  if (!evidence.is_object() || evidence.value("tag", std::string{}) != evidence_tag(kind)) {
    throw Error(ErrorCode::InvalidArgument, "evidence of issue " + id + " does not match its kind");
  }
}

void to_json(json& j, const Issue& i) {
  j = json{{"id", i.id}, {"kind", to_string(i.kind)}, {"subject", i.subject}, {"evidence", i.evidence}};
}

void from_json(const json& j, Issue& i) {
  i.id = j.at("id").get<std::string>();
  i.kind = issue_kind_from_string(j.at("kind").get<std::string>());
  i.subject = j.at("subject").get<std::string>();
  i.evidence = j.at("evidence");
  i.validate();
}

std::vector<std::string> QualityScorecard::indeterminate_properties() const {
  std::vector<std::string> out;
  for (const auto& v : verdicts) {
    if (v.verdict == Verdict::Indeterminate) out.push_back(v.property_id);
  }
  return out;
}

bool QualityScorecard::has_issue(IssueKind k) const {
  return std::any_of(issues.begin(), issues.end(), [k](const Issue& i) { return i.kind == k; });
}

const Issue* QualityScorecard::find_issue(const std::string& id) const {
  for (const auto& i : issues) {
    if (i.id == id) return &i;
  }
  return nullptr;
}

void to_json(json& j, const QualityScorecard& s) {
  j = json{{"schema", kScorecardSchema},
           {"generator_validity", s.generator_validity},
           {"property_validity", s.property_validity},
           {"property_soundness", opt_json(s.property_soundness)},
           {"property_strength", opt_json(s.property_strength)},
           {"verdicts", s.verdicts},
           {"indeterminate_properties", s.indeterminate_properties()},
           {"property_valid", s.property_valid},
           {"issues", s.issues},
           {"n_runs", s.n_runs},
           {"n_mutants", s.n_mutants},
           {"n_properties", s.n_properties},
           {"partial", s.partial},
           {"thresholds", s.thresholds}};
  j["generator_diversity"] = s.generator_diversity
                                 ? json{{"statements", s.generator_diversity->statements},
                                        {"branches", s.generator_diversity->branches}}
                                 : json(nullptr);
  j["strength"] = s.strength ? json(*s.strength) : json(nullptr);
}

void from_json(const json& j, QualityScorecard& s) {
  if (j.value("schema", std::string{}) != kScorecardSchema) {
    throw Error(ErrorCode::InvalidArgument, "not a " + std::string(kScorecardSchema) + " document");
  }
  s.generator_validity = j.at("generator_validity").get<double>();
  s.property_validity = j.at("property_validity").get<double>();
  s.property_soundness.reset();
  s.property_strength.reset();
  if (!j.at("property_soundness").is_null()) s.property_soundness = j["property_soundness"].get<double>();
  if (!j.at("property_strength").is_null()) s.property_strength = j["property_strength"].get<double>();
  s.generator_diversity.reset();
  if (!j.at("generator_diversity").is_null()) {
    s.generator_diversity = Diversity{j["generator_diversity"].at("statements").get<double>(),
                                      j["generator_diversity"].at("branches").get<double>()};
  }
  s.strength.reset();
  if (!j.at("strength").is_null()) s.strength = j["strength"].get<Strength>();
  s.verdicts = j.at("verdicts").get<std::vector<SoundnessVerdict>>();
  s.property_valid = j.at("property_valid").get<std::map<std::string, bool>>();
  s.issues = j.at("issues").get<std::vector<Issue>>();
  s.n_runs = j.at("n_runs").get<int>();
  s.n_mutants = j.at("n_mutants").get<int>();
  s.n_properties = j.at("n_properties").get<int>();
  s.partial = j.value("partial", false);
  s.thresholds = j.value("thresholds", Thresholds{});
}

QualityScorecard build_scorecard(const ScorecardInputs& in, const Thresholds& th) {
  if (!in.report) throw Error(ErrorCode::InvalidArgument, "scorecard needs a run report");
  th.validate();
  const RunReport& report = *in.report;
  QualityScorecard s;
  s.thresholds = th;
  s.n_runs = static_cast<int>(report.outcomes.size());
  s.n_properties = static_cast<int>(report.property_ids.size());
  s.partial = report.partial;
  s.generator_validity = generator_validity(report);
  if (report.coverage) s.generator_diversity = generator_diversity(*report.coverage);

  std::set<std::string> invalid;
  if (!report.property_ids.empty()) {
    auto pv = property_validity(report, report.property_ids);
    s.property_validity = pv.ratio;
    s.property_valid = pv.valid;
    for (const auto& [id, ok] : pv.valid) {
      if (!ok) invalid.insert(id);
    }
  }
  auto sound = property_soundness(report, th.soundness, invalid);
  s.verdicts = sound.verdicts;
  s.property_soundness = sound.ratio;

  if (in.mutants) {
    s.n_mutants = static_cast<int>(in.mutants->size());
    try {
      s.strength = property_strength(*in.mutants, s.verdicts);
      s.property_strength = s.strength->score;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoMutants) throw;
    }
  }

  int n = 0;
  auto add = [&](IssueKind kind, std::string subject, json evidence) {
    evidence["tag"] = evidence_tag(kind);
    Issue issue{in.issue_prefix + "-i" + std::to_string(++n), kind, std::move(subject), std::move(evidence)};
    issue.validate();
    s.issues.push_back(std::move(issue));
  };

  if (s.generator_validity < th.validity_min) {
    const RunOutcome* first = nullptr;
    int count = 0;
    for (const auto& o : report.outcomes) {
      if (o.status != RunStatus::GeneratorError) continue;
      if (!first) first = &o;
      ++count;
    }
    add(IssueKind::InvalidGenerator, in.generator_name,
        {{"error_type", first ? first->error_type.value_or("") : ""},
         {"error_message", first ? first->error_message.value_or("") : ""},
         {"count", count},
         {"runs", s.n_runs},
         {"validity", s.generator_validity}});
  }
  if (s.generator_diversity && report.coverage->branches_total > 0 && s.generator_diversity->branches < th.branch_min) {
    add(IssueKind::LowDiversityGenerator, in.generator_name,
        {{"statement_ratio", s.generator_diversity->statements},
         {"branch_ratio", s.generator_diversity->branches},
         {"missed_branches", report.coverage->missed_branches},
         {"scope", report.coverage->scope}});
  }
  for (const auto& id : report.property_ids) {
    if (!invalid.count(id)) continue;
    const RunOutcome* first = nullptr;
    for (const auto& o : report.outcomes) {
      if (std::find(o.errored_property_ids.begin(), o.errored_property_ids.end(), id) != o.errored_property_ids.end()) {
        first = &o;
        break;
      }
    }
    add(IssueKind::InvalidProperty, id,
        {{"error_type", first && first->error_type ? *first->error_type : ""},
         {"error_message", first && first->error_message ? *first->error_message : ""},
         {"count", report.per_property_error_counts.at(id)},
         {"input", first && first->input_rendering ? *first->input_rendering : ""}});
  }
  for (const auto& v : s.verdicts) {
    if (v.verdict != Verdict::Unsound || invalid.count(v.property_id)) continue;
    const RunOutcome* first = nullptr;
    for (const auto& o : report.outcomes) {
      if (std::find(o.failed_property_ids.begin(), o.failed_property_ids.end(), v.property_id) !=
          o.failed_property_ids.end()) {
        first = &o;
        break;
      }
    }
    add(IssueKind::UnsoundProperty, v.property_id,
        {{"input", first && first->input_rendering ? *first->input_rendering : ""},
         {"message", first && first->error_message ? *first->error_message : ""},
         {"failure_rate", v.failure_rate},
         {"failures", v.failures},
         {"runs_reached", v.runs_reached}});
  }
  if (s.strength && s.strength->score < th.strength_min) {
    json diffs = json::array();
    for (const auto& id : s.strength->surviving_mutant_ids) {
      auto it = in.mutant_diffs.find(id);
      diffs.push_back({{"mutant_id", id}, {"diff", it == in.mutant_diffs.end() ? "" : it->second}});
    }
    add(IssueKind::WeakProperty, "properties",
        {{"strength", s.strength->score}, {"surviving", s.strength->surviving_mutant_ids}, {"diffs", diffs}});
  }
  return s;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"generator_validity", "statement_coverage", "branch_coverage",
                                              "property_validity",  "property_soundness", "property_strength"};
  return names;
}

void to_json(json& j, const AggregateMetrics& a) {
  json metrics = json::object();
  for (const auto& [name, m] : a.metrics) {
    metrics[name] = m.count ? json{{"mean", m.mean}, {"min", m.min}, {"max", m.max}, {"count", m.count}}
                            : json{{"mean", nullptr}, {"min", nullptr}, {"max", nullptr}, {"count", 0}};
  }
  j = json{{"n_scorecards", a.n_scorecards}, {"metrics", metrics}, {"issue_free", a.issue_free},
           {"total_runs", a.total_runs}};
}

void from_json(const json& j, AggregateMetrics& a) {
  a.n_scorecards = j.at("n_scorecards").get<int>();
  a.total_runs = j.value("total_runs", 0);
  a.issue_free = j.at("issue_free").get<std::map<std::string, int>>();
  a.metrics.clear();
  for (const auto& [name, m] : j.at("metrics").items()) {
    MetricSummary s;
    s.count = m.at("count").get<int>();
    if (s.count) {
      s.mean = m.at("mean").get<double>();
      s.min = m.at("min").get<double>();
      s.max = m.at("max").get<double>();
    }
    a.metrics[name] = s;
  }
}

AggregateMetrics aggregate(const std::vector<QualityScorecard>& scorecards) {
  if (scorecards.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to aggregate");
  AggregateMetrics a;
  a.n_scorecards = static_cast<int>(scorecards.size());
  std::map<std::string, std::vector<double>> values;
  for (const auto& name : metric_names()) values[name];
  for (const auto& s : scorecards) {
    a.total_runs += s.n_runs;
    values["generator_validity"].push_back(s.generator_validity);
    if (s.generator_diversity) {
      values["statement_coverage"].push_back(s.generator_diversity->statements);
      values["branch_coverage"].push_back(s.generator_diversity->branches);
    }
    if (s.n_properties > 0) values["property_validity"].push_back(s.property_validity);
    if (s.property_soundness) values["property_soundness"].push_back(*s.property_soundness);
    if (s.property_strength) values["property_strength"].push_back(*s.property_strength);
  }
  for (const auto& [name, vs] : values) {
    MetricSummary m;
    m.count = static_cast<int>(vs.size());
    if (!vs.empty()) {
      double sum = 0;
      for (double v : vs) sum += v;
      m.mean = sum / static_cast<double>(vs.size());
      m.min = *std::min_element(vs.begin(), vs.end());
      m.max = *std::max_element(vs.begin(), vs.end());
    }
    a.metrics[name] = m;
  }
  for (auto k : kAllIssueKinds) {
    a.issue_free[std::string(to_string(k))] = static_cast<int>(
        std::count_if(scorecards.begin(), scorecards.end(), [k](const QualityScorecard& s) { return !s.has_issue(k); }));
  }
  return a;
}

std::string render_scorecard_text(const QualityScorecard& s) {
  std::ostringstream out;
  auto count = [](int n, const char* one, const char* many) { return std::to_string(n) + " " + (n == 1 ? one : many); };
  auto opt = [](const std::optional<double>& v) { return v ? percent(*v) : std::string("n/a"); };
  out << "Generator validity   " << percent(s.generator_validity) << " over " << s.n_runs << " runs"
      << (s.partial ? " (partial)" : "") << "\n";
  if (s.generator_diversity) {
    out << "Generator diversity  statements " << percent(s.generator_diversity->statements) << ", branches "
        << percent(s.generator_diversity->branches) << "\n";
  } else {
    out << "Generator diversity  n/a\n";
  }
  out << "Property validity    " << (s.n_properties ? percent(s.property_validity) : std::string("n/a")) << " of "
      << count(s.n_properties, "property", "properties") << "\n";
  out << "Property soundness   " << opt(s.property_soundness) << "\n";
  out << "Property strength    " << opt(s.property_strength);
  if (s.strength) {
    out << " (" << s.strength->killed_by_sound << " of " << count(s.strength->denominator(), "mutant", "mutants") << "; "
        << count(s.strength->killed_by_crash, "crash kill", "crash kills") << " excluded)";
  }
  out << "\n";
  for (const auto& v : s.verdicts) {
    out << "  " << v.property_id << "  " << to_string(v.verdict);
    if (v.verdict != Verdict::Indeterminate) {
      out << "  failed " << v.failures << "/" << v.runs_reached << " (" << percent(v.failure_rate) << ")";
    }
    if (s.property_valid.count(v.property_id) && !s.property_valid.at(v.property_id)) out << "  INVALID";
    out << "\n";
  }
  if (s.issues.empty()) {
    out << "No issues flagged.\n";
  } else {
    out << "Issues:\n";
    for (const auto& i : s.issues) out << "  [" << i.id << "] " << to_string(i.kind) << " " << i.subject << "\n";
  }
  return out.str();
}

}  // namespace pbtw
