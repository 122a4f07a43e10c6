#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/protocol.hpp"

namespace pbtw {

/// Issue-flagging thresholds. Only the soundness threshold comes with a
/// published value; the others are conventions of this tool.
struct Thresholds {
  double soundness = 0.10;      // Unsound iff failure rate strictly above
  double validity_min = 0.99;   // InvalidGenerator below
  double branch_min = 0.8;      // LowDiversityGenerator below
  double strength_min = 0.5;    // WeakProperty below

  void validate() const;
  bool operator==(const Thresholds&) const = default;
};

void to_json(nlohmann::json& j, const Thresholds& t);
void from_json(const nlohmann::json& j, Thresholds& t);

/// Throws EmptyReport when the report has no outcomes.
double generator_validity(const RunReport& report);

struct Diversity {
  double statements = 0;
  double branches = 0;
  bool operator==(const Diversity&) const = default;
};

/// Throws UnresolvedScope when the coverage has no statements. A target
/// without branches counts as fully branch-covered.
Diversity generator_diversity(const CoverageData& cov);

struct PropertyValidity {
  double ratio = 1.0;
  std::map<std::string, bool> valid;  // per property id
};

/// A property is invalid iff some run recorded a non-assertion error in its
/// Check phase. Throws EmptyReport / InvalidArgument (no properties).
PropertyValidity property_validity(const RunReport& report, const std::vector<std::string>& property_ids);

enum class Verdict { Sound, Unsound, Indeterminate };
std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view name);

struct SoundnessVerdict {
  std::string property_id;
  double failure_rate = 0;
  int runs_reached = 0;
  int failures = 0;
  Verdict verdict = Verdict::Indeterminate;
  bool operator==(const SoundnessVerdict&) const = default;
};

void to_json(nlohmann::json& j, const SoundnessVerdict& v);
void from_json(const nlohmann::json& j, SoundnessVerdict& v);

/// Verdict for a failure count over reached runs: Unsound iff the rate is
/// strictly greater than the threshold, Indeterminate iff never reached.
SoundnessVerdict judge_soundness(std::string property_id, int failures, int runs_reached, double threshold);

struct Soundness {
  std::vector<SoundnessVerdict> verdicts;
  std::optional<double> ratio;  // Sound / (Sound + Unsound); empty when no property qualifies
};

/// Invalid properties keep their verdict but are left out of the ratio.
Soundness property_soundness(const RunReport& report, double threshold = 0.10,
                             const std::set<std::string>& invalid = {});

struct Strength {
  double score = 0;
  int killed_by_sound = 0;
  int killed_by_other = 0;  // killed by assertions of properties that are not Sound
  int killed_by_crash = 0;
  int timed_out = 0;
  int survived = 0;
  int total = 0;
  std::vector<std::string> surviving_mutant_ids;  // not killed by a sound property, crash and timeout excluded

  int denominator() const { return total - killed_by_crash - timed_out; }
};

void to_json(nlohmann::json& j, const Strength& s);
void from_json(const nlohmann::json& j, Strength& s);

/// |KilledByAssertion with every killer Sound| / |mutants - KilledByCrash - Timeout|.
/// Throws NoMutants when the denominator is zero.
Strength property_strength(const std::vector<MutantResult>& mutants, const std::vector<SoundnessVerdict>& verdicts);

enum class IssueKind { InvalidGenerator, LowDiversityGenerator, InvalidProperty, UnsoundProperty, WeakProperty };
std::string_view to_string(IssueKind k);
IssueKind issue_kind_from_string(std::string_view name);
inline constexpr IssueKind kAllIssueKinds[] = {IssueKind::InvalidGenerator, IssueKind::LowDiversityGenerator,
                                               IssueKind::InvalidProperty, IssueKind::UnsoundProperty,
                                               IssueKind::WeakProperty};

/// Evidence tag expected for each issue kind: "error", "coverage", "error",
/// "counterexample", "mutants".
std::string_view evidence_tag(IssueKind k);

struct Issue {
  std::string id;  // "e<evaluation>-i<n>"
  IssueKind kind = IssueKind::InvalidGenerator;
  std::string subject;  // property id, generator name or "properties"
  nlohmann::json evidence;

  /// Throws InvalidArgument when the evidence tag does not match the kind.
  void validate() const;
  bool operator==(const Issue&) const = default;
};

void to_json(nlohmann::json& j, const Issue& i);
void from_json(const nlohmann::json& j, Issue& i);

inline constexpr const char* kScorecardSchema = "pbt-scorecard/1";

struct QualityScorecard {
  double generator_validity = 0;
  std::optional<Diversity> generator_diversity;  // empty when coverage was not collected
  double property_validity = 0;
  std::optional<double> property_soundness;
  std::optional<double> property_strength;  // empty when mutation is off or nothing counts
  std::vector<SoundnessVerdict> verdicts;
  std::map<std::string, bool> property_valid;
  std::optional<Strength> strength;
  std::vector<Issue> issues;
  int n_runs = 0;
  int n_mutants = 0;
  int n_properties = 0;
  bool partial = false;
  Thresholds thresholds;

  std::vector<std::string> indeterminate_properties() const;
  bool has_issue(IssueKind k) const;
  const Issue* find_issue(const std::string& id) const;
};

void to_json(nlohmann::json& j, const QualityScorecard& s);
void from_json(const nlohmann::json& j, QualityScorecard& s);

struct ScorecardInputs {
  const RunReport* report = nullptr;                 // ExecPbt report
  const std::vector<MutantResult>* mutants = nullptr;  // null when mutation is off
  std::map<std::string, std::string> mutant_diffs;  // mutant id -> diff, for evidence
  std::string generator_name = "generator";
  std::string issue_prefix = "e1";
};

/// Computes every metric and flags issues in kind order, then by subject.
QualityScorecard build_scorecard(const ScorecardInputs& in, const Thresholds& th = {});

struct MetricSummary {
  double mean = 0;
  double min = 0;
  double max = 0;
  int count = 0;  // scorecards where the metric was defined
  bool operator==(const MetricSummary&) const = default;
};

struct AggregateMetrics {
  int n_scorecards = 0;
  std::map<std::string, MetricSummary> metrics;  // generator_validity, statement_coverage, ...
  std::map<std::string, int> issue_free;         // issue kind -> scorecards without it
  int total_runs = 0;
};

void to_json(nlohmann::json& j, const AggregateMetrics& a);
void from_json(const nlohmann::json& j, AggregateMetrics& a);

/// Mean/min/max of each ratio plus per-kind issue-free counts. Throws
/// InvalidArgument for an empty list.
AggregateMetrics aggregate(const std::vector<QualityScorecard>& scorecards);

/// Names of the aggregated metrics in display order.
const std::vector<std::string>& metric_names();

/// Human-readable scorecard summary.
std::string render_scorecard_text(const QualityScorecard& s);

}  // namespace pbtw
