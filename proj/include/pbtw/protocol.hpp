#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/assembly.hpp"
#include "pbtw/prompts.hpp"

namespace pbtw {

inline constexpr const char* kProtocolVersion = "1";

enum class RequestKind { ExecGenerator, ExecPbt, ListMutants, ExecMutant, ParseInstrument, Ping };

std::string_view to_string(RequestKind kind);
RequestKind request_kind_from_string(std::string_view name);

struct RunnerRequest {
  std::string id;
  RequestKind kind = RequestKind::Ping;
  std::optional<std::string> code;
  std::optional<TargetApi> target;
  int n_runs = 1;
  std::uint64_t seed = 0;
  std::chrono::milliseconds per_run_timeout{2000};
  std::optional<std::string> mutant_id;
  std::optional<std::vector<std::string>> operators;
  bool collect_coverage = false;
  std::optional<std::string> generator_name;  // ExecGenerator
  std::optional<std::string> mode;            // ParseInstrument: "properties" or "combined"

  /// Throws InvalidArgument when kind-specific fields are missing.
  void validate() const;

  bool operator==(const RunnerRequest&) const = default;
};

void to_json(nlohmann::json& j, const RunnerRequest& r);
void from_json(const nlohmann::json& j, RunnerRequest& r);

struct RunnerResponse {
  std::string id;
  bool ok = true;
  nlohmann::json payload = nlohmann::json::object();
  std::string error_type;
  std::string error_message;
};

void to_json(nlohmann::json& j, const RunnerResponse& r);
/// Throws ProtocolError on frames missing id/ok or with the wrong shape.
RunnerResponse parse_response_frame(const std::string& line);

enum class RunStatus { Ok, GeneratorError, ApiException, AssertionFailure, PropertyError, Timeout };

std::string_view to_string(RunStatus s);
RunStatus run_status_from_string(std::string_view name);

struct RunOutcome {
  int run_index = 0;
  RunStatus status = RunStatus::Ok;
  Phase phase;  // last phase entered during the run
  std::optional<std::string> error_type;
  std::optional<std::string> error_message;
  std::vector<std::string> failed_property_ids;
  std::vector<std::string> errored_property_ids;
  std::optional<std::string> input_rendering;
  double elapsed_ms = 0;

  /// Throws InvalidArgument on inconsistent status/fields.
  void validate() const;

  bool operator==(const RunOutcome&) const = default;
};

void to_json(nlohmann::json& j, const RunOutcome& o);
void from_json(const nlohmann::json& j, RunOutcome& o);

struct CoverageData {
  std::string scope;  // target qualname
  int statements_total = 0;
  int branches_total = 0;
  std::set<int> hit_lines;
  std::set<std::string> hit_branches;         // "from->to" arcs
  std::vector<std::string> missed_branches;   // arcs never taken, for diversity evidence

  int statements_hit() const { return static_cast<int>(hit_lines.size()); }
  int branches_hit() const { return static_cast<int>(hit_branches.size()); }

  /// Union over runs; the scope and totals must agree.
  CoverageData& merge(const CoverageData& other);
  void validate() const;

  bool operator==(const CoverageData&) const = default;
};

void to_json(nlohmann::json& j, const CoverageData& c);
void from_json(const nlohmann::json& j, CoverageData& c);

struct RunReport {
  std::vector<std::string> property_ids;
  std::vector<RunOutcome> outcomes;
  std::optional<CoverageData> coverage;
  std::map<std::string, int> per_property_failure_counts;
  std::map<std::string, int> per_property_error_counts;
  std::map<std::string, int> per_property_reached_counts;
  int n_runs_requested = 0;
  bool partial = false;

  /// Builds a report and derives the per-property counts from the outcomes.
  static RunReport from_outcomes(std::vector<std::string> property_ids, std::vector<RunOutcome> outcomes,
                                 std::optional<CoverageData> coverage = std::nullopt, int n_runs_requested = -1,
                                 bool partial = false);

  /// True if the run entered Check(id): its last phase is Check(id) or a later
  /// check, or it completed without error.
  bool reached(const RunOutcome& o, const std::string& property_id) const;

  /// Throws InvalidArgument when the counts disagree with the outcomes.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);

enum class MutationOperator {
  ArithmeticOpReplace,
  RelationalOpReplace,
  BooleanOpReplace,
  ConstantPerturb,
  NegateCondition,
  StatementDelete,
};

std::string_view to_string(MutationOperator op);
MutationOperator mutation_operator_from_string(std::string_view name);

struct Mutant {
  std::string mutant_id;
  MutationOperator op = MutationOperator::ArithmeticOpReplace;
  int line = 0;
  int column = 0;
  std::string diff;

  bool operator==(const Mutant&) const = default;
};

void to_json(nlohmann::json& j, const Mutant& m);
void from_json(const nlohmann::json& j, Mutant& m);

enum class MutantClass { KilledByAssertion, KilledByCrash, Survived, Timeout };

std::string_view to_string(MutantClass c);
MutantClass mutant_class_from_string(std::string_view name);

struct MutantResult {
  std::string mutant_id;
  MutantClass classification = MutantClass::Survived;
  std::vector<std::string> killing_property_ids;
  int runs_executed = 0;

  void validate() const;
  bool operator==(const MutantResult&) const = default;
};

void to_json(nlohmann::json& j, const MutantResult& m);
void from_json(const nlohmann::json& j, MutantResult& m);

/// Per-run seed: splitmix64 applied to the seed advanced by run_index + 1
/// golden-gamma steps, so run i is reproducible on its own.
std::uint64_t derive_run_seed(std::uint64_t seed, std::uint64_t run_index);

}  // namespace pbtw
