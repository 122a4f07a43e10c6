#include "pbtw/protocol.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "pbtw/error.hpp"

namespace pbtw {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, const char*>, N>& table, E value) {
  for (const auto& [e, name] : table) {
    if (e == value) return name;
  }
  return "?";
}

template <typename E, std::size_t N>
E value_of(const std::array<std::pair<E, const char*>, N>& table, std::string_view name, const char* what) {
  for (const auto& [e, n] : table) {
    if (name == n) return e;
  }
  throw Error(ErrorCode::InvalidArgument, std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr std::array<std::pair<RequestKind, const char*>, 6> kKinds{{
    {RequestKind::ExecGenerator, "ExecGenerator"},
    {RequestKind::ExecPbt, "ExecPbt"},
    {RequestKind::ListMutants, "ListMutants"},
    {RequestKind::ExecMutant, "ExecMutant"},
    {RequestKind::ParseInstrument, "ParseInstrument"},
    {RequestKind::Ping, "Ping"},
}};

constexpr std::array<std::pair<RunStatus, const char*>, 6> kStatuses{{
    {RunStatus::Ok, "Ok"},
    {RunStatus::GeneratorError, "GeneratorError"},
    {RunStatus::ApiException, "ApiException"},
    {RunStatus::AssertionFailure, "AssertionFailure"},
    {RunStatus::PropertyError, "PropertyError"},
    {RunStatus::Timeout, "Timeout"},
}};

constexpr std::array<std::pair<MutationOperator, const char*>, 6> kOperators{{
    {MutationOperator::ArithmeticOpReplace, "ArithmeticOpReplace"},
    {MutationOperator::RelationalOpReplace, "RelationalOpReplace"},
    {MutationOperator::BooleanOpReplace, "BooleanOpReplace"},
    {MutationOperator::ConstantPerturb, "ConstantPerturb"},
    {MutationOperator::NegateCondition, "NegateCondition"},
    {MutationOperator::StatementDelete, "StatementDelete"},
}};

constexpr std::array<std::pair<MutantClass, const char*>, 4> kClasses{{
    {MutantClass::KilledByAssertion, "KilledByAssertion"},
    {MutantClass::KilledByCrash, "KilledByCrash"},
    {MutantClass::Survived, "Survived"},
    {MutantClass::Timeout, "Timeout"},
}};

void bad(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
void get_opt(const json& j, const char* key, std::optional<T>& v) {
  v.reset();
  if (j.contains(key) && !j[key].is_null()) v = j[key].get<T>();
}

}  // namespace

std::string_view to_string(RequestKind kind) { return name_of(kKinds, kind); }
RequestKind request_kind_from_string(std::string_view name) { return value_of(kKinds, name, "request kind"); }
std::string_view to_string(RunStatus s) { return name_of(kStatuses, s); }
RunStatus run_status_from_string(std::string_view name) { return value_of(kStatuses, name, "run status"); }
std::string_view to_string(MutationOperator op) { return name_of(kOperators, op); }
MutationOperator mutation_operator_from_string(std::string_view name) {
  return value_of(kOperators, name, "mutation operator");
}
std::string_view to_string(MutantClass c) { return name_of(kClasses, c); }
MutantClass mutant_class_from_string(std::string_view name) { return value_of(kClasses, name, "mutant class"); }

void RunnerRequest::validate() const {
  if (id.empty()) bad("request id is empty");
  switch (kind) {
    case RequestKind::ExecGenerator:
      if (!code) bad("ExecGenerator needs code");
      if (!generator_name) bad("ExecGenerator needs generator_name");
      break;
    case RequestKind::ExecPbt:
      if (!code) bad("ExecPbt needs code");
      if (!target) bad("ExecPbt needs target");
      break;
    case RequestKind::ListMutants:
      if (!target) bad("ListMutants needs target");
      break;
    case RequestKind::ExecMutant:
      if (!mutant_id) bad("ExecMutant needs mutant_id");
      if (!code) bad("ExecMutant needs code");
      if (!target) bad("ExecMutant needs target");
      break;
    case RequestKind::ParseInstrument:
      if (!code) bad("ParseInstrument needs code");
      if (!mode) bad("ParseInstrument needs mode");
      break;
    case RequestKind::Ping:
      break;
  }
  if (n_runs < 1) bad("n_runs must be positive");
  if (per_run_timeout.count() <= 0) bad("per_run_timeout must be positive");
}

void to_json(json& j, const RunnerRequest& r) {
  j = json{{"id", r.id}, {"kind", to_string(r.kind)}};
  if (r.kind == RequestKind::Ping) return;
  put_opt(j, "code", r.code);
  put_opt(j, "target", r.target);
  put_opt(j, "mutant_id", r.mutant_id);
  put_opt(j, "operators", r.operators);
  put_opt(j, "generator_name", r.generator_name);
  put_opt(j, "mode", r.mode);
  if (r.kind != RequestKind::ListMutants && r.kind != RequestKind::ParseInstrument) {
    j["n_runs"] = r.n_runs;
    j["seed"] = r.seed;
    j["per_run_timeout_ms"] = r.per_run_timeout.count();
  }
  if (r.kind == RequestKind::ExecPbt) j["collect_coverage"] = r.collect_coverage;
}

void from_json(const json& j, RunnerRequest& r) {
  r.id = j.at("id").get<std::string>();
  r.kind = request_kind_from_string(j.at("kind").get<std::string>());
  get_opt(j, "code", r.code);
  get_opt(j, "target", r.target);
  get_opt(j, "mutant_id", r.mutant_id);
  get_opt(j, "operators", r.operators);
  get_opt(j, "generator_name", r.generator_name);
  get_opt(j, "mode", r.mode);
  r.n_runs = j.value("n_runs", 1);
  r.seed = j.value("seed", std::uint64_t{0});
  r.per_run_timeout = std::chrono::milliseconds(j.value("per_run_timeout_ms", 2000));
  r.collect_coverage = j.value("collect_coverage", false);
}

void to_json(json& j, const RunnerResponse& r) {
  if (r.ok) {
    j = json{{"id", r.id}, {"ok", true}, {"payload", r.payload}};
  } else {
    j = json{{"id", r.id}, {"ok", false}, {"error", {{"type", r.error_type}, {"message", r.error_message}}}};
  }
}

RunnerResponse parse_response_frame(const std::string& line) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::ProtocolError, why + "; raw frame: " + line);
  };
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail("frame is not a JSON object");
  if (!j.contains("id") || !j["id"].is_string()) fail("frame has no string id");
  if (!j.contains("ok") || !j["ok"].is_boolean()) fail("frame has no boolean ok");
  RunnerResponse r;
  r.id = j["id"].get<std::string>();
  r.ok = j["ok"].get<bool>();
  if (r.ok) {
    if (!j.contains("payload") || !j["payload"].is_object()) fail("ok frame has no payload object");
    r.payload = j["payload"];
  } else {
    const auto& e = j.contains("error") ? j["error"] : json();
    if (!e.is_object() || !e.contains("type") || !e["type"].is_string()) fail("error frame has no error.type");
    r.error_type = e["type"].get<std::string>();
    r.error_message = e.value("message", std::string{});
  }
  return r;
}

void RunOutcome::validate() const {
  if (status == RunStatus::Ok && (error_type || error_message)) bad("Ok outcome carries error fields");
  if (status == RunStatus::AssertionFailure && failed_property_ids.empty()) {
    bad("AssertionFailure outcome names no failed property");
  }
  if (status == RunStatus::PropertyError && errored_property_ids.empty()) {
    bad("PropertyError outcome names no errored property");
  }
  if (status != RunStatus::AssertionFailure && !failed_property_ids.empty()) {
    bad("only AssertionFailure outcomes list failed properties");
  }
}

void to_json(json& j, const RunOutcome& o) {
  j = json{{"run_index", o.run_index},
           {"status", to_string(o.status)},
           {"phase", o.phase.label()},
           {"failed_property_ids", o.failed_property_ids},
           {"errored_property_ids", o.errored_property_ids},
           {"elapsed_ms", o.elapsed_ms}};
  put_opt(j, "error_type", o.error_type);
  put_opt(j, "error_message", o.error_message);
  put_opt(j, "input_rendering", o.input_rendering);
}

void from_json(const json& j, RunOutcome& o) {
  o.run_index = j.at("run_index").get<int>();
  o.status = run_status_from_string(j.at("status").get<std::string>());
  o.phase = Phase::parse(j.at("phase").get<std::string>());
  get_opt(j, "error_type", o.error_type);
  get_opt(j, "error_message", o.error_message);
  get_opt(j, "input_rendering", o.input_rendering);
  o.failed_property_ids = j.value("failed_property_ids", std::vector<std::string>{});
  o.errored_property_ids = j.value("errored_property_ids", std::vector<std::string>{});
  o.elapsed_ms = j.value("elapsed_ms", 0.0);
}

CoverageData& CoverageData::merge(const CoverageData& other) {
  if (scope != other.scope || statements_total != other.statements_total || branches_total != other.branches_total) {
    throw Error(ErrorCode::UnresolvedScope, "cannot merge coverage of different scopes");
  }
  hit_lines.insert(other.hit_lines.begin(), other.hit_lines.end());
  hit_branches.insert(other.hit_branches.begin(), other.hit_branches.end());
  std::vector<std::string> missed;
  for (const auto& b : missed_branches) {
    if (!hit_branches.count(b)) missed.push_back(b);
  }
  missed_branches = std::move(missed);
  return *this;
}

void CoverageData::validate() const {
  if (statements_hit() > statements_total || branches_hit() > branches_total) bad("coverage hit exceeds total");
  if (!scope.empty() && statements_total <= 0) bad("resolved scope has no statements");
}

void to_json(json& j, const CoverageData& c) {
  j = json{{"scope", c.scope},
           {"statements_hit", c.statements_hit()},
           {"statements_total", c.statements_total},
           {"branches_hit", c.branches_hit()},
           {"branches_total", c.branches_total},
           {"hit_lines", c.hit_lines},
           {"hit_branches", c.hit_branches},
           {"missed_branches", c.missed_branches}};
}

void from_json(const json& j, CoverageData& c) {
  c.scope = j.value("scope", std::string{});
  c.statements_total = j.at("statements_total").get<int>();
  c.branches_total = j.at("branches_total").get<int>();
  c.hit_lines = j.value("hit_lines", std::set<int>{});
  c.hit_branches = j.value("hit_branches", std::set<std::string>{});
  c.missed_branches = j.value("missed_branches", std::vector<std::string>{});
  c.validate();
}

bool RunReport::reached(const RunOutcome& o, const std::string& property_id) const {
  if (o.status == RunStatus::Ok) return true;
  if (o.phase.kind != Phase::Kind::Check) return false;
  auto at = std::find(property_ids.begin(), property_ids.end(), o.phase.property_id);
  auto want = std::find(property_ids.begin(), property_ids.end(), property_id);
  if (at == property_ids.end() || want == property_ids.end()) return false;
  return want <= at;
}

RunReport RunReport::from_outcomes(std::vector<std::string> property_ids, std::vector<RunOutcome> outcomes,
                                   std::optional<CoverageData> coverage, int n_runs_requested, bool partial) {
  RunReport r;
  r.property_ids = std::move(property_ids);
  r.outcomes = std::move(outcomes);
  r.coverage = std::move(coverage);
  r.n_runs_requested = n_runs_requested < 0 ? static_cast<int>(r.outcomes.size()) : n_runs_requested;
  r.partial = partial;
  for (const auto& id : r.property_ids) {
    r.per_property_failure_counts[id] = 0;
    r.per_property_error_counts[id] = 0;
    r.per_property_reached_counts[id] = 0;
  }
  for (const auto& o : r.outcomes) {
    for (const auto& id : r.property_ids) {
      if (r.reached(o, id)) ++r.per_property_reached_counts[id];
    }
    for (const auto& id : o.failed_property_ids) ++r.per_property_failure_counts[id];
    for (const auto& id : o.errored_property_ids) ++r.per_property_error_counts[id];
  }
  return r;
}

void RunReport::validate() const {
  auto again = from_outcomes(property_ids, outcomes, coverage, n_runs_requested, partial);
  if (again.per_property_failure_counts != per_property_failure_counts ||
      again.per_property_error_counts != per_property_error_counts ||
      again.per_property_reached_counts != per_property_reached_counts) {
    bad("per-property counts disagree with outcomes");
  }
  for (const auto& o : outcomes) o.validate();
  for (const auto& id : property_ids) {
    if (per_property_failure_counts.at(id) > per_property_reached_counts.at(id)) {
      bad("property " + id + " failed more often than it was reached");
    }
  }
  if (!partial && static_cast<int>(outcomes.size()) != n_runs_requested) bad("complete report has wrong run count");
  if (coverage) coverage->validate();
}

void to_json(json& j, const RunReport& r) {
  j = json{{"property_ids", r.property_ids},
           {"outcomes", r.outcomes},
           {"per_property_failure_counts", r.per_property_failure_counts},
           {"per_property_error_counts", r.per_property_error_counts},
           {"per_property_reached_counts", r.per_property_reached_counts},
           {"n_runs_requested", r.n_runs_requested},
           {"partial", r.partial}};
  j["coverage"] = r.coverage ? json(*r.coverage) : json(nullptr);
}

void from_json(const json& j, RunReport& r) {
  std::optional<CoverageData> cov;
  get_opt(j, "coverage", cov);
  r = RunReport::from_outcomes(j.at("property_ids").get<std::vector<std::string>>(),
                               j.at("outcomes").get<std::vector<RunOutcome>>(), cov,
                               j.value("n_runs_requested", -1), j.value("partial", false));
}

void to_json(json& j, const Mutant& m) {
  j = json{{"mutant_id", m.mutant_id},
           {"operator", to_string(m.op)},
           {"location", {m.line, m.column}},
           {"diff", m.diff}};
}

void from_json(const json& j, Mutant& m) {
  m.mutant_id = j.at("mutant_id").get<std::string>();
  m.op = mutation_operator_from_string(j.at("operator").get<std::string>());
  const auto& loc = j.at("location");
  m.line = loc.at(0).get<int>();
  m.column = loc.at(1).get<int>();
  m.diff = j.value("diff", std::string{});
}

void MutantResult::validate() const {
  if (classification == MutantClass::KilledByAssertion && killing_property_ids.empty()) {
    bad("mutant " + mutant_id + " killed by assertion names no property");
  }
}

void to_json(json& j, const MutantResult& m) {
  j = json{{"mutant_id", m.mutant_id},
           {"classification", to_string(m.classification)},
           {"killing_property_ids", m.killing_property_ids},
           {"runs_executed", m.runs_executed}};
}

void from_json(const json& j, MutantResult& m) {
  m.mutant_id = j.at("mutant_id").get<std::string>();
  m.classification = mutant_class_from_string(j.at("classification").get<std::string>());
  m.killing_property_ids = j.value("killing_property_ids", std::vector<std::string>{});
  m.runs_executed = j.value("runs_executed", 0);
  m.validate();
}

std::uint64_t derive_run_seed(std::uint64_t seed, std::uint64_t run_index) {
  std::uint64_t z = seed + (run_index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace pbtw
