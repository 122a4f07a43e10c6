#include "scenario.hpp"

#include <cmath>

#include "pbtw/assembly.hpp"
#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace replay_runner {

using nlohmann::json;
using pbtw::Error;
using pbtw::ErrorCode;

bool fires(int i, double rate) {
  if (rate <= 0) return false;
  // the epsilon keeps 0.1 * 10 from landing just below 1
  return std::floor((i + 1) * rate + 1e-9) > std::floor(i * rate + 1e-9);
}

void Scenario::add(const json& doc) {
  for (const auto& e : doc.value("entries", json::array())) entries_.push_back(e);
  const json mutants = doc.value("mutants", json::object());  // items() must not outlive it
  for (const auto& [q, list] : mutants.items()) mutants_[q] = list;
}

void Scenario::load(const std::filesystem::path& file) { add(json::parse(pbtw::read_file(file))); }

const json* Scenario::match(const std::string& code) const {
  for (const auto& e : entries_) {
    bool all = true;
    for (const auto& s : e.value("match", json::array())) {
      if (code.find(s.get<std::string>()) == std::string::npos) {
        all = false;
        break;
      }
    }
    if (all) return &e;
  }
  return nullptr;
}

json Scenario::handle(const pbtw::RunnerRequest& req) const {
  switch (req.kind) {
    case pbtw::RequestKind::Ping: return json{{"version", pbtw::kProtocolVersion}};
    case pbtw::RequestKind::ExecPbt: return exec(req, false);
    case pbtw::RequestKind::ExecGenerator: return exec(req, true);
    case pbtw::RequestKind::ListMutants: return list_mutants(req);
    case pbtw::RequestKind::ExecMutant: return exec_mutant(req);
    case pbtw::RequestKind::ParseInstrument: return parse_instrument(req);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown request kind");
}

namespace {

std::string render_input(std::string text, long long draw) {
  auto at = text.find("{draw}");
  if (at != std::string::npos) text.replace(at, 6, std::to_string(draw));
  return text;
}

double rate_of(const json& spec) { return spec.value("rate", 0.0); }

}  // namespace

json Scenario::exec(const pbtw::RunnerRequest& req, bool generator_only) const {
  const json* e = match(*req.code);
  if (!e) throw Error(ErrorCode::RunnerError, "ScenarioMissing", "no scenario entry matches the submitted code");
  if (e->contains("fail_request")) {
    const auto& f = (*e)["fail_request"];
    throw Error(ErrorCode::RunnerError, f.value("type", "ImportFailure"), f.value("message", ""));
  }

  std::vector<std::string> props;
  if (!generator_only) props = pbtw::read_test_header(*req.code).at("properties").get<std::vector<std::string>>();

  const json gen_err = e->value("generator_error", json::object());
  const json draw = e->value("generator_draw", json());
  const json api = e->value("api_exception", json::object());
  const json timeout = e->value("timeout", json::object());
  const json failures = e->value("property_failures", json::object());
  const json errors = e->value("property_errors", json::object());
  const std::string input = e->value("input", std::string("<input>"));
  const int abort_after = e->value("abort_after", -1);

  json outcomes = json::array();
  int generated = 0;  // runs past the generator
  int reached = 0;    // runs that entered the checks
  bool aborted = false;
  for (int i = 0; i < req.n_runs; ++i) {
    if (abort_after >= 0 && i >= abort_after) {
      aborted = true;
      break;
    }
    pbtw::RunOutcome o;
    o.run_index = i;
    o.elapsed_ms = 1.0;
    long long value = 0;
    bool gen_failed = fires(i, rate_of(gen_err));
    if (draw.is_object()) {
      long long lo = draw.at("lo").get<long long>(), hi = draw.at("hi").get<long long>();
      value = lo + static_cast<long long>(pbtw::derive_run_seed(req.seed, i) % static_cast<std::uint64_t>(hi - lo + 1));
      if (value >= draw.at("error_if_at_least").get<long long>()) gen_failed = true;
    }
    o.input_rendering = render_input(input, value);
    if (gen_failed) {
      const json& src = draw.is_object() && !gen_err.contains("type") ? draw : gen_err;
      o.status = pbtw::RunStatus::GeneratorError;
      o.phase = pbtw::Phase::generate();
      o.error_type = src.value("type", "ValueError");
      o.error_message = render_input(src.value("message", ""), value);
      o.input_rendering.reset();
      outcomes.push_back(o);
      continue;
    }
    if (generator_only) {
      o.phase = pbtw::Phase::generate();
      outcomes.push_back(o);
      continue;
    }
    const int g = generated++;
    if (fires(g, rate_of(api))) {
      o.status = pbtw::RunStatus::ApiException;
      o.phase = pbtw::Phase::invoke();
      o.error_type = api.value("type", "ValueError");
      o.error_message = api.value("message", "");
      outcomes.push_back(o);
      continue;
    }
    if (fires(g, rate_of(timeout))) {
      o.status = pbtw::RunStatus::Timeout;
      o.phase = pbtw::Phase::invoke();
      o.error_type = "Timeout";
      o.error_message = "run exceeded its time budget";
      outcomes.push_back(o);
      continue;
    }
    const int r = reached++;
    std::optional<std::string> first_fail_msg, first_err_type, first_err_msg;
    for (const auto& p : props) {
      if (errors.contains(p) && fires(r, rate_of(errors[p]))) {
        o.errored_property_ids.push_back(p);
        if (!first_err_type) {
          first_err_type = errors[p].value("type", "TypeError");
          first_err_msg = errors[p].value("message", "");
        }
      } else if (failures.contains(p) && fires(r, rate_of(failures[p]))) {
        o.failed_property_ids.push_back(p);
        if (!first_fail_msg) first_fail_msg = failures[p].value("message", "");
        if (failures[p].contains("input")) o.input_rendering = render_input(failures[p]["input"], value);
      }
    }
    o.phase = props.empty() ? pbtw::Phase::invoke() : pbtw::Phase::check(props.back());
    if (!o.failed_property_ids.empty()) {
      o.status = pbtw::RunStatus::AssertionFailure;
      o.error_type = "AssertionError";
      o.error_message = *first_fail_msg;
    } else if (!o.errored_property_ids.empty()) {
      o.status = pbtw::RunStatus::PropertyError;
      o.error_type = first_err_type;
      o.error_message = first_err_msg;
    }
    outcomes.push_back(o);
  }

  json coverage = nullptr;
  if (req.collect_coverage && e->contains("coverage")) coverage = (*e)["coverage"];
  return json{{"outcomes", outcomes}, {"coverage", coverage}, {"aborted", aborted}};
}

json Scenario::list_mutants(const pbtw::RunnerRequest& req) const {
  const auto& q = req.target->qualname;
  if (!mutants_.contains(q)) throw Error(ErrorCode::RunnerError, "UnresolvedScope", "no mutants scripted for " + q);
  json out = json::array();
  for (const auto& m : mutants_[q]) {
    if (req.operators) {
      auto op = m.at("operator").get<std::string>();
      if (std::find(req.operators->begin(), req.operators->end(), op) == req.operators->end()) continue;
    }
    out.push_back(m);
  }
  return json{{"mutants", out}};
}

json Scenario::exec_mutant(const pbtw::RunnerRequest& req) const {
  const json* e = match(*req.code);
  if (!e) throw Error(ErrorCode::RunnerError, "ScenarioMissing", "no scenario entry matches the submitted code");
  const auto& id = *req.mutant_id;
  json rule = e->value("mutant_results", json::object()).value(id, json{{"classification", "Survived"}});
  const auto cls = rule.at("classification").get<std::string>();
  int runs = rule.value("runs_executed", cls == "Survived" ? req.n_runs : 1);
  return json{{"result",
               {{"mutant_id", id},
                {"classification", cls},
                {"killing_property_ids", rule.value("killing_property_ids", json::array())},
                {"runs_executed", runs}}}};
}

json Scenario::parse_instrument(const pbtw::RunnerRequest& req) const {
  if (*req.mode == "properties") return json{{"properties", pbtw::enumerate_properties(*req.code)}};
  if (!req.target) throw Error(ErrorCode::InvalidArgument, "combined instrumentation needs a target");
  return json{{"test", pbtw::instrument_combined(*req.code, *req.target)}};
}

}  // namespace replay_runner
