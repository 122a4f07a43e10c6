// Acceptance checks for the core modules. Prints one PASS/FAIL line per
// criterion and exits non-zero if any fails. Runs offline: replay fixtures
// for the model and the scripted runner for execution.
#include <chrono>
#include <functional>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "oracles.hpp"
#include "pbtw/assembly.hpp"
#include "pbtw/error.hpp"
#include "pbtw/metrics.hpp"
#include "pbtw/prompts.hpp"
#include "pbtw/runner.hpp"
#include "pbtw/session.hpp"
#include "pbtw/util.hpp"
#include "support.hpp"

using namespace pbtw;
using nlohmann::json;
namespace ts = testsupport;

namespace {

// pinned limits
constexpr int kReports = 1000;
constexpr int kMaxRuns = 50;
constexpr double kMetricsSeconds = 10.0;
constexpr double kStrength20 = 0.6875;  // exact

struct Outcome {
  bool pass = true;
  std::string detail;
};

#define CHECK_OR_FAIL(cond, msg)          \
  do {                                    \
    if (!(cond)) return Outcome{false, msg}; \
  } while (0)

Outcome metrics_vs_oracle() {
  oracle::Rng rng(1);
  auto t0 = std::chrono::steady_clock::now();
  int mismatches = 0, strength_checked = 0;
  std::string first;
  auto miss = [&](int i, const std::string& what) {
    if (mismatches++ == 0) first = "report " + std::to_string(i) + ": " + what;
  };
  for (int i = 0; i < kReports; ++i) {
    auto syn = oracle::random_synthetic(rng, kMaxRuns);
    const auto& r = syn.report;
    if (generator_validity(r) != oracle::validity(r.outcomes)) miss(i, "generator validity");
    auto valid = oracle::property_valid(r.property_ids, r.outcomes);
    auto pv = property_validity(r, r.property_ids);
    if (pv.valid != valid) miss(i, "property validity");
    int n_valid = 0;
    std::set<std::string> invalid;
    for (const auto& [id, ok] : valid) {
      n_valid += ok;
      if (!ok) invalid.insert(id);
    }
    if (pv.ratio != static_cast<double>(n_valid) / static_cast<double>(valid.size())) miss(i, "validity ratio");
    auto want = oracle::verdicts(r.property_ids, r.outcomes, 0.10);
    auto got = property_soundness(r, 0.10, invalid);
    for (const auto& v : got.verdicts) {
      const auto& w = want.at(v.property_id);
      if (v.verdict != w.verdict || v.failures != w.failures || v.runs_reached != w.reached) miss(i, "verdict");
    }
    if (got.ratio != oracle::soundness_ratio(want, valid)) miss(i, "soundness ratio");
    auto ws = oracle::strength(syn.mutants, want);
    try {
      double s = property_strength(syn.mutants, got.verdicts).score;
      if (!ws || s != *ws) miss(i, "strength");
      ++strength_checked;
    } catch (const Error& e) {
      if (ws || e.code() != ErrorCode::NoMutants) miss(i, "strength error");
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d;
  d << kReports << " reports, " << strength_checked << " with strength, " << mismatches << " mismatches, " << secs
    << " s (limit " << kMetricsSeconds << " s)";
  if (mismatches) d << "; first: " << first;
  return {mismatches == 0 && secs < kMetricsSeconds, d.str()};
}

Outcome threshold_semantics() {
  // rates over 1000 reached runs: 0, .05, .10, .10 + 1/1000, .5, 1
  const int failures[] = {0, 50, 100, 101, 500, 1000};
  const Verdict want[] = {Verdict::Sound, Verdict::Sound, Verdict::Sound, Verdict::Unsound, Verdict::Unsound, Verdict::Unsound};
  std::string got;
  bool ok = true;
  for (int i = 0; i < 6; ++i) {
    std::vector<RunOutcome> outs;
    for (int r = 0; r < 1000; ++r) {
      RunOutcome o;
      o.run_index = r;
      o.phase = Phase::check("P1");
      if (r < failures[i]) {
        o.status = RunStatus::AssertionFailure;
        o.failed_property_ids = {"P1"};
        o.error_type = "AssertionError";
      }
      outs.push_back(o);
    }
    auto v = property_soundness(RunReport::from_outcomes({"P1"}, outs), 0.10).verdicts.at(0).verdict;
    ok = ok && v == want[i] && judge_soundness("P1", failures[i], 1000, 0.10).verdict == want[i];
    got += (i ? ", " : "") + std::string(to_string(v));
  }
  return {ok, "verdicts {" + got + "}"};
}

Outcome strength_exclusion() {
  auto doc = json::parse(ts::fixture_text("metrics/mutants20.json"));
  auto ms = doc.at("mutant_results").get<std::vector<MutantResult>>();
  auto vs = doc.at("verdicts").get<std::vector<SoundnessVerdict>>();
  int crash = 0, sound = 0, survived = 0;
  for (const auto& m : ms) {
    crash += m.classification == MutantClass::KilledByCrash;
    sound += m.classification == MutantClass::KilledByAssertion;
    survived += m.classification == MutantClass::Survived;
  }
  CHECK_OR_FAIL(ms.size() == 20 && crash == 4 && sound == 11 && survived == 5, "fixture is not 4/11/5");
  double score = property_strength(ms, vs).score;
  int lowered = 0;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (ms[i].classification != MutantClass::KilledByCrash) continue;
    auto flipped = ms;
    flipped[i].classification = MutantClass::Survived;
    lowered += property_strength(flipped, vs).score < score;
  }
  std::ostringstream d;
  d << "score " << score << " (want " << kStrength20 << "), " << lowered << "/4 crash flips lower it";
  return {score == kStrength20 && lowered == 4, d.str()};
}

std::string render_golden(const std::map<std::string, std::vector<PromptMessage>>& transcripts) {
  std::string out;
  for (const auto& [name, msgs] : transcripts) {
    for (const auto& m : msgs) out += "=== " + name + ": " + std::string(to_string(m.role)) + " ===\n" + m.text + "\n";
  }
  return out;
}

Outcome golden_prompts_and_combined_cumsum() {
  const std::map<std::string, std::string> generator_names{
      {"cumsum", "generate_array"}, {"find_cycle", "generate_graph"}, {"total_seconds", "sample_datetime_timedelta"}};
  int matched = 0;
  std::string bad;
  for (const auto& [name, reply_generator] : generator_names) {
    auto target = ts::target(name);
    auto gen_task = PromptTask::generator();
    gen_task.generator_name = default_generator_name(target);
    auto gen_prompt = build_synthesis_prompt(target, gen_task);
    std::map<std::string, std::map<std::string, std::vector<PromptMessage>>> expected;
    expected["independent"] = {{"generator", gen_prompt}, {"properties", build_synthesis_prompt(target, PromptTask::properties())}};
    auto consecutive = gen_prompt;
    consecutive.push_back(build_consecutive_followup(target, reply_generator));
    expected["consecutive"] = {{"main", consecutive}};
    expected["together"] = {{"main", build_synthesis_prompt(target, PromptTask::combined())}};
    for (const auto& [strategy, transcripts] : expected) {
      auto file = "golden/prompts/" + name + "-" + strategy + ".txt";
      if (ts::fixture_text(file) == render_golden(transcripts)) {
        ++matched;
      } else {
        bad += " " + file;
      }
    }
  }
  CHECK_OR_FAIL(matched == 9, std::to_string(matched) + "/9 golden prompt files match; differing:" + bad);

  auto code = extract_code({Role::Assistant, ts::as_reply(ts::fixture_text("code/cumsum_combined.py"))}).source_text;
  auto test = instrument_combined(code, ts::target("cumsum"));
  CHECK_OR_FAIL(test.properties.size() == 3, "combined cumsum test yields " + std::to_string(test.properties.size()) + " properties");
  const auto& p = test.properties;
  bool guards = p[0].guard == std::optional<std::string>("axis is not None or a.ndim == 1") && !p[1].guard &&
                p[2].guard == std::optional<std::string>("not np.issubdtype(a.dtype, np.floating)");
  CHECK_OR_FAIL(guards, "combined cumsum guards differ: " + json(p).dump());
  validate_phase_map(test);
  return {true, "9/9 golden prompt files match; combined cumsum test gives P1..P3 with the documented guards"};
}

bool rejects_with_invalid_state(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == ErrorCode::InvalidState;
  }
  return false;
}

Outcome session_audit() {
  ts::TempDir data;
  RunnerPool pool(RunnerCommand::parse(ts::runner_command()), {}, 1);
  SessionManager mgr({data.path(), nullptr, {}, &pool});
  const std::string id = "flow-cumsum-unsound";
  EvaluationPlanConfig plan;
  plan.n_runs = 200;
  plan.seed = 11;

  mgr.open(ts::target("cumsum"), Strategy::Consecutive, ts::replay("replay-ordinal"), id);
  // pre-state violations in Synthesized
  int rejected = 0, attempted = 0;
  auto expect_reject = [&](const std::function<void()>& f) {
    ++attempted;
    rejected += rejects_with_invalid_state(f);
  };
  expect_reject([&] { mgr.choose_mitigation(id, "e1-i1"); });
  expect_reject([&] { mgr.apply_mitigation(id); });

  auto card = mgr.evaluate(id, plan);
  const Issue* unsound = nullptr;
  for (const auto& i : card.issues) {
    if (i.kind == IssueKind::UnsoundProperty) unsound = &i;
  }
  CHECK_OR_FAIL(unsound, "first evaluation flags no unsound property");
  expect_reject([&] { mgr.apply_mitigation(id); });  // Reviewed
  mgr.choose_mitigation(id, unsound->id);
  expect_reject([&] { mgr.evaluate(id, plan); });  // Mitigating
  expect_reject([&] { mgr.choose_mitigation(id, unsound->id); });
  int v2 = mgr.apply_mitigation(id);
  CHECK_OR_FAIL(v2 == 2, "mitigation produced version " + std::to_string(v2));
  auto card2 = mgr.evaluate(id, plan);
  CHECK_OR_FAIL(!card2.has_issue(IssueKind::UnsoundProperty), "mitigated test is still unsound");
  mgr.close(id);
  expect_reject([&] { mgr.evaluate(id, plan); });
  expect_reject([&] { mgr.choose_mitigation(id, "e2-i1"); });
  expect_reject([&] { mgr.apply_mitigation(id); });
  expect_reject([&] { mgr.close(id); });

  // journal replay: every version re-derived and compared with the stored bytes
  auto verify = verify_session(mgr.session_dir(id), TemplateSet::shipped(), ts::fixture("replay-ordinal"));
  CHECK_OR_FAIL(verify.ok && verify.versions_checked == 2,
                "journal replay failed: " + (verify.problems.empty() ? std::string("?") : verify.problems[0]));
  auto reloaded = load_session(mgr.session_dir(id));
  for (const auto& a : reloaded.artifacts) {
    auto stored = read_file(mgr.session_dir(id) / "artifacts" / a.test_sha);
    CHECK_OR_FAIL(stored == a.test.source_text, "stored artifact differs from journal");
  }

  // journal events applied outside their pre-state; the table follows the state machine
  using S = SessionState;
  const std::map<std::string, std::set<S>> allowed{
      {"message", {S::Drafting, S::Mitigating}},
      {"artifact", {S::Drafting, S::Mitigating}},
      {"synthesis_failed", {S::Drafting}},
      {"evaluation_started", {S::Synthesized, S::Reviewed}},
      {"evaluation_failed", {S::Evaluating}},
      {"evaluated", {S::Evaluating}},
      {"mitigation_chosen", {S::Reviewed}},
      {"mitigation_confirmed", {S::AwaitingChoice}},
      {"mitigation_applied", {S::Mitigating}},
      {"mitigation_failed", {S::Mitigating}},
      {"closed", {S::Drafting, S::Synthesized, S::Reviewed, S::AwaitingChoice, S::Mitigating}},
  };
  const S states[] = {S::Drafting, S::Synthesized, S::Evaluating, S::Reviewed, S::AwaitingChoice, S::Mitigating, S::Closed};
  int journal_checked = 0, journal_rejected = 0;
  for (const auto& [event, ok_states] : allowed) {
    for (auto st : states) {
      if (ok_states.count(st)) continue;
      Session probe = reloaded;
      probe.state = st;
      ++journal_checked;
      journal_rejected += rejects_with_invalid_state([&] { probe.apply({{"event", event}}); });
    }
  }
  {
    Session probe = reloaded;
    ++journal_checked;
    journal_rejected += rejects_with_invalid_state([&] { probe.apply({{"event", "opened"}}); });
  }

  std::ostringstream d;
  d << "2 versions replayed byte-for-byte; " << rejected << "/" << attempted << " operations and " << journal_rejected
    << "/" << journal_checked << " journal events rejected outside their pre-state";
  return {rejected == attempted && journal_rejected == journal_checked, d.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int number;
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "metric formulas equal a brute-force recount", metrics_vs_oracle},
      {2, "soundness threshold is strictly above 10%", threshold_semantics},
      {3, "strength excludes crash kills", strength_exclusion},
      {4, "golden prompts and combined cumsum assembly", golden_prompts_and_combined_cumsum},
      {5, "session journal replays every artifact version", session_audit},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.number << ": " << c.name << " -- " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
