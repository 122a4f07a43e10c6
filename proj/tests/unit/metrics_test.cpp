#include <gtest/gtest.h>

#include "json.hpp"
#include "oracles.hpp"
#include "pbtw/error.hpp"
#include "pbtw/metrics.hpp"
#include "support.hpp"

namespace {

using namespace pbtw;
using nlohmann::json;

RunOutcome ok_run(int i, const std::string& last) {
  RunOutcome o;
  o.run_index = i;
  o.phase = Phase::check(last);
  return o;
}

RunOutcome failing_run(int i, std::vector<std::string> failed, const std::string& last) {
  RunOutcome o = ok_run(i, last);
  o.status = RunStatus::AssertionFailure;
  o.failed_property_ids = std::move(failed);
  o.error_type = "AssertionError";
  return o;
}

RunOutcome generator_error(int i, const std::string& type = "OverflowError") {
  RunOutcome o;
  o.run_index = i;
  o.status = RunStatus::GeneratorError;
  o.phase = Phase::generate();
  o.error_type = type;
  o.error_message = "date value out of range";
  return o;
}

// n runs over one property, `failures` of which fail it
RunReport one_property(int n, int failures) {
  std::vector<RunOutcome> outs;
  for (int i = 0; i < n; ++i) outs.push_back(i < failures ? failing_run(i, {"P1"}, "P1") : ok_run(i, "P1"));
  return RunReport::from_outcomes({"P1"}, outs);
}

std::vector<MutantResult> load_mutants20() {
  auto doc = json::parse(testsupport::fixture_text("metrics/mutants20.json"));
  return doc.at("mutant_results").get<std::vector<MutantResult>>();
}

std::vector<SoundnessVerdict> load_verdicts20() {
  auto doc = json::parse(testsupport::fixture_text("metrics/mutants20.json"));
  return doc.at("verdicts").get<std::vector<SoundnessVerdict>>();
}

TEST(GeneratorValidity, CountsRunsWithoutGeneratorErrors) {
  std::vector<RunOutcome> outs{ok_run(0, "P1"), generator_error(1), ok_run(2, "P1"), generator_error(3)};
  auto r = RunReport::from_outcomes({"P1"}, outs);
  EXPECT_DOUBLE_EQ(generator_validity(r), 0.5);
}

TEST(GeneratorValidity, EmptyReportIsRejected) {
  auto r = RunReport::from_outcomes({"P1"}, {});
  try {
    generator_validity(r);
    FAIL() << "expected EmptyReport";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyReport);
  }
}

// Reference value: 99% of 10,000 timedelta generator runs completed. The flagging
// threshold is strict so exactly 99% is not an issue while 98.99% is.
TEST(GeneratorValidity, NinetyNinePercentOfTenThousandRuns) {
  std::vector<RunOutcome> outs;
  for (int i = 0; i < 10000; ++i) outs.push_back(i % 100 == 0 ? generator_error(i) : ok_run(i, "P1"));
  auto r = RunReport::from_outcomes({"P1"}, outs);
  EXPECT_DOUBLE_EQ(generator_validity(r), 0.99);
  auto card = build_scorecard({&r});
  EXPECT_FALSE(card.has_issue(IssueKind::InvalidGenerator));

  outs[1] = generator_error(1);
  auto worse = RunReport::from_outcomes({"P1"}, outs);
  auto card2 = build_scorecard({&worse});
  ASSERT_TRUE(card2.has_issue(IssueKind::InvalidGenerator));
  EXPECT_EQ(card2.issues[0].evidence["error_type"], "OverflowError");
  EXPECT_EQ(card2.issues[0].evidence["count"], 101);
}

TEST(GeneratorDiversity, RatiosOfHitOverTotal) {
  CoverageData c;
  c.scope = "networkx.find_cycle";
  c.statements_total = 31;
  c.branches_total = 45;
  for (int i = 0; i < 27; ++i) c.hit_lines.insert(i);
  for (int i = 0; i < 32; ++i) c.hit_branches.insert(std::to_string(i) + "->" + std::to_string(i + 1));
  auto d = generator_diversity(c);
  // reference values for find_cycle: 87.1% statements, 71.1% branches
  EXPECT_NEAR(d.statements, 0.871, 5e-4);
  EXPECT_NEAR(d.branches, 0.711, 5e-4);
}

TEST(GeneratorDiversity, NoBranchesCountsAsFullyCovered) {
  CoverageData c;
  c.scope = "datetime.timedelta.total_seconds";
  c.statements_total = 4;
  c.hit_lines = {1, 2};
  EXPECT_EQ(generator_diversity(c), (Diversity{0.5, 1.0}));
}

TEST(GeneratorDiversity, ScopeWithoutStatementsIsUnresolved) {
  CoverageData c;
  c.scope = "nowhere";
  try {
    generator_diversity(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnresolvedScope);
  }
}

TEST(PropertyValidity, OneErroredRunInvalidatesTheProperty) {
  auto a = ok_run(0, "P2");
  auto b = ok_run(1, "P2");
  b.status = RunStatus::PropertyError;
  b.errored_property_ids = {"P2"};
  b.error_type = "AttributeError";
  auto r = RunReport::from_outcomes({"P1", "P2"}, {a, b});
  auto pv = property_validity(r, r.property_ids);
  EXPECT_TRUE(pv.valid["P1"]);
  EXPECT_FALSE(pv.valid["P2"]);
  EXPECT_DOUBLE_EQ(pv.ratio, 0.5);
}

// Threshold semantics: unsound only when the failure rate is strictly above 10%.
TEST(Soundness, ThresholdIsStrict) {
  struct Case {
    int failures, reached;
    Verdict want;
  };
  const Case cases[] = {{0, 100, Verdict::Sound},     {5, 100, Verdict::Sound},     {10, 100, Verdict::Sound},
                        {101, 1000, Verdict::Unsound}, {50, 100, Verdict::Unsound}, {100, 100, Verdict::Unsound}};
  for (const auto& c : cases) {
    EXPECT_EQ(judge_soundness("P1", c.failures, c.reached, 0.10).verdict, c.want) << c.failures << "/" << c.reached;
    auto r = one_property(c.reached, c.failures);
    EXPECT_EQ(property_soundness(r).verdicts.at(0).verdict, c.want);
  }
}

TEST(Soundness, TenOfHundredIsSoundEvenWithFloatingRate) {
  // 0.1 is not exactly representable; the rate 10/100 must still compare equal
  auto v = judge_soundness("P1", 10, 100, 0.10);
  EXPECT_EQ(v.verdict, Verdict::Sound);
  EXPECT_EQ(judge_soundness("P1", 1, 10, 0.1).verdict, Verdict::Sound);
  EXPECT_EQ(judge_soundness("P1", 3, 30, 0.1).verdict, Verdict::Sound);
}

TEST(Soundness, NeverReachedIsIndeterminate) {
  std::vector<RunOutcome> outs{generator_error(0), generator_error(1)};
  auto r = RunReport::from_outcomes({"P1"}, outs);
  auto s = property_soundness(r);
  EXPECT_EQ(s.verdicts[0].verdict, Verdict::Indeterminate);
  EXPECT_FALSE(s.ratio.has_value());
}

TEST(Soundness, RejectsImpossibleCounts) {
  EXPECT_THROW(judge_soundness("P1", 3, 2, 0.1), Error);
  EXPECT_THROW(judge_soundness("P1", -1, 2, 0.1), Error);
}

TEST(Soundness, InvalidPropertiesStayOutOfTheRatio) {
  auto bad = ok_run(0, "P2");
  bad.status = RunStatus::AssertionFailure;
  bad.failed_property_ids = {"P1"};
  bad.errored_property_ids = {"P2"};
  bad.error_type = "AssertionError";
  auto r = RunReport::from_outcomes({"P1", "P2"}, {bad});
  auto s = property_soundness(r, 0.1, {"P2"});
  ASSERT_TRUE(s.ratio);
  EXPECT_DOUBLE_EQ(*s.ratio, 0.0);  // only P1 counts, and it is unsound
}

TEST(Soundness, StrictModeOnlyReachesPropertiesUpToTheFailure) {
  auto r1 = ok_run(0, "P3");
  auto r2 = failing_run(1, {"P2"}, "P2");  // P3 never ran
  auto r = RunReport::from_outcomes({"P1", "P2", "P3"}, {r1, r2});
  EXPECT_EQ(r.per_property_reached_counts.at("P1"), 2);
  EXPECT_EQ(r.per_property_reached_counts.at("P2"), 2);
  EXPECT_EQ(r.per_property_reached_counts.at("P3"), 1);
}

// 11 sound kills over 20 - 4 crash kills = 0.6875
TEST(Strength, TwentyMutantFixture) {
  auto s = property_strength(load_mutants20(), load_verdicts20());
  EXPECT_EQ(s.killed_by_crash, 4);
  EXPECT_EQ(s.killed_by_sound, 11);
  EXPECT_EQ(s.survived, 5);
  EXPECT_EQ(s.denominator(), 16);
  EXPECT_EQ(s.score, 0.6875);
}

TEST(Strength, FlippingAnyCrashKillToSurvivedLowersTheScore) {
  auto base = load_mutants20();
  const auto verdicts = load_verdicts20();
  const double before = property_strength(base, verdicts).score;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (base[i].classification != MutantClass::KilledByCrash) continue;
    auto flipped = base;
    flipped[i].classification = MutantClass::Survived;
    EXPECT_LT(property_strength(flipped, verdicts).score, before) << base[i].mutant_id;
  }
}

TEST(Strength, KillsByUnsoundPropertiesDoNotCount) {
  std::vector<MutantResult> ms{{"a", MutantClass::KilledByAssertion, {"P1"}, 1},
                               {"b", MutantClass::KilledByAssertion, {"P1", "P2"}, 1},
                               {"c", MutantClass::Survived, {}, 10}};
  std::vector<SoundnessVerdict> vs{{"P1", 0, 10, 0, Verdict::Sound}, {"P2", 0.5, 10, 5, Verdict::Unsound}};
  auto s = property_strength(ms, vs);
  EXPECT_EQ(s.killed_by_sound, 1);
  EXPECT_EQ(s.killed_by_other, 1);
  EXPECT_DOUBLE_EQ(s.score, 1.0 / 3.0);
  EXPECT_EQ(s.surviving_mutant_ids, (std::vector<std::string>{"b", "c"}));
}

TEST(Strength, NothingLeftAfterExclusionsIsNoMutants) {
  std::vector<MutantResult> ms{{"a", MutantClass::KilledByCrash, {}, 1}, {"b", MutantClass::Timeout, {}, 1}};
  try {
    property_strength(ms, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoMutants);
  }
}

// Property: metrics equal the oracle recount on random reports.
TEST(MetricsProperty, AgreeWithBruteForceRecount) {
  oracle::Rng rng(20240601);
  for (int iter = 0; iter < 300; ++iter) {
    auto syn = oracle::random_synthetic(rng);
    const auto& r = syn.report;
    ASSERT_EQ(generator_validity(r), oracle::validity(r.outcomes));
    auto valid = oracle::property_valid(r.property_ids, r.outcomes);
    auto pv = property_validity(r, r.property_ids);
    ASSERT_EQ(pv.valid, valid);
    std::set<std::string> invalid;
    for (const auto& [id, ok] : valid) {
      if (!ok) invalid.insert(id);
    }
    auto want = oracle::verdicts(r.property_ids, r.outcomes, 0.10);
    auto got = property_soundness(r, 0.10, invalid);
    for (const auto& v : got.verdicts) {
      ASSERT_EQ(v.verdict, want.at(v.property_id).verdict) << "iteration " << iter;
      ASSERT_EQ(v.failures, want.at(v.property_id).failures);
      ASSERT_EQ(v.runs_reached, want.at(v.property_id).reached);
    }
    ASSERT_EQ(got.ratio, oracle::soundness_ratio(want, valid));
    auto strength = oracle::strength(syn.mutants, want);
    if (strength) {
      ASSERT_EQ(property_strength(syn.mutants, got.verdicts).score, *strength);
    } else {
      ASSERT_THROW(property_strength(syn.mutants, got.verdicts), Error);
    }
  }
}

// Property: turning a crash kill into a survivor never raises strength.
TEST(MetricsProperty, CrashToSurvivedNeverRaisesStrength) {
  oracle::Rng rng(7);
  int checked = 0;
  for (int iter = 0; iter < 500; ++iter) {
    auto syn = oracle::random_synthetic(rng);
    auto verdicts = property_soundness(syn.report).verdicts;
    for (std::size_t i = 0; i < syn.mutants.size(); ++i) {
      if (syn.mutants[i].classification != MutantClass::KilledByCrash) continue;
      auto flipped = syn.mutants;
      flipped[i].classification = MutantClass::Survived;
      double after = property_strength(flipped, verdicts).score;
      try {
        EXPECT_LE(after, property_strength(syn.mutants, verdicts).score);
      } catch (const Error&) {
        // before had nothing to count; after counts one survivor
        EXPECT_EQ(after, 0.0);
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

// Property: the report survives a JSON round trip with identical counters.
TEST(MetricsProperty, ReportJsonRoundTrip) {
  oracle::Rng rng(99);
  for (int iter = 0; iter < 100; ++iter) {
    auto syn = oracle::random_synthetic(rng);
    json j = syn.report;
    auto back = j.get<RunReport>();
    ASSERT_EQ(back.outcomes, syn.report.outcomes);
    ASSERT_EQ(back.per_property_reached_counts, syn.report.per_property_reached_counts);
    ASSERT_EQ(json(back), j);
  }
}

TEST(Scorecard, IssuesComeInKindOrderWithSequentialIds) {
  std::vector<RunOutcome> outs;
  for (int i = 0; i < 10; ++i) {
    if (i < 2) {
      outs.push_back(generator_error(i));
      continue;
    }
    auto o = ok_run(i, "P2");
    if (i < 5) {
      o.status = RunStatus::AssertionFailure;
      o.failed_property_ids = {"P1"};
      o.error_type = "AssertionError";
      o.error_message = "assert (1,) == (1, 1)";
      o.input_rendering = "a=array([[0]])";
    }
    outs.push_back(o);
  }
  CoverageData cov;
  cov.scope = "numpy.cumsum";
  cov.statements_total = 10;
  cov.branches_total = 2;
  cov.hit_lines = {1, 2, 3};
  cov.hit_branches = {"1->2"};
  cov.missed_branches = {"1->3"};
  auto r = RunReport::from_outcomes({"P1", "P2"}, outs, cov);
  std::vector<MutantResult> ms{{"m1", MutantClass::Survived, {}, 10}, {"m2", MutantClass::KilledByAssertion, {"P2"}, 1},
                               {"m3", MutantClass::Survived, {}, 10}};
  ScorecardInputs in{&r, &ms, {{"m1", "-a\n+b\n"}}, "generate_array", "e3"};
  auto card = build_scorecard(in);
  ASSERT_EQ(card.issues.size(), 4u);
  EXPECT_EQ(card.issues[0].id, "e3-i1");
  EXPECT_EQ(card.issues[0].kind, IssueKind::InvalidGenerator);
  EXPECT_EQ(card.issues[0].subject, "generate_array");
  EXPECT_EQ(card.issues[1].kind, IssueKind::LowDiversityGenerator);
  EXPECT_EQ(card.issues[1].evidence["missed_branches"], json::array({"1->3"}));
  EXPECT_EQ(card.issues[2].kind, IssueKind::UnsoundProperty);
  EXPECT_EQ(card.issues[2].subject, "P1");
  EXPECT_EQ(card.issues[2].evidence["input"], "a=array([[0]])");
  EXPECT_EQ(card.issues[3].kind, IssueKind::WeakProperty);
  EXPECT_EQ(card.issues[3].id, "e3-i4");
  EXPECT_EQ(card.issues[3].evidence["diffs"][0]["diff"], "-a\n+b\n");
  EXPECT_DOUBLE_EQ(*card.property_strength, 1.0 / 3.0);
}

TEST(Scorecard, JsonRoundTrip) {
  auto r = one_property(20, 5);
  auto card = build_scorecard({&r});
  json j = card;
  EXPECT_EQ(j["schema"], kScorecardSchema);
  auto back = j.get<QualityScorecard>();
  EXPECT_EQ(json(back), j);
}

TEST(Scorecard, TextRenderingNamesEveryMetric) {
  auto r = one_property(20, 5);
  auto text = render_scorecard_text(build_scorecard({&r}));
  EXPECT_NE(text.find("Generator validity   100.0% over 20 runs"), std::string::npos) << text;
  EXPECT_NE(text.find("of 1 property\n"), std::string::npos) << text;
  EXPECT_NE(text.find("P1  Unsound  failed 5/20"), std::string::npos) << text;
}

TEST(Thresholds, OutOfRangeValuesAreRejected) {
  Thresholds t;
  t.soundness = 1.5;
  EXPECT_THROW(t.validate(), Error);
  t = {};
  t.validity_min = -0.1;
  EXPECT_THROW(t.validate(), Error);
}

QualityScorecard card_with_soundness(double ratio, bool unsound_issue) {
  QualityScorecard s;
  s.n_runs = 200;
  s.n_properties = 5;
  s.property_validity = 1.0;
  s.generator_validity = 1.0;
  s.property_soundness = ratio;
  if (unsound_issue) s.issues.push_back({"e1-i1", IssueKind::UnsoundProperty, "P1", {{"tag", "counterexample"}}});
  return s;
}

// Reference values: 68% of properties sound on average, 6 of 10 tests free of unsound ones.
TEST(Aggregate, TenCumsumSamples) {
  std::vector<QualityScorecard> cards;
  for (int i = 0; i < 6; ++i) cards.push_back(card_with_soundness(1.0, false));
  cards.push_back(card_with_soundness(0.0, true));
  cards.push_back(card_with_soundness(0.0, true));
  cards.push_back(card_with_soundness(0.4, true));
  cards.push_back(card_with_soundness(0.4, true));
  auto a = aggregate(cards);
  EXPECT_NEAR(a.metrics.at("property_soundness").mean, 0.68, 1e-12);
  EXPECT_EQ(a.metrics.at("property_soundness").min, 0.0);
  EXPECT_EQ(a.metrics.at("property_soundness").max, 1.0);
  EXPECT_EQ(a.issue_free.at("UnsoundProperty"), 6);
  EXPECT_EQ(a.issue_free.at("WeakProperty"), 10);
  EXPECT_EQ(a.metrics.at("property_strength").count, 0);
  EXPECT_EQ(a.total_runs, 2000);
  json j = a;
  EXPECT_TRUE(j["metrics"]["property_strength"]["mean"].is_null());
  EXPECT_EQ(j.get<AggregateMetrics>().issue_free, a.issue_free);
}

TEST(Aggregate, EmptyListIsRejected) { EXPECT_THROW(aggregate({}), Error); }

}  // namespace
