// End-to-end flows against the replay runner and recorded provider replies.

#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "httplib.h"
#include "pbtw/campaign.hpp"
#include "pbtw/service.hpp"
#include "pbtw/session.hpp"
#include "pbtw/util.hpp"
#include "support.hpp"

namespace ts = testsupport;
using namespace pbtw;
using nlohmann::json;

namespace {

class Flows : public ::testing::Test {
 protected:
  Flows() : pool(RunnerCommand::parse(ts::runner_command()), {}, 2) {}

  SessionManager manager() {
    SessionContext ctx;
    ctx.data_dir = dir / "sessions";
    ctx.runners = &pool;
    return SessionManager(ctx);
  }

  static EvaluationPlanConfig plan(int n_runs, bool mutation = true, std::uint64_t seed = 7) {
    EvaluationPlanConfig p;
    p.n_runs = n_runs;
    p.mutation = mutation;
    p.seed = seed;
    return p;
  }

  static const Issue& issue_of(const QualityScorecard& s, IssueKind k) {
    for (const auto& i : s.issues) {
      if (i.kind == k) return i;
    }
    throw std::runtime_error("no issue of kind " + std::string(to_string(k)));
  }

  ts::TempDir dir;
  RunnerPool pool;
};

TEST_F(Flows, OverflowingGeneratorStaysAboveDefaultValidity) {
  auto mgr = manager();
  mgr.open(ts::target("total_seconds"), Strategy::Independent, ts::replay("replay-ordinal"), "flow-total-seconds");
  auto card = mgr.evaluate("flow-total-seconds", plan(10000, false));
  auto rep = mgr.report("flow-total-seconds");
  int gen_errors = 0;
  for (const auto& o : rep["run_report"]["outcomes"]) {
    if (o["status"] == "GeneratorError") {
      ++gen_errors;
      EXPECT_EQ(o["error_type"], "OverflowError");
    }
  }
  EXPECT_EQ(gen_errors, 100);
  EXPECT_GE(card.generator_validity, 0.99);
  EXPECT_FALSE(card.has_issue(IssueKind::InvalidGenerator));
}

TEST_F(Flows, RaisedValidityThresholdLeadsToClampedGenerator) {
  auto mgr = manager();
  const std::string id = "flow-total-seconds";
  mgr.open(ts::target("total_seconds"), Strategy::Independent, ts::replay("replay-ordinal"), id);
  auto p = plan(1000, false);
  p.thresholds.validity_min = 0.995;
  auto first = mgr.evaluate(id, p);
  const auto& issue = issue_of(first, IssueKind::InvalidGenerator);
  EXPECT_EQ(issue.evidence["error_type"], "OverflowError");
  auto action = mgr.choose_mitigation(id, issue.id);
  EXPECT_EQ(action.kind(), MitigationKind::FixGeneratorError);
  EXPECT_NE(action.payload().find("OverflowError"), std::string::npos);
  EXPECT_EQ(mgr.apply_mitigation(id), 2);
  auto s = mgr.load(id);
  ASSERT_TRUE(s.artifacts.back().generator.has_value());
  EXPECT_NE(s.artifacts.back().test.source_text.find("999990000"), std::string::npos);
  auto second = mgr.evaluate(id, p);
  EXPECT_DOUBLE_EQ(second.generator_validity, 1.0);
  EXPECT_FALSE(second.has_issue(IssueKind::InvalidGenerator));
}

TEST_F(Flows, PropertyCallingMissingHelperIsInvalidWheneverChecked) {
  auto mgr = manager();
  mgr.open(ts::target("find_cycle"), Strategy::Independent, ts::replay("replay-ordinal"), "flow-find-cycle");
  auto card = mgr.evaluate("flow-find-cycle", plan(400, false));
  auto rep = mgr.report("flow-find-cycle")["run_report"];
  int checked = 0;
  for (const auto& o : rep["outcomes"]) {
    if (Phase::parse(o["phase"].get<std::string>()).kind != Phase::Kind::Check) continue;
    ++checked;
    auto errs = o["errored_property_ids"].get<std::vector<std::string>>();
    ASSERT_EQ(errs, std::vector<std::string>{"P2"});
    EXPECT_EQ(o["error_type"], "AttributeError");
  }
  EXPECT_GT(checked, 0);
  EXPECT_EQ(rep["per_property_error_counts"]["P2"], rep["per_property_reached_counts"]["P2"]);
  EXPECT_FALSE(card.property_valid.at("P2"));
  EXPECT_EQ(issue_of(card, IssueKind::InvalidProperty).subject, "P2");
}

TEST_F(Flows, ShapeAssertionIsUnsound) {
  auto mgr = manager();
  mgr.open(ts::target("cumsum"), Strategy::Consecutive, ts::replay("replay-ordinal"), "flow-cumsum-unsound");
  auto card = mgr.evaluate("flow-cumsum-unsound", plan(200, false));
  ASSERT_FALSE(card.verdicts.empty());
  EXPECT_EQ(card.verdicts[0].verdict, Verdict::Unsound);
  EXPECT_GT(card.verdicts[0].failure_rate, 0.10);
}

TEST_F(Flows, WeakPropertiesKillNothingWhileShapeChecksDo) {
  auto start = std::chrono::steady_clock::now();
  auto mgr = manager();
  mgr.open(ts::target("total_seconds"), Strategy::Consecutive, ts::replay("replay", ReplayKeyMode::TranscriptHash),
           "weak");
  auto weak = mgr.evaluate("weak", plan(1000));
  ASSERT_TRUE(weak.property_strength.has_value());
  EXPECT_DOUBLE_EQ(*weak.property_strength, 0.0);
  EXPECT_TRUE(weak.has_issue(IssueKind::WeakProperty));

  mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay", ReplayKeyMode::TranscriptHash), "strong");
  auto strong = mgr.evaluate("strong", plan(1000));
  ASSERT_TRUE(strong.strength.has_value());
  EXPECT_GT(strong.strength->killed_by_crash, 0);
  EXPECT_GE(*strong.property_strength, 0.6);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::minutes(3));
}

TEST_F(Flows, EnrichedGeneratorCoversBothBranches) {
  auto mgr = manager();
  const std::string id = "flow-find-cycle";
  mgr.open(ts::target("find_cycle"), Strategy::Independent, ts::replay("replay-ordinal"), id);
  auto first = mgr.evaluate(id, plan(200, false));
  ASSERT_TRUE(first.generator_diversity.has_value());
  EXPECT_DOUBLE_EQ(first.generator_diversity->branches, 0.5);
  const auto& low = issue_of(first, IssueKind::LowDiversityGenerator);
  EXPECT_EQ(mgr.choose_mitigation(id, low.id).kind(), MitigationKind::EnrichGenerator);
  EXPECT_EQ(mgr.apply_mitigation(id), 2);
  auto second = mgr.evaluate(id, plan(200, false));
  ASSERT_TRUE(second.generator_diversity.has_value());
  EXPECT_DOUBLE_EQ(second.generator_diversity->branches, 1.0);
  EXPECT_FALSE(second.has_issue(IssueKind::LowDiversityGenerator));
}

json campaign_config(const std::filesystem::path& out) {
  json targets = json::array();
  for (const auto* name : {"cumsum", "find_cycle", "total_seconds"}) targets.push_back(ts::target(name));
  return json{{"format", kCampaignConfigFormat},
              {"targets", targets},
              {"strategies", {"Together"}},
              {"promptings_per_target", 2},
              {"plan", {{"n_runs", 200}, {"seed", 42}}},
              {"provider", ts::replay("replay-ordinal")},
              {"parallelism", 3},
              {"output_dir", out.string()}};
}

TEST_F(Flows, CampaignOutputIsReproducible) {
  std::string docs[2];
  for (int i = 0; i < 2; ++i) {
    auto out = dir / ("campaign" + std::to_string(i));
    auto cfg = CampaignConfig::from_json(campaign_config(out));
    CampaignContext ctx;
    ctx.runners = &pool;
    auto report = run_campaign(cfg, ctx);
    ASSERT_EQ(report.cells.size(), 3u);
    for (const auto& c : report.cells) EXPECT_TRUE(c.ok) << c.target << ": " << c.failure;
    docs[i] = read_file(out / "campaign.json");
  }
  EXPECT_EQ(docs[0], docs[1]);
}

TEST_F(Flows, TenCumsumPromptingsMatchReferenceSoundness) {
  auto out = dir / "cumsum10";
  json j{{"format", kCampaignConfigFormat},
         {"targets", {ts::target("cumsum")}},
         {"strategies", {"Together"}},
         {"promptings_per_target", 10},
         {"plan", {{"n_runs", 200}, {"seed", 3}, {"mutation", false}, {"collect_coverage", false}}},
         {"provider", ts::replay("replay-cumsum10")},
         {"output_dir", out.string()}};
  RunnerPool pool10(RunnerCommand::parse(ts::runner_command({"cumsum10"})), {}, 1);
  CampaignContext ctx;
  ctx.runners = &pool10;
  auto report = run_campaign(CampaignConfig::from_json(j), ctx);
  ASSERT_EQ(report.cells.size(), 1u);
  const auto& cell = report.cells[0];
  ASSERT_TRUE(cell.ok) << cell.failure;
  ASSERT_TRUE(cell.metrics.has_value());
  EXPECT_NEAR(cell.metrics->metrics.at("property_soundness").mean, 0.68, 1e-12);
  EXPECT_EQ(cell.metrics->issue_free.at("UnsoundProperty"), 6);
}

json wait_job(httplib::Client& cli, const std::string& job_id) {
  for (int i = 0; i < 600; ++i) {
    auto res = cli.Get("/jobs/" + job_id);
    if (!res) throw std::runtime_error("job poll failed");
    auto j = json::parse(res->body);
    if (j["status"] == "succeeded" || j["status"] == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  throw std::runtime_error("job " + job_id + " never finished");
}

TEST_F(Flows, ServiceReportsCounterexampleAndMitigates) {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.data_dir = dir / "svc";
  cfg.runner_cmd = ts::runner_command();
  cfg.provider = ts::replay("replay-ordinal");
  Service svc(cfg);
  svc.start();
  ASSERT_FALSE(svc.read_only());
  httplib::Client cli("127.0.0.1", svc.port());

  json open{{"target", ts::target("cumsum")}, {"strategy", "consecutive"}, {"session_id", "flow-cumsum-unsound"}};
  auto res = cli.Post("/sessions", open.dump(), "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201) << res->body;

  res = cli.Post("/sessions/flow-cumsum-unsound/evaluate", json{{"n_runs", 200}, {"seed", 5}}.dump(),
                 "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 202) << res->body;
  auto job = wait_job(cli, json::parse(res->body)["job_id"]);
  ASSERT_EQ(job["status"], "succeeded") << job.dump();

  res = cli.Get("/sessions/flow-cumsum-unsound/report");
  ASSERT_TRUE(res);
  auto card = json::parse(res->body)["scorecard"].get<QualityScorecard>();
  const auto& unsound = issue_of(card, IssueKind::UnsoundProperty);
  EXPECT_NE(unsound.evidence["input"].get<std::string>().find("[[0]]"), std::string::npos);

  res = cli.Post("/sessions/flow-cumsum-unsound/mitigations", json{{"issue_id", unsound.id}}.dump(),
                 "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 202) << res->body;
  job = wait_job(cli, json::parse(res->body)["job_id"]);
  ASSERT_EQ(job["status"], "succeeded") << job.dump();

  res = cli.Get("/sessions/flow-cumsum-unsound");
  ASSERT_TRUE(res);
  auto s = json::parse(res->body);
  EXPECT_EQ(s["artifacts"].size(), 2u);
  EXPECT_EQ(s["artifacts"].back()["version"], 2);
  EXPECT_EQ(s["state"], "Synthesized");
  svc.stop();
}

TEST(Fixtures, BuilderReproducesCheckedInReplies) {
  ts::TempDir out;
  std::string cmd = ts::builder_exe().string() + " --manifest " + ts::fixture("manifest.json").string() + " --out " +
                    out.path().string() + " > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  int compared = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(out.path())) {
    if (!e.is_regular_file()) continue;
    auto rel = std::filesystem::relative(e.path(), out.path());
    ASSERT_TRUE(std::filesystem::exists(ts::fixture_dir() / rel)) << rel;
    EXPECT_EQ(read_file(e.path()), read_file(ts::fixture_dir() / rel)) << rel << " is stale";
    ++compared;
  }
  EXPECT_GT(compared, 20);
}

}  // namespace
