#include <gtest/gtest.h>

#include "pbtw/error.hpp"
#include "pbtw/session.hpp"
#include "pbtw/util.hpp"
#include "support.hpp"

using namespace pbtw;
using nlohmann::json;
namespace ts = testsupport;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("no error thrown");
}

// Hands every call to one shared scripted provider, so replies are consumed in
// order across the fresh providers a manager builds per operation.
class Forwarding : public ChatProvider {
 public:
  explicit Forwarding(ts::ScriptedProvider* p) : p_(p) {}
  PromptMessage complete(const Transcript& t) override { return p_->complete(t); }

 private:
  ts::ScriptedProvider* p_;
};

class Sessions : public ::testing::Test {
 protected:
  Sessions() : pool(RunnerCommand::parse(ts::runner_command()), {}, 1) {}

  SessionManager manager(ts::ScriptedProvider* scripted = nullptr) {
    SessionContext ctx;
    ctx.data_dir = dir.path();
    ctx.runners = &pool;
    if (scripted) ctx.provider_factory = [scripted](const ProviderConfig&) { return std::make_unique<Forwarding>(scripted); };
    return SessionManager(ctx);
  }

  static EvaluationPlanConfig plan() {
    EvaluationPlanConfig p;
    p.n_runs = 100;
    p.seed = 3;
    p.mutation = false;
    return p;
  }

  std::filesystem::path journal(const std::string& id) { return dir / "sessions" / id / "events.jsonl"; }

  ts::TempDir dir;
  RunnerPool pool;
};

}  // namespace

TEST_F(Sessions, OpenSynthesizesFirstVersion) {
  auto mgr = manager();
  auto s = mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay-ordinal"), "flow-cumsum-together");
  EXPECT_EQ(s.state, SessionState::Synthesized);
  ASSERT_EQ(s.artifacts.size(), 1u);
  EXPECT_EQ(s.artifacts[0].test_sha, sha256_hex(s.artifacts[0].test.source_text));
  EXPECT_EQ(mgr.list(), std::vector<std::string>{"flow-cumsum-together"});
  EXPECT_EQ(code_of([&] {
              mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay-ordinal"), "flow-cumsum-together");
            }),
            ErrorCode::InvalidArgument);
}

TEST_F(Sessions, FailedSynthesisKeepsRawReply) {
  ts::ScriptedProvider scripted({ts::as_reply("x = 1\n")});
  auto mgr = manager(&scripted);
  EXPECT_EQ(code_of([&] { mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay"), "bad"); }),
            ErrorCode::SynthesisFailed);
  auto s = mgr.load("bad");
  EXPECT_EQ(s.state, SessionState::Drafting);
  ASSERT_TRUE(s.last_raw_reply.has_value());
  EXPECT_NE(s.last_raw_reply->find("x = 1"), std::string::npos);
  EXPECT_EQ(code_of([&] { mgr.evaluate("bad", plan()); }), ErrorCode::InvalidState);
}

TEST_F(Sessions, StaleAndUnknownIssues) {
  auto mgr = manager();
  const std::string id = "flow-cumsum-unsound";
  mgr.open(ts::target("cumsum"), Strategy::Consecutive, ts::replay("replay-ordinal"), id);
  auto first = mgr.evaluate(id, plan());
  ASSERT_FALSE(first.issues.empty());
  auto second = mgr.evaluate(id, plan());
  EXPECT_EQ(second.issues[0].id.substr(0, 3), "e2-");
  EXPECT_EQ(code_of([&] { mgr.choose_mitigation(id, first.issues[0].id); }), ErrorCode::StaleIssue);
  EXPECT_EQ(code_of([&] { mgr.choose_mitigation(id, "e9-i9"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { mgr.choose_mitigation(id, second.issues[0].id, "   "); }), ErrorCode::EmptyContext);
  EXPECT_EQ(mgr.load(id).state, SessionState::Reviewed);
}

TEST_F(Sessions, EditedPayloadIsSent) {
  ts::ScriptedProvider scripted({ts::as_reply(ts::fixture_text("code/cumsum_generator.py")),
                                 ts::as_reply(ts::fixture_text("code/cumsum_unsound_test.py")),
                                 ts::as_reply(ts::fixture_text("code/cumsum_unsound_fixed.py"))});
  auto mgr = manager(&scripted);
  mgr.open(ts::target("cumsum"), Strategy::Consecutive, ts::replay("replay"), "edit");
  auto card = mgr.evaluate("edit", plan());
  auto action = mgr.choose_mitigation("edit", card.issues[0].id, "my own counterexample");
  EXPECT_EQ(action.payload(), "my own counterexample");
  EXPECT_EQ(mgr.apply_mitigation("edit"), 2);
  ASSERT_EQ(scripted.seen.size(), 3u);
  EXPECT_NE(scripted.seen.back().messages.back().text.find("my own counterexample"), std::string::npos);
}

TEST_F(Sessions, FailedMitigationReturnsToReviewed) {
  ts::ScriptedProvider scripted({ts::as_reply(ts::fixture_text("code/cumsum_generator.py")),
                                 ts::as_reply(ts::fixture_text("code/cumsum_unsound_test.py")), "no code here"});
  auto mgr = manager(&scripted);
  mgr.open(ts::target("cumsum"), Strategy::Consecutive, ts::replay("replay"), "fail");
  auto card = mgr.evaluate("fail", plan());
  mgr.choose_mitigation("fail", card.issues[0].id);
  EXPECT_EQ(code_of([&] { mgr.apply_mitigation("fail"); }), ErrorCode::SynthesisFailed);
  auto s = mgr.load("fail");
  EXPECT_EQ(s.state, SessionState::Reviewed);
  EXPECT_EQ(s.artifacts.size(), 1u);
  ASSERT_EQ(s.mitigation_log.size(), 1u);
  EXPECT_FALSE(s.mitigation_log[0].resulting_version.has_value());
  EXPECT_EQ(s.last_raw_reply.value_or(""), "no code here");
}

TEST_F(Sessions, TornFinalLineIsIgnoredButInnerDamageIsNot) {
  auto mgr = manager();
  const std::string id = "flow-cumsum-together";
  mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay-ordinal"), id);
  const auto intact = read_file(journal(id));
  append_line(journal(id), R"({"event":"evaluation_sta)");
  auto s = mgr.load(id);
  EXPECT_EQ(s.state, SessionState::Synthesized);
  EXPECT_EQ(s.artifacts.size(), 1u);

  write_file_atomic(journal(id), "{broken\n" + intact);
  EXPECT_EQ(code_of([&] { mgr.load(id); }), ErrorCode::Io);
}

TEST_F(Sessions, InterruptedEvaluationResumes) {
  auto mgr = manager();
  const std::string id = "flow-cumsum-together";
  mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay-ordinal"), id);
  append_line(journal(id), json{{"event", "evaluation_started"}, {"plan", plan()}}.dump());
  EXPECT_EQ(mgr.load(id).state, SessionState::Synthesized);
  EXPECT_NO_THROW(mgr.evaluate(id, plan()));
}

TEST_F(Sessions, ClosedSessionsRefuseWork) {
  auto mgr = manager();
  const std::string id = "flow-cumsum-together";
  mgr.open(ts::target("cumsum"), Strategy::Together, ts::replay("replay-ordinal"), id);
  mgr.close(id);
  EXPECT_EQ(code_of([&] { mgr.evaluate(id, plan()); }), ErrorCode::InvalidState);
  EXPECT_EQ(code_of([&] { mgr.close(id); }), ErrorCode::InvalidState);
  EXPECT_EQ(code_of([&] { mgr.load("missing"); }), ErrorCode::NotFound);
}

TEST(SessionNames, StrategiesAndStates) {
  for (auto s : {Strategy::Independent, Strategy::Consecutive, Strategy::Together})
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_EQ(strategy_from_string("together"), Strategy::Together);
  EXPECT_THROW(strategy_from_string("sideways"), Error);
  EXPECT_EQ(session_state_from_string(to_string(SessionState::AwaitingChoice)), SessionState::AwaitingChoice);
}

TEST(PlanConfig, Validation) {
  EvaluationPlanConfig p;
  EXPECT_NO_THROW(p.validate());
  p.n_runs = 0;
  EXPECT_THROW(p.validate(), Error);
  p.n_runs = 10;
  p.thresholds.soundness = 1.5;
  EXPECT_THROW(p.validate(), Error);
  EvaluationPlanConfig q;
  q.seed = 77;
  q.operators = std::vector<std::string>{"RelationalOpReplace"};
  json j = q;
  EXPECT_EQ(j.get<EvaluationPlanConfig>(), q);
}
