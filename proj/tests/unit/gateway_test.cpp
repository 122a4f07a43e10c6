#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "pbtw/error.hpp"
#include "pbtw/gateway.hpp"
#include "pbtw/prompts.hpp"
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

Transcript two_messages(std::string session = "s") {
  Transcript t;
  t.session_id = std::move(session);
  t.messages = {{Role::System, "You write tests."}, {Role::User, "Write a generator for numpy.cumsum."}};
  return t;
}

}  // namespace

// ---- prompts

TEST(Prompts, TaskFormatsMustAgree) {
  EXPECT_NO_THROW(PromptTask::generator().validate());
  auto bad = PromptTask::properties();
  bad.output_format = OutputFormat::DataDecorator;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::UnsupportedTask);
}

TEST(Prompts, EmptyDocumentationIsRejected) {
  auto t = ts::target("cumsum");
  t.doc_text = "  \n";
  EXPECT_EQ(code_of([&] { build_synthesis_prompt(t, PromptTask::generator()); }), ErrorCode::EmptyDocumentation);
}

TEST(Prompts, DocumentationIsCopiedVerbatim) {
  auto t = ts::target("cumsum");
  t.doc_text = "Weird {{payload}} text with {{ braces }}\n";
  auto msgs = build_synthesis_prompt(t, PromptTask::combined());
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].role, Role::System);
  EXPECT_EQ(msgs[1].role, Role::User);
  EXPECT_NE(msgs[1].text.find(t.doc_text), std::string::npos);
}

TEST(Prompts, DefaultGeneratorNames) {
  EXPECT_EQ(default_generator_name(ts::target("find_cycle")), "generate_graph");
  EXPECT_EQ(default_generator_name(ts::target("total_seconds")), "generate_timedelta");
  auto t = ts::target("cumsum");
  t.input_object.reset();
  EXPECT_EQ(default_generator_name(t), "generate_cumsum_input");
}

TEST(Prompts, TemplatesSubstituteOnce) {
  ts::TempDir d;
  write_file_atomic(d / "x.tmpl", "%% header\nA {{a}} B {{b}}\n");
  TemplateSet set(d.path());
  EXPECT_EQ(set.render("x", {{"a", "{{b}}"}, {"b", "2"}}), "A {{b}} B 2");
  EXPECT_EQ(code_of([&] { set.render("missing", {}); }), ErrorCode::TemplateMissing);
}

TEST(Prompts, MitigationPromptCarriesPayload) {
  auto a = MitigationAction::fix_unsound_property("input: a=array([[0]])\nassert (1,) == (1, 1)");
  auto msg = build_mitigation_prompt(a, "test_numpy_cumsum");
  EXPECT_EQ(msg.role, Role::User);
  EXPECT_NE(msg.text.find("a=array([[0]])"), std::string::npos);
  EXPECT_NE(msg.text.find("test_numpy_cumsum"), std::string::npos);
  EXPECT_EQ(code_of([] { MitigationAction(MitigationKind::EnrichGenerator, ErrorMessage{"x"}); }),
            ErrorCode::InvalidArgument);
  auto edited = a.with_payload("edited");
  EXPECT_EQ(edited.kind(), MitigationKind::FixUnsoundProperty);
  EXPECT_EQ(edited.payload(), "edited");
  json j = edited;
  EXPECT_EQ(mitigation_action_from_json(j).payload(), "edited");
  EXPECT_EQ(code_of([] { build_mitigation_prompt(MitigationAction::strengthen_property(" "), "x"); }),
            ErrorCode::EmptyContext);
}

// ---- replay keys and providers

TEST(Replay, HashKeyMatchesReferenceValue) {
  // sha256 over "system:16:You write tests.\nuser:35:Write a generator for numpy.cumsum.\n"
  EXPECT_EQ(replay_key(two_messages()), "6ca049896146d8e3c2058bc41518ed5544516c4edc869f1dd3702fe7653a9819");
}

TEST(Replay, HashKeyIgnoresSessionButNotRoles) {
  auto a = two_messages("one"), b = two_messages("two");
  EXPECT_EQ(replay_key(a), replay_key(b));
  b.messages[0].role = Role::User;
  EXPECT_NE(replay_key(a), replay_key(b));
}

TEST(Replay, OrdinalKeyCountsReplies) {
  auto t = two_messages("flow");
  EXPECT_EQ(replay_ordinal_key(t), "flow_001");
  t.messages.push_back({Role::Assistant, "x"});
  t.messages.push_back({Role::User, "again"});
  EXPECT_EQ(replay_ordinal_key(t), "flow_002");
}

TEST(Replay, ProviderReadsFixturesAndReportsMissingOnes) {
  ts::TempDir d;
  auto t = two_messages();
  write_file_atomic(d / (replay_key(t) + ".md"), "reply text");
  ReplayProvider p(d.path());
  EXPECT_EQ(p.complete(t).text, "reply text");
  t.messages[1].text += " ";
  EXPECT_EQ(code_of([&] { p.complete(t); }), ErrorCode::FixtureMissing);
  auto done = two_messages();
  done.messages.push_back({Role::Assistant, "x"});
  EXPECT_EQ(code_of([&] { p.complete(done); }), ErrorCode::InvalidArgument);
}

TEST(Replay, ShorthandParsing) {
  auto r = ProviderConfig::parse_shorthand("replay:fixtures/replay");
  EXPECT_EQ(r.kind, ProviderKind::Replay);
  EXPECT_EQ(r.fixture_dir->string(), "fixtures/replay");
  auto h = ProviderConfig::parse_shorthand("http:m1@http://localhost:9/v1/chat/completions");
  EXPECT_EQ(h.kind, ProviderKind::Http);
  EXPECT_EQ(*h.model_name, "m1");
  EXPECT_EQ(*h.endpoint, "http://localhost:9/v1/chat/completions");
  ::setenv("PBT_LLM_MODEL", "m2", 1);
  EXPECT_EQ(*ProviderConfig::parse_shorthand("https://api.example/v1").endpoint, "https://api.example/v1");
  EXPECT_THROW(ProviderConfig::parse_shorthand("ftp:x"), Error);
}

// ---- code extraction

TEST(ExtractCode, FencesAreJoinedAndSentinelCuts) {
  PromptMessage m{Role::Assistant, "Here:\n```python\na = 1\n```\ntext\n```\nb = 2\n# End program\nc = 3\n```\n"};
  EXPECT_EQ(extract_code(m).source_text, "a = 1\n\nb = 2\n");
}

TEST(ExtractCode, WholeTextWithoutFences) {
  EXPECT_EQ(extract_code({Role::Assistant, "x = 1\n# End program\n"}).source_text, "x = 1\n");
  EXPECT_EQ(code_of([] { extract_code({Role::Assistant, "# End program\n"}); }), ErrorCode::NoCodeFound);
  EXPECT_EQ(code_of([] { extract_code({Role::Assistant, "```python\n```\n"}); }), ErrorCode::NoCodeFound);
}

// ---- HTTP provider against a local server

namespace {

class FakeLlm {
 public:
  FakeLlm() {
    srv_.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth = req.get_header_value("Authorization");
      last_body = json::parse(req.body);
      if (calls++ < fail_first) {
        res.status = 503;
        return;
      }
      res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "ok"}}}}}}}.dump(),
                      "application/json");
    });
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~FakeLlm() {
    srv_.stop();
    thread_.join();
  }
  ProviderConfig config() const {
    ProviderConfig c;
    c.kind = ProviderKind::Http;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat";
    c.model_name = "test-model";
    c.api_key_env = "PBTW_TEST_KEY";
    c.retry_base_delay = std::chrono::milliseconds(1);
    c.passthrough = {{"temperature", 0}};
    return c;
  }

  std::atomic<int> calls{0};
  int fail_first = 0;
  std::string last_auth;
  json last_body;

 private:
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(Http, SendsMessagesAndRetriesServerErrors) {
  FakeLlm llm;
  llm.fail_first = 2;
  ::setenv("PBTW_TEST_KEY", "k123", 1);
  HttpProvider p(llm.config());
  EXPECT_EQ(p.complete(two_messages()).text, "ok");
  EXPECT_EQ(llm.calls, 3);
  EXPECT_EQ(llm.last_auth, "Bearer k123");
  EXPECT_EQ(llm.last_body["model"], "test-model");
  EXPECT_EQ(llm.last_body["temperature"], 0);
  EXPECT_EQ(llm.last_body["messages"][1]["role"], "user");
}

TEST(Http, GivesUpAfterRetries) {
  FakeLlm llm;
  llm.fail_first = 100;
  ::setenv("PBTW_TEST_KEY", "k123", 1);
  auto cfg = llm.config();
  cfg.max_retries = 2;
  HttpProvider p(cfg);
  EXPECT_EQ(code_of([&] { p.complete(two_messages()); }), ErrorCode::ProviderUnavailable);
  EXPECT_EQ(llm.calls, 3);
}

TEST(Http, MissingKeyFailsBeforeAnyRequest) {
  FakeLlm llm;
  ::unsetenv("PBTW_TEST_KEY");
  HttpProvider p(llm.config());
  EXPECT_EQ(code_of([&] { p.complete(two_messages()); }), ErrorCode::AuthMissing);
  EXPECT_EQ(llm.calls, 0);
}
