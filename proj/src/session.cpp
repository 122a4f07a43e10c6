#include "pbtw/session.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace pbtw {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Independent: return "Independent";
    case Strategy::Consecutive: return "Consecutive";
    case Strategy::Together: return "Together";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "independent") return Strategy::Independent;
  if (lower == "consecutive") return Strategy::Consecutive;
  if (lower == "together") return Strategy::Together;
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Drafting: return "Drafting";
    case SessionState::Synthesized: return "Synthesized";
    case SessionState::Evaluating: return "Evaluating";
    case SessionState::Reviewed: return "Reviewed";
    case SessionState::AwaitingChoice: return "AwaitingChoice";
    case SessionState::Mitigating: return "Mitigating";
    case SessionState::Closed: return "Closed";
  }
  return "?";
}

SessionState session_state_from_string(std::string_view name) {
  for (auto s : {SessionState::Drafting, SessionState::Synthesized, SessionState::Evaluating, SessionState::Reviewed,
                 SessionState::AwaitingChoice, SessionState::Mitigating, SessionState::Closed}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown session state '" + std::string(name) + "'");
}

void EvaluationPlanConfig::validate() const {
  if (n_runs < 1) throw Error(ErrorCode::InvalidArgument, "n_runs must be at least 1");
  if (per_run_timeout.count() <= 0) throw Error(ErrorCode::InvalidArgument, "per-run timeout must be positive");
  thresholds.validate();
}

void to_json(json& j, const EvaluationPlanConfig& p) {
  j = json{{"n_runs", p.n_runs},
           {"collect_coverage", p.collect_coverage},
           {"mutation", p.mutation},
           {"thresholds", p.thresholds},
           {"seed", p.seed},
           {"per_run_timeout_ms", p.per_run_timeout.count()}};
  j["operators"] = p.operators ? json(*p.operators) : json(nullptr);
}

void from_json(const json& j, EvaluationPlanConfig& p) {
  EvaluationPlanConfig d;
  p.n_runs = j.value("n_runs", d.n_runs);
  p.collect_coverage = j.value("collect_coverage", d.collect_coverage);
  p.mutation = j.value("mutation", d.mutation);
  p.thresholds = j.value("thresholds", d.thresholds);
  if (j.contains("soundness_threshold")) p.thresholds.soundness = j["soundness_threshold"].get<double>();
  p.seed = j.value("seed", d.seed);
  p.per_run_timeout = std::chrono::milliseconds(j.value("per_run_timeout_ms", d.per_run_timeout.count()));
  p.operators.reset();
  if (j.contains("operators") && !j["operators"].is_null()) p.operators = j["operators"].get<std::vector<std::string>>();
}

namespace {

json ref_json(const ReplyRef& r) { return json{{"transcript", r.transcript}, {"message_index", r.message_index}}; }

ReplyRef ref_from(const json& j) { return {j.at("transcript").get<std::string>(), j.at("message_index").get<int>()}; }

json gen_json(const std::optional<GeneratorArtifact>& g) {
  if (!g) return nullptr;
  return json{{"source_text", g->source_text}, {"generator_name", g->generator_name}};
}

std::optional<GeneratorArtifact> gen_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return GeneratorArtifact{j.at("source_text").get<std::string>(), j.at("generator_name").get<std::string>()};
}

json error_json(const Error& e) { return json{{"type", e.type()}, {"message", e.what()}}; }

MitigationAction make_action(MitigationKind kind, std::string text) {
  switch (kind) {
    case MitigationKind::FixGeneratorError: return MitigationAction::fix_generator_error(std::move(text));
    case MitigationKind::EnrichGenerator: return MitigationAction::enrich_generator(std::move(text));
    case MitigationKind::FixPropertyError: return MitigationAction::fix_property_error(std::move(text));
    case MitigationKind::FixUnsoundProperty: return MitigationAction::fix_unsound_property(std::move(text));
    case MitigationKind::StrengthenProperty: return MitigationAction::strengthen_property(std::move(text));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown mitigation kind");
}

void require_state(const Session& s, std::initializer_list<SessionState> allowed, const char* op) {
  for (auto a : allowed) {
    if (s.state == a) return;
  }
  throw Error(ErrorCode::InvalidState,
              std::string(op) + " is not allowed in state " + std::string(to_string(s.state)) + " (session " +
                  s.session_id + ")");
}

bool valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

std::string transcript_key(const std::string& session_id, const std::string& name) {
  return name == "main" ? session_id : session_id + "-" + name;
}

std::string code_of(const Session& s, const ReplyRef& ref) {
  auto it = s.transcripts.find(ref.transcript);
  if (it == s.transcripts.end() || ref.message_index < 0 ||
      ref.message_index >= static_cast<int>(it->second.messages.size())) {
    throw Error(ErrorCode::InvalidArgument, "journal references a missing reply");
  }
  return extract_code(it->second.messages[ref.message_index]).source_text;
}

}  // namespace

const ArtifactVersion* Session::latest_artifact() const { return artifacts.empty() ? nullptr : &artifacts.back(); }

const EvaluationRecord* Session::latest_evaluation() const {
  return evaluations.empty() ? nullptr : &evaluations.back();
}

std::string Session::artifact_name(const MitigationAction& action) const {
  const auto* art = latest_artifact();
  if (!art) return "the test";
  if (action.targets_generator() && art->generator) return art->generator->generator_name;
  if (strategy == Strategy::Independent) return "the assertion block";
  return art->test.test_function;
}

void Session::apply(const json& e) {
  const auto type = e.at("event").get<std::string>();
  // the journal obeys the same pre-states as the manager; anything else is corruption
  const std::string op = "journal event " + type;
  auto expect = [&](std::initializer_list<SessionState> allowed) { require_state(*this, allowed, op.c_str()); };
  if (type == "opened" && events > 0) throw Error(ErrorCode::InvalidState, "session opened twice in journal");
  if (type != "opened" && events == 0) throw Error(ErrorCode::InvalidState, "journal does not start with opened");
  using S = SessionState;
  if (type == "message" || type == "artifact") expect({S::Drafting, S::Mitigating});
  if (type == "synthesis_failed") expect({S::Drafting});
  if (type == "evaluation_started") expect({S::Synthesized, S::Reviewed});
  if (type == "evaluation_failed" || type == "evaluated") expect({S::Evaluating});
  if (type == "mitigation_chosen") expect({S::Reviewed});
  if (type == "mitigation_confirmed") expect({S::AwaitingChoice});
  if (type == "mitigation_applied" || type == "mitigation_failed") expect({S::Mitigating});
  if (type == "closed") expect({S::Drafting, S::Synthesized, S::Reviewed, S::AwaitingChoice, S::Mitigating});
  ++events;
  if (type == "opened") {
    session_id = e.at("session_id").get<std::string>();
    target = e.at("target").get<TargetApi>();
    strategy = strategy_from_string(e.at("strategy").get<std::string>());
    provider = e.at("provider").get<ProviderConfig>();
    io.input_var = e.at("io").at("input").get<std::string>();
    io.output_var = e.at("io").at("output").get<std::string>();
    generator_name = e.at("generator_name").get<std::string>();
    state = SessionState::Drafting;
  } else if (type == "message") {
    auto name = e.at("transcript").get<std::string>();
    auto& t = transcripts[name];
    t.session_id = transcript_key(session_id, name);
    t.messages.push_back(e.at("message").get<PromptMessage>());
  } else if (type == "synthesis_failed") {
    last_error = e.at("error").at("message").get<std::string>();
    last_raw_reply.reset();
    if (!e.at("raw_reply").is_null()) last_raw_reply = e["raw_reply"].get<std::string>();
    state = SessionState::Drafting;
  } else if (type == "artifact") {
    ArtifactVersion a;
    a.version = e.at("version").get<int>();
    if (a.version != static_cast<int>(artifacts.size()) + 1) {
      throw Error(ErrorCode::InvalidArgument, "artifact versions out of sequence in journal");
    }
    a.generator = gen_from(e.at("generator"));
    if (!e.at("generator_source").is_null()) a.generator_source = ref_from(e["generator_source"]);
    a.test_code = e.at("test_code").get<std::string>();
    a.test_source = ref_from(e.at("test_source"));
    a.test = e.at("test").get<AssembledTest>();
    a.test_sha = e.at("test_sha").get<std::string>();
    artifacts.push_back(std::move(a));
    last_raw_reply.reset();
    last_error.reset();
    if (state == SessionState::Drafting) state = SessionState::Synthesized;  // a mitigation ends with mitigation_applied
  } else if (type == "evaluation_started") {
    resume_state = state;
    state = SessionState::Evaluating;
  } else if (type == "evaluation_failed") {
    last_error = e.at("error").at("message").get<std::string>();
    state = resume_state;
  } else if (type == "evaluated") {
    EvaluationRecord r;
    r.index = e.at("index").get<int>();
    r.artifact_version = e.at("artifact_version").get<int>();
    r.plan = e.at("plan").get<EvaluationPlanConfig>();
    r.scorecard = e.at("scorecard").get<QualityScorecard>();
    r.report_sha = e.at("report_sha").get<std::string>();
    evaluations.push_back(std::move(r));
    last_error.reset();
    state = SessionState::Reviewed;
  } else if (type == "mitigation_chosen") {
    auto issue = e.at("issue").get<Issue>();
    pending = PendingMitigation{issue, make_action(mitigation_for(issue.kind), default_payload(issue)),
                                e.at("evaluation_index").get<int>()};
    state = SessionState::AwaitingChoice;
  } else if (type == "mitigation_confirmed") {
    if (!pending) throw Error(ErrorCode::InvalidArgument, "confirmation without a chosen issue in journal");
    pending->action = mitigation_action_from_json(e.at("action"));
    state = SessionState::Mitigating;
  } else if (type == "mitigation_applied") {
    if (!pending) throw Error(ErrorCode::InvalidArgument, "mitigation result without a pending action in journal");
    mitigation_log.push_back({pending->issue, pending->action, e.at("version").get<int>(), ""});
    pending.reset();
    state = SessionState::Synthesized;
  } else if (type == "mitigation_failed") {
    if (!pending) throw Error(ErrorCode::InvalidArgument, "mitigation result without a pending action in journal");
    auto msg = e.at("error").at("message").get<std::string>();
    mitigation_log.push_back({pending->issue, pending->action, std::nullopt, msg});
    pending.reset();
    last_error = msg;
    last_raw_reply.reset();
    if (!e.at("raw_reply").is_null()) last_raw_reply = e["raw_reply"].get<std::string>();
    state = SessionState::Reviewed;
  } else if (type == "closed") {
    state = SessionState::Closed;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown journal event '" + type + "'");
  }
}

MitigationKind mitigation_for(IssueKind kind) {
  switch (kind) {
    case IssueKind::InvalidGenerator: return MitigationKind::FixGeneratorError;
    case IssueKind::LowDiversityGenerator: return MitigationKind::EnrichGenerator;
    case IssueKind::InvalidProperty: return MitigationKind::FixPropertyError;
    case IssueKind::UnsoundProperty: return MitigationKind::FixUnsoundProperty;
    case IssueKind::WeakProperty: return MitigationKind::StrengthenProperty;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown issue kind");
}

std::string default_payload(const Issue& issue) {
  const auto& ev = issue.evidence;
  auto str = [&](const char* key) { return ev.contains(key) && ev[key].is_string() ? ev[key].get<std::string>() : ""; };
  switch (issue.kind) {
    case IssueKind::InvalidGenerator:
    case IssueKind::InvalidProperty: {
      std::string text = str("error_type");
      if (!str("error_message").empty()) text += (text.empty() ? "" : ": ") + str("error_message");
      return text;
    }
    case IssueKind::LowDiversityGenerator: {
      std::string text = "Generate inputs that also reach the parts of " + str("scope") + " that no generated input reached";
      auto missed = ev.value("missed_branches", std::vector<std::string>{});
      if (missed.empty()) return text + ".";
      text += ". Branches never taken:";
      for (const auto& b : missed) text += "\n- " + b;
      return text;
    }
    case IssueKind::UnsoundProperty: {
      std::string text = "Input: " + str("input");
      if (!str("message").empty()) text += "\nAssertion failure: " + str("message");
      return text;
    }
    case IssueKind::WeakProperty: {
      if (ev.contains("diffs")) {
        for (const auto& d : ev["diffs"]) {
          auto diff = d.value("diff", std::string{});
          if (!diff.empty()) return diff;
        }
      }
      auto ids = ev.value("surviving", std::vector<std::string>{});
      return ids.empty() ? "" : "Surviving mutant " + ids.front();
    }
  }
  return {};
}

MitigationAction default_action(const Issue& issue) {
  return make_action(mitigation_for(issue.kind), default_payload(issue));
}

json session_to_json(const Session& s) {
  json artifacts = json::array();
  const ArtifactVersion* prev = nullptr;
  for (const auto& a : s.artifacts) {
    json j{{"version", a.version},
           {"generator", gen_json(a.generator)},
           {"test_code", a.test_code},
           {"test", a.test},
           {"test_sha", a.test_sha}};
    j["diff_from_previous"] =
        prev ? json(unified_diff(prev->test.source_text, a.test.source_text, "v" + std::to_string(prev->version),
                                 "v" + std::to_string(a.version)))
             : json(nullptr);
    artifacts.push_back(std::move(j));
    prev = &a;
  }
  json evaluations = json::array();
  for (const auto& e : s.evaluations) {
    evaluations.push_back({{"index", e.index},
                           {"artifact_version", e.artifact_version},
                           {"plan", e.plan},
                           {"scorecard", e.scorecard},
                           {"report_sha", e.report_sha}});
  }
  json log = json::array();
  for (const auto& m : s.mitigation_log) {
    json entry{{"issue", m.issue}, {"action", m.action}, {"error", m.error}};
    entry["resulting_version"] = m.resulting_version ? json(*m.resulting_version) : json(nullptr);
    log.push_back(std::move(entry));
  }
  json transcripts = json::object();
  for (const auto& [name, t] : s.transcripts) transcripts[name] = t;
  json j{{"session_id", s.session_id},
         {"target", s.target},
         {"strategy", to_string(s.strategy)},
         {"state", to_string(s.state)},
         {"provider", s.provider},
         {"io", {{"input", s.io.input_var}, {"output", s.io.output_var}}},
         {"generator_name", s.generator_name},
         {"transcripts", transcripts},
         {"artifacts", artifacts},
         {"evaluations", evaluations},
         {"mitigation_log", log},
         {"latest_version", s.artifacts.empty() ? 0 : s.artifacts.back().version}};
  j["pending"] = s.pending ? json{{"issue", s.pending->issue},
                                  {"action", s.pending->action},
                                  {"evaluation_index", s.pending->evaluation_index}}
                           : json(nullptr);
  j["last_raw_reply"] = s.last_raw_reply ? json(*s.last_raw_reply) : json(nullptr);
  j["last_error"] = s.last_error ? json(*s.last_error) : json(nullptr);
  // choices offered to the human: issues of the latest evaluation with their default action
  json choices = json::array();
  if (s.state == SessionState::Reviewed && s.latest_evaluation()) {
    for (const auto& i : s.latest_evaluation()->scorecard.issues) {
      choices.push_back({{"issue_id", i.id},
                         {"kind", to_string(i.kind)},
                         {"action", to_string(mitigation_for(i.kind))},
                         {"default_payload", default_payload(i)}});
    }
  }
  j["choices"] = choices;
  return j;
}

Journal::Journal(fs::path dir, Session& session) : dir_(std::move(dir)), session_(session) {
  fs::create_directories(dir_ / "artifacts");
}

void Journal::record(json event) {
  event["seq"] = session_.events + 1;
  // apply first so a malformed event never reaches the file
  Session probe = session_;
  probe.apply(event);
  append_line(dir_ / "events.jsonl", event.dump());
  session_ = std::move(probe);
}

std::string Journal::store(const std::string& bytes) {
  auto sha = sha256_hex(bytes);
  auto path = dir_ / "artifacts" / sha;
  if (!fs::exists(path)) write_file_atomic(path, bytes);
  return sha;
}

Session load_session(const fs::path& dir) {
  auto path = dir / "events.jsonl";
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::NotFound, "no session journal at " + dir.string());
  Session s;
  auto lines = split_lines(read_file(path));
  while (!lines.empty() && is_blank(lines.back())) lines.pop_back();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    json e = json::parse(lines[i], nullptr, false);
    if (e.is_discarded()) {
      if (i + 1 == lines.size()) break;  // torn final line from a crash mid-append
      throw Error(ErrorCode::Io, path.string() + ": line " + std::to_string(i + 1) + " is not valid JSON");
    }
    s.apply(e);
  }
  if (s.state == SessionState::Evaluating) s.state = s.resume_state;  // interrupted evaluation
  return s;
}

AssembledTest assemble_for(Strategy strategy, const TargetApi& target, const std::optional<GeneratorArtifact>& gen,
                           const std::string& test_code, const IoNames& io) {
  AssembleOptions opts;
  opts.io = io;
  switch (strategy) {
    case Strategy::Together: return instrument_combined(test_code, target, opts);
    case Strategy::Independent:
      if (!gen) throw Error(ErrorCode::MalformedGenerator, "independent strategy needs a generator");
      return assemble_separate(*gen, test_code, target, opts);
    case Strategy::Consecutive:
      if (!gen) throw Error(ErrorCode::MalformedGenerator, "consecutive strategy needs a generator");
      return assemble_consecutive(*gen, test_code, target, opts);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown strategy");
}

SessionManager::SessionManager(SessionContext ctx) : ctx_(std::move(ctx)) {
  fs::create_directories(ctx_.data_dir / "sessions");
}

std::mutex& SessionManager::lock_for(const std::string& id) {
  std::lock_guard lock(locks_mu_);
  auto& slot = locks_[id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

const TemplateSet& SessionManager::templates() const {
  return ctx_.templates ? *ctx_.templates : TemplateSet::shipped();
}

std::unique_ptr<ChatProvider> SessionManager::provider(const ProviderConfig& cfg) const {
  return ctx_.provider_factory ? ctx_.provider_factory(cfg) : make_provider(cfg);
}

fs::path SessionManager::session_dir(const std::string& id) const {
  if (!valid_session_id(id)) throw Error(ErrorCode::NotFound, "invalid session id '" + id + "'");
  return ctx_.data_dir / "sessions" / id;
}

bool SessionManager::exists(const std::string& id) const {
  return valid_session_id(id) && fs::is_regular_file(session_dir(id) / "events.jsonl");
}

Session SessionManager::load(const std::string& id) const {
  if (!exists(id)) throw Error(ErrorCode::NotFound, "no session '" + id + "'");
  return load_session(session_dir(id));
}

std::vector<std::string> SessionManager::list() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(ctx_.data_dir / "sessions")) {
    if (fs::is_regular_file(entry.path() / "events.jsonl")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

/// Sends prompts on one transcript; messages reach the journal only once the
/// provider has answered, so a failed request leaves no dangling prompt.
struct Conversation {
  Session& s;
  Journal& journal;
  ChatProvider& provider;

  ReplyRef send(const std::string& name, const std::vector<PromptMessage>& prompts) {
    Transcript t = s.transcripts.count(name) ? s.transcripts.at(name) : Transcript{};
    t.session_id = transcript_key(s.session_id, name);
    for (const auto& m : prompts) t.messages.push_back(m);
    PromptMessage reply = provider.complete(t);
    for (const auto& m : prompts) journal.record({{"event", "message"}, {"transcript", name}, {"message", m}});
    journal.record({{"event", "message"}, {"transcript", name}, {"message", reply}});
    return {name, static_cast<int>(s.transcripts.at(name).messages.size()) - 1};
  }

  std::string reply_text(const ReplyRef& r) const { return s.transcripts.at(r.transcript).messages.at(r.message_index).text; }
};

void record_artifact(Session& s, Journal& j, const std::optional<GeneratorArtifact>& gen,
                     const std::optional<ReplyRef>& gen_ref, const std::string& test_code, const ReplyRef& test_ref,
                     const AssembledTest& test) {
  auto sha = j.store(test.source_text);
  json e{{"event", "artifact"},
         {"version", static_cast<int>(s.artifacts.size()) + 1},
         {"generator", gen_json(gen)},
         {"test_code", test_code},
         {"test_source", ref_json(test_ref)},
         {"test", test},
         {"test_sha", sha}};
  e["generator_source"] = gen_ref ? ref_json(*gen_ref) : json(nullptr);
  j.record(std::move(e));
}

}  // namespace

Session SessionManager::open(const TargetApi& target, Strategy strategy, const ProviderConfig& provider_cfg,
                             std::optional<std::string> session_id, IoNames io) {
  target.validate();
  provider_cfg.validate();
  std::string id = session_id.value_or("s-" + random_hex(12));
  if (!valid_session_id(id)) throw Error(ErrorCode::InvalidArgument, "invalid session id '" + id + "'");
  std::lock_guard guard(lock_for(id));
  auto dir = session_dir(id);
  if (fs::exists(dir / "events.jsonl")) throw Error(ErrorCode::InvalidArgument, "session '" + id + "' already exists");

  Session s;
  Journal journal(dir, s);
  journal.record({{"event", "opened"},
                  {"session_id", id},
                  {"target", target},
                  {"strategy", to_string(strategy)},
                  {"provider", provider_cfg},
                  {"io", {{"input", io.input_var}, {"output", io.output_var}}},
                  {"generator_name", default_generator_name(target)}});

  std::optional<std::string> raw;
  try {
    auto chat = provider(provider_cfg);
    Conversation conv{s, journal, *chat};
    const auto& tpl = templates();
    PromptTask gen_task = PromptTask::generator();
    gen_task.generator_name = s.generator_name;
    std::optional<GeneratorArtifact> gen;
    std::optional<ReplyRef> gen_ref;
    ReplyRef test_ref;
    switch (strategy) {
      case Strategy::Together:
        test_ref = conv.send("main", build_synthesis_prompt(target, PromptTask::combined(), tpl));
        break;
      case Strategy::Independent:
        gen_ref = conv.send("generator", build_synthesis_prompt(target, gen_task, tpl));
        raw = conv.reply_text(*gen_ref);
        gen = GeneratorArtifact::from_code(extract_code({Role::Assistant, *raw}).source_text, s.generator_name);
        test_ref = conv.send("properties", build_synthesis_prompt(target, PromptTask::properties(io), tpl));
        break;
      case Strategy::Consecutive:
        gen_ref = conv.send("main", build_synthesis_prompt(target, gen_task, tpl));
        raw = conv.reply_text(*gen_ref);
        gen = GeneratorArtifact::from_code(extract_code({Role::Assistant, *raw}).source_text, s.generator_name);
        test_ref = conv.send("main", {build_consecutive_followup(target, gen->generator_name, io, tpl)});
        break;
    }
    raw = conv.reply_text(test_ref);
    auto test_code = extract_code({Role::Assistant, *raw}).source_text;
    auto test = assemble_for(strategy, target, gen, test_code, io);
    record_artifact(s, journal, gen, gen_ref, test_code, test_ref, test);
  } catch (const Error& e) {
    journal.record({{"event", "synthesis_failed"}, {"error", error_json(e)}, {"raw_reply", raw ? json(*raw) : json(nullptr)}});
    throw Error(ErrorCode::SynthesisFailed, "session " + id + ": synthesis failed (" + e.type() + "): " + e.what());
  }
  return s;
}

QualityScorecard SessionManager::evaluate(const std::string& id, const EvaluationPlanConfig& plan) {
  std::lock_guard guard(lock_for(id));
  Session s = load(id);
  require_state(s, {SessionState::Synthesized, SessionState::Reviewed}, "evaluate");
  plan.validate();
  if (!ctx_.runners) throw Error(ErrorCode::RunnerUnavailable, "no runner configured");
  Journal journal(session_dir(id), s);
  const ArtifactVersion art = *s.latest_artifact();
  const int index = static_cast<int>(s.evaluations.size()) + 1;
  journal.record({{"event", "evaluation_started"}, {"plan", plan}});
  try {
    auto lease = ctx_.runners->acquire();
    SuiteOptions opts{plan.n_runs, plan.seed, plan.collect_coverage, plan.per_run_timeout};
    RunReport report = run_suite(*lease, art.test, opts);
    std::vector<Mutant> mutants;
    std::vector<MutantResult> results;
    std::map<std::string, std::string> diffs;
    if (plan.mutation) {
      mutants = list_mutants(*lease, s.target, plan.operators);
      if (!mutants.empty()) results = exec_mutants(*lease, mutants, art.test, opts);
      for (const auto& m : mutants) diffs[m.mutant_id] = m.diff;
    }
    ScorecardInputs in;
    in.report = &report;
    in.mutants = plan.mutation ? &results : nullptr;
    in.mutant_diffs = diffs;
    in.generator_name = art.generator ? art.generator->generator_name : art.test.test_function;
    in.issue_prefix = "e" + std::to_string(index);
    auto card = build_scorecard(in, plan.thresholds);
    json full{{"run_report", report}, {"mutants", mutants}, {"mutant_results", results}};
    auto sha = journal.store(full.dump(1) + "\n");
    journal.record({{"event", "evaluated"},
                    {"index", index},
                    {"artifact_version", art.version},
                    {"plan", plan},
                    {"scorecard", card},
                    {"report_sha", sha}});
    fs::create_directories(session_dir(id) / "reports");
    write_file_atomic(session_dir(id) / "reports" / ("eval-" + std::to_string(index) + ".json"),
                      json{{"evaluation", index}, {"artifact_version", art.version}, {"scorecard", card},
                           {"report_sha", sha}}
                              .dump(1) +
                          "\n");
    return card;
  } catch (const Error& e) {
    journal.record({{"event", "evaluation_failed"}, {"error", error_json(e)}});
    throw;
  }
}

MitigationAction SessionManager::choose_mitigation(const std::string& id, const std::string& issue_id,
                                                   std::optional<std::string> edited_payload) {
  std::lock_guard guard(lock_for(id));
  Session s = load(id);
  require_state(s, {SessionState::Reviewed}, "choose_mitigation");
  const auto* latest = s.latest_evaluation();
  const Issue* issue = latest ? latest->scorecard.find_issue(issue_id) : nullptr;
  if (!issue) {
    for (const auto& e : s.evaluations) {
      if (e.scorecard.find_issue(issue_id)) {
        throw Error(ErrorCode::StaleIssue, "issue " + issue_id + " belongs to evaluation " + std::to_string(e.index) +
                                               ", not the latest evaluation " + std::to_string(latest->index));
      }
    }
    throw Error(ErrorCode::NotFound, "no issue '" + issue_id + "' in session " + id);
  }
  auto action = make_action(mitigation_for(issue->kind), default_payload(*issue));
  if (edited_payload) action = action.with_payload(*edited_payload);
  if (is_blank(action.payload())) throw Error(ErrorCode::EmptyContext, "mitigation payload is empty");
  Journal journal(session_dir(id), s);
  journal.record({{"event", "mitigation_chosen"}, {"issue", *issue}, {"evaluation_index", latest->index}});
  journal.record({{"event", "mitigation_confirmed"}, {"action", action}});
  return action;
}

int SessionManager::apply_mitigation(const std::string& id) {
  std::lock_guard guard(lock_for(id));
  Session s = load(id);
  require_state(s, {SessionState::Mitigating}, "apply_mitigation");
  Journal journal(session_dir(id), s);
  const auto action = s.pending->action;
  const ArtifactVersion prev = *s.latest_artifact();
  std::optional<std::string> raw;
  try {
    auto chat = provider(s.provider);
    Conversation conv{s, journal, *chat};
    std::string name = s.strategy != Strategy::Independent ? "main"
                       : action.targets_generator()        ? "generator"
                                                           : "properties";
    auto prompt = build_mitigation_prompt(action, s.artifact_name(action), templates());
    auto ref = conv.send(name, {prompt});
    raw = conv.reply_text(ref);
    auto code = extract_code({Role::Assistant, *raw}).source_text;
    std::optional<GeneratorArtifact> gen = prev.generator;
    std::optional<ReplyRef> gen_ref = prev.generator_source;
    std::string test_code = prev.test_code;
    ReplyRef test_ref = prev.test_source;
    if (s.strategy != Strategy::Together && action.targets_generator()) {
      gen = GeneratorArtifact::from_code(code, prev.generator->generator_name);
      gen_ref = ref;
    } else {
      test_code = code;
      test_ref = ref;
    }
    auto test = assemble_for(s.strategy, s.target, gen, test_code, s.io);
    record_artifact(s, journal, gen, gen_ref, test_code, test_ref, test);
    journal.record({{"event", "mitigation_applied"}, {"version", s.latest_artifact()->version}});
    return s.latest_artifact()->version;
  } catch (const Error& e) {
    journal.record({{"event", "mitigation_failed"}, {"error", error_json(e)}, {"raw_reply", raw ? json(*raw) : json(nullptr)}});
    throw Error(ErrorCode::SynthesisFailed, "session " + id + ": mitigation failed (" + e.type() + "): " + e.what());
  }
}

void SessionManager::close(const std::string& id) {
  std::lock_guard guard(lock_for(id));
  Session s = load(id);
  require_state(s,
                {SessionState::Drafting, SessionState::Synthesized, SessionState::Reviewed,
                 SessionState::AwaitingChoice, SessionState::Mitigating},
                "close");
  Journal journal(session_dir(id), s);
  journal.record({{"event", "closed"}});
}

json SessionManager::report(const std::string& id) const {
  Session s = load(id);
  const auto* e = s.latest_evaluation();
  if (!e) throw Error(ErrorCode::NotFound, "session " + id + " has no evaluation yet");
  json full = json::parse(read_file(session_dir(id) / "artifacts" / e->report_sha));
  return json{{"session_id", id},
              {"evaluation", e->index},
              {"artifact_version", e->artifact_version},
              {"plan", e->plan},
              {"scorecard", e->scorecard},
              {"text", render_scorecard_text(e->scorecard)},
              {"run_report", full.at("run_report")},
              {"mutants", full.at("mutants")},
              {"mutant_results", full.at("mutant_results")}};
}

VerifyResult verify_session(const fs::path& dir, const TemplateSet& templates,
                            const std::optional<fs::path>& replay_dir) {
  (void)templates;
  VerifyResult out;
  auto problem = [&](std::string p) {
    out.ok = false;
    out.problems.push_back(std::move(p));
  };
  Session s = load_session(dir);
  for (const auto& a : s.artifacts) {
    const std::string v = "v" + std::to_string(a.version);
    try {
      std::optional<GeneratorArtifact> gen;
      if (a.generator_source) {
        gen = GeneratorArtifact::from_code(code_of(s, *a.generator_source), s.generator_name);
        if (!a.generator || gen->source_text != a.generator->source_text ||
            gen->generator_name != a.generator->generator_name) {
          problem(v + ": generator differs from its recorded reply");
        }
      }
      auto test_code = code_of(s, a.test_source);
      if (test_code != a.test_code) problem(v + ": test code differs from its recorded reply");
      auto test = assemble_for(s.strategy, s.target, gen, test_code, s.io);
      if (test.source_text != a.test.source_text) problem(v + ": re-assembled test differs byte-wise");
      if (json(test) != json(a.test)) problem(v + ": re-assembled test metadata differs");
      auto stored = dir / "artifacts" / a.test_sha;
      if (!fs::is_regular_file(stored) || read_file(stored) != a.test.source_text ||
          sha256_hex(a.test.source_text) != a.test_sha) {
        problem(v + ": content-addressed test file missing or altered");
      }
    } catch (const Error& e) {
      problem(v + ": " + e.type() + ": " + e.what());
    }
    ++out.versions_checked;
  }
  if (replay_dir) {
    ReplayProvider replay(*replay_dir, s.provider.replay_mode);
    for (const auto& [name, t] : s.transcripts) {
      Transcript prefix;
      prefix.session_id = t.session_id;
      for (std::size_t i = 0; i < t.messages.size(); ++i) {
        if (t.messages[i].role == Role::Assistant) {
          try {
            if (replay.complete(prefix).text != t.messages[i].text) {
              problem(name + " message " + std::to_string(i) + ": replayed reply differs");
            }
          } catch (const Error& e) {
            problem(name + " message " + std::to_string(i) + ": " + e.what());
          }
        }
        prefix.messages.push_back(t.messages[i]);
      }
    }
  }
  return out;
}

}  // namespace pbtw
