#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/assembly.hpp"
#include "pbtw/gateway.hpp"
#include "pbtw/metrics.hpp"
#include "pbtw/prompts.hpp"
#include "pbtw/runner.hpp"

namespace pbtw {

enum class Strategy { Independent, Consecutive, Together };
std::string_view to_string(Strategy s);
/// Accepts "Independent"/"independent" etc.
Strategy strategy_from_string(std::string_view name);

enum class SessionState { Drafting, Synthesized, Evaluating, Reviewed, AwaitingChoice, Mitigating, Closed };
std::string_view to_string(SessionState s);
SessionState session_state_from_string(std::string_view name);

struct EvaluationPlanConfig {
  int n_runs = 200;
  bool collect_coverage = true;
  bool mutation = true;
  Thresholds thresholds;
  std::uint64_t seed = 0;
  std::chrono::milliseconds per_run_timeout{2000};
  std::optional<std::vector<std::string>> operators;  // all operators when empty

  /// Throws InvalidArgument for n_runs < 1 or thresholds out of range.
  void validate() const;
  bool operator==(const EvaluationPlanConfig&) const = default;
};

void to_json(nlohmann::json& j, const EvaluationPlanConfig& p);
void from_json(const nlohmann::json& j, EvaluationPlanConfig& p);

/// Where an artifact's code came from: a reply in one of the transcripts.
struct ReplyRef {
  std::string transcript;
  int message_index = 0;
  bool operator==(const ReplyRef&) const = default;
};

struct ArtifactVersion {
  int version = 0;
  std::optional<GeneratorArtifact> generator;
  std::optional<ReplyRef> generator_source;
  std::string test_code;  // properties block, Consecutive test function or Together test
  ReplyRef test_source;
  AssembledTest test;
  std::string test_sha;  // content address of test.source_text
};

struct EvaluationRecord {
  int index = 0;  // 1-based
  int artifact_version = 0;
  EvaluationPlanConfig plan;
  QualityScorecard scorecard;
  std::string report_sha;  // content address of the full run report
};

struct MitigationRecord {
  Issue issue;
  MitigationAction action;
  std::optional<int> resulting_version;  // empty when the attempt failed
  std::string error;
};

struct PendingMitigation {
  Issue issue;
  MitigationAction action;
  int evaluation_index = 0;
};

struct Session {
  std::string session_id;
  TargetApi target;
  Strategy strategy = Strategy::Together;
  ProviderConfig provider;
  IoNames io;
  std::string generator_name;
  std::map<std::string, Transcript> transcripts;  // "main", or "generator" and "properties"
  std::vector<ArtifactVersion> artifacts;
  std::vector<EvaluationRecord> evaluations;
  std::vector<MitigationRecord> mitigation_log;
  std::optional<PendingMitigation> pending;
  SessionState state = SessionState::Drafting;
  SessionState resume_state = SessionState::Synthesized;  // state to return to if an evaluation is interrupted
  std::optional<std::string> last_raw_reply;  // retained after a failed synthesis
  std::optional<std::string> last_error;
  int events = 0;

  const ArtifactVersion* latest_artifact() const;
  const EvaluationRecord* latest_evaluation() const;
  /// Name used for the artifact a mitigation addresses.
  std::string artifact_name(const MitigationAction& action) const;

  /// Applies one journal event; the only way session state changes.
  void apply(const nlohmann::json& event);
};

/// API view of a session: everything except raw run reports, plus unified
/// diffs between consecutive artifact versions.
nlohmann::json session_to_json(const Session& s);

/// Maps issue kinds to mitigation kinds (InvalidGenerator -> FixGeneratorError, ...).
MitigationKind mitigation_for(IssueKind kind);

/// Default mitigation payload derived from an issue's evidence.
std::string default_payload(const Issue& issue);

/// The mapped action carrying the default payload.
MitigationAction default_action(const Issue& issue);

/// Builds every prompt in a session; the template set and provider factory
/// are injectable so tests can script conversations.
struct SessionContext {
  std::filesystem::path data_dir;
  const TemplateSet* templates = nullptr;  // shipped set when null
  std::function<std::unique_ptr<ChatProvider>(const ProviderConfig&)> provider_factory;  // make_provider when empty
  RunnerPool* runners = nullptr;  // required by evaluate
};

/// Owns the session store under data_dir/sessions. Operations on one session
/// are serialized; distinct sessions proceed in parallel.
class SessionManager {
 public:
  explicit SessionManager(SessionContext ctx);

  /// Creates the session (state Drafting) and synthesizes artifact v1.
  /// On extraction or assembly failure the session stays in Drafting with
  /// the raw reply retained and SynthesisFailed is thrown.
  Session open(const TargetApi& target, Strategy strategy, const ProviderConfig& provider,
               std::optional<std::string> session_id = std::nullopt, IoNames io = {});

  QualityScorecard evaluate(const std::string& session_id, const EvaluationPlanConfig& plan);

  /// Selects an issue of the latest evaluation and fixes the outbound payload
  /// (default payload unless edited). Reviewed -> AwaitingChoice -> Mitigating.
  MitigationAction choose_mitigation(const std::string& session_id, const std::string& issue_id,
                                     std::optional<std::string> edited_payload = std::nullopt);

  /// Sends the pending mitigation and re-assembles. Mitigating -> Synthesized,
  /// or Reviewed with SynthesisFailed.
  int apply_mitigation(const std::string& session_id);

  void close(const std::string& session_id);

  Session load(const std::string& session_id) const;
  bool exists(const std::string& session_id) const;
  std::vector<std::string> list() const;
  std::filesystem::path session_dir(const std::string& session_id) const;

  /// Latest scorecard, its full run report and a text rendering.
  nlohmann::json report(const std::string& session_id) const;

  const SessionContext& context() const { return ctx_; }

 private:
  std::mutex& lock_for(const std::string& session_id);
  const TemplateSet& templates() const;
  std::unique_ptr<ChatProvider> provider(const ProviderConfig& cfg) const;

  SessionContext ctx_;
  std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

/// Appends events to a session journal and keeps the in-memory session in step.
class Journal {
 public:
  Journal(std::filesystem::path dir, Session& session);
  void record(nlohmann::json event);
  /// Stores bytes under their SHA-256 and returns the hash.
  std::string store(const std::string& bytes);

 private:
  std::filesystem::path dir_;
  Session& session_;
};

/// Rebuilds a session from its journal alone.
Session load_session(const std::filesystem::path& dir);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> problems;
  int versions_checked = 0;
};

/// Replays a session directory: every artifact version is re-extracted and
/// re-assembled from the journalled replies and compared byte-for-byte with
/// the stored version. With a replay provider directory, every reply is also
/// re-requested and compared.
VerifyResult verify_session(const std::filesystem::path& dir, const TemplateSet& templates = TemplateSet::shipped(),
                            const std::optional<std::filesystem::path>& replay_dir = std::nullopt);

/// Re-derives an artifact from code texts exactly as the session does.
AssembledTest assemble_for(Strategy strategy, const TargetApi& target, const std::optional<GeneratorArtifact>& gen,
                           const std::string& test_code, const IoNames& io);

}  // namespace pbtw
