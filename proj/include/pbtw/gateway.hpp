#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/prompts.hpp"

namespace pbtw {

struct Transcript {
  std::vector<PromptMessage> messages;
  std::string session_id;

  /// First message System, then alternating User/Assistant. With
  /// `expect_completion`, the last message must be a User message.
  void validate(bool expect_completion) const;

  /// Number of assistant replies so far.
  std::size_t reply_count() const;
};

void to_json(nlohmann::json& j, const Transcript& t);
void from_json(const nlohmann::json& j, Transcript& t);

enum class ProviderKind { Http, Replay };
enum class ReplayKeyMode { TranscriptHash, SessionOrdinal };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::Replay;
  std::optional<std::string> endpoint;  // Http: full URL of the chat-completion endpoint
  std::optional<std::string> model_name;
  std::string api_key_env = "PBT_LLM_API_KEY";
  std::string auth_header = "Authorization";  // value sent as "Bearer <key>" for Authorization
  std::optional<std::filesystem::path> fixture_dir;  // Replay only
  ReplayKeyMode replay_mode = ReplayKeyMode::TranscriptHash;
  std::chrono::milliseconds request_timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds retry_base_delay{500};
  /// Sampling/decoding parameters forwarded verbatim in the request body.
  nlohmann::json passthrough = nlohmann::json::object();

  void validate() const;

  /// "replay:<dir>" or "http:<url>" shorthand used by the CLI.
  static ProviderConfig parse_shorthand(const std::string& spec);
};

void to_json(nlohmann::json& j, const ProviderConfig& c);
void from_json(const nlohmann::json& j, ProviderConfig& c);

struct CodeBlock {
  std::string source_text;
  std::string origin_response_id;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  /// Returns the assistant reply. Never modifies `transcript`.
  virtual PromptMessage complete(const Transcript& transcript) = 0;
};

/// Fixture key for the transcript-hash mode: lowercase hex SHA-256 over
/// "<role>:<byte length>:<text>\n" for each message in order.
std::string replay_key(const Transcript& transcript);

/// Fixture key for the ordinal mode: "<session_id>_<NNN>" where NNN is the
/// 1-based index of the reply being requested.
std::string replay_ordinal_key(const Transcript& transcript);

class ReplayProvider : public ChatProvider {
 public:
  ReplayProvider(std::filesystem::path fixture_dir, ReplayKeyMode mode = ReplayKeyMode::TranscriptHash);
  PromptMessage complete(const Transcript& transcript) override;

  std::string key_for(const Transcript& transcript) const;

 private:
  std::filesystem::path dir_;
  ReplayKeyMode mode_;
};

class HttpProvider : public ChatProvider {
 public:
  explicit HttpProvider(ProviderConfig cfg);
  PromptMessage complete(const Transcript& transcript) override;

  /// The JSON body sent for a transcript.
  nlohmann::json request_body(const Transcript& transcript) const;

 private:
  ProviderConfig cfg_;
};

std::unique_ptr<ChatProvider> make_provider(const ProviderConfig& cfg);

/// One-shot completion with a provider built from `cfg`.
PromptMessage complete(const Transcript& transcript, const ProviderConfig& cfg);

/// Concatenates all fenced code regions (one blank line between blocks), or
/// takes the whole text when there are none, then cuts everything from the
/// first line reading "# End program". Throws NoCodeFound when nothing is left.
CodeBlock extract_code(const PromptMessage& reply);

}  // namespace pbtw
