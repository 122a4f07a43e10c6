#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pbtw {

enum class ErrorCode {
  // synthesis-prompts
  EmptyDocumentation,
  UnsupportedTask,
  EmptyContext,
  TemplateMissing,
  // llm-gateway
  ProviderUnavailable,
  FixtureMissing,
  AuthMissing,
  NoCodeFound,
  // test-assembly
  NoAssertionsFound,
  MalformedGenerator,
  UnparseableFragment,
  TargetCallNotFound,
  MultipleTestFunctions,
  InvalidPhaseMap,
  // execution-protocol
  SpawnFailure,
  HandshakeTimeout,
  VersionMismatch,
  RunnerCrashed,
  ProtocolError,
  RequestTimeout,
  RunnerError,  // error reported by the runner itself; remote type kept separately
  // quality-metrics
  EmptyReport,
  UnresolvedScope,
  NoMutants,
  // refinement-session / campaign / service
  SynthesisFailed,
  StaleIssue,
  InvalidState,
  ConfigInvalid,
  NotFound,
  BindFailure,
  RunnerUnavailable,
  // shared
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Domain error carrying a stable type name that crosses the CLI, HTTP and
/// runner-protocol boundaries unchanged.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Error(ErrorCode code, std::string remote_type, const std::string& message)
      : std::runtime_error(message), code_(code), remote_type_(std::move(remote_type)) {}

  ErrorCode code() const noexcept { return code_; }

  /// Wire-level type name. Runner-originated errors report the runner's own
  /// type (e.g. "ImportFailure").
  std::string type() const {
    if (code_ == ErrorCode::RunnerError && !remote_type_.empty()) return remote_type_;
    return std::string(to_string(code_));
  }

 private:
  ErrorCode code_;
  std::string remote_type_;
};

}  // namespace pbtw
