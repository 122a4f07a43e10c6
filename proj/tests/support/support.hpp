#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pbtw/gateway.hpp"
#include "pbtw/prompts.hpp"
#include "pbtw/runner.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

fs::path fixture_dir();
fs::path fixture(const std::string& rel);
std::string fixture_text(const std::string& rel);
fs::path runner_exe();
fs::path builder_exe();
fs::path workbench_exe();

/// Targets of the bundled doc fixtures: "cumsum", "find_cycle", "total_seconds".
pbtw::TargetApi target(const std::string& name);

/// Replay runner command loading the named scenario files (without ".json").
std::string runner_command(const std::vector<std::string>& scenarios = {"numpy", "networkx", "datetime"},
                           const std::string& extra_flags = "");

/// Provider config for a fixture directory below fixtures/.
pbtw::ProviderConfig replay(const std::string& dir, pbtw::ReplayKeyMode mode = pbtw::ReplayKeyMode::SessionOrdinal);

/// Answers from a fixed list and remembers every transcript it saw.
class ScriptedProvider : public pbtw::ChatProvider {
 public:
  explicit ScriptedProvider(std::deque<std::string> replies) : replies_(std::move(replies)) {}
  pbtw::PromptMessage complete(const pbtw::Transcript& t) override;
  std::vector<pbtw::Transcript> seen;

 private:
  std::deque<std::string> replies_;
};

/// Fenced python reply around a code text.
std::string as_reply(const std::string& code);

/// Splits "a\nb\n" into lines, keeping no terminators.
std::vector<std::string> lines_of(const std::string& text);

}  // namespace testsupport
