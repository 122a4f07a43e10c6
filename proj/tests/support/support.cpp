#include "support.hpp"

#include "json.hpp"
#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace testsupport {

using nlohmann::json;

TempDir::TempDir() : path_(fs::temp_directory_path() / ("pbtw-test-" + pbtw::random_hex(10))) {
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path fixture_dir() { return PBTW_TEST_FIXTURES; }
fs::path fixture(const std::string& rel) { return fixture_dir() / rel; }
std::string fixture_text(const std::string& rel) { return pbtw::read_file(fixture(rel)); }
fs::path runner_exe() { return PBTW_TEST_RUNNER; }
fs::path builder_exe() { return PBTW_TEST_BUILDER; }
fs::path workbench_exe() { return PBTW_TEST_WORKBENCH; }

pbtw::TargetApi target(const std::string& name) {
  static const json manifest = json::parse(fixture_text("manifest.json"));
  json t = manifest.at("targets").at(name);
  t["doc_text"] = fixture_text(t.at("doc_file").get<std::string>());
  t.erase("doc_file");
  return t.get<pbtw::TargetApi>();
}

std::string runner_command(const std::vector<std::string>& scenarios, const std::string& extra_flags) {
  std::string cmd = runner_exe().string();
  for (const auto& s : scenarios) cmd += " --scenario " + fixture("scenarios/" + s + ".json").string();
  if (!extra_flags.empty()) cmd += " " + extra_flags;
  return cmd;
}

pbtw::ProviderConfig replay(const std::string& dir, pbtw::ReplayKeyMode mode) {
  pbtw::ProviderConfig pc;
  pc.kind = pbtw::ProviderKind::Replay;
  pc.fixture_dir = fixture(dir);
  pc.replay_mode = mode;
  return pc;
}

pbtw::PromptMessage ScriptedProvider::complete(const pbtw::Transcript& t) {
  seen.push_back(t);
  if (replies_.empty()) throw pbtw::Error(pbtw::ErrorCode::FixtureMissing, "script exhausted");
  auto text = replies_.front();
  replies_.pop_front();
  return {pbtw::Role::Assistant, text};
}

std::string as_reply(const std::string& code) { return "```python\n" + code + "```\n"; }

std::vector<std::string> lines_of(const std::string& text) { return pbtw::split_lines(text); }

}  // namespace testsupport
