// Regenerates replay fixtures and golden prompt files from reply sources.
//
//   pbt-fixture-builder --manifest fixtures/manifest.json --out fixtures
//
// Hash-keyed replies are produced by opening a real session with a provider
// that answers from the manifest and records the key of every request, so the
// files always agree with the prompts the session actually sends.
#include <deque>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "pbtw/error.hpp"
#include "pbtw/session.hpp"
#include "pbtw/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string as_reply(const std::string& code) { return "```python\n" + code + "```\n"; }

class RecordingProvider : public pbtw::ChatProvider {
 public:
  RecordingProvider(std::deque<std::string> replies, fs::path out) : replies_(std::move(replies)), out_(std::move(out)) {}

  pbtw::PromptMessage complete(const pbtw::Transcript& t) override {
    if (replies_.empty()) throw pbtw::Error(pbtw::ErrorCode::FixtureMissing, "manifest has too few replies");
    std::string text = replies_.front();
    replies_.pop_front();
    pbtw::write_file_atomic(out_ / (pbtw::replay_key(t) + ".md"), text);
    return {pbtw::Role::Assistant, text};
  }

 private:
  std::deque<std::string> replies_;
  fs::path out_;
};

std::string golden_text(const pbtw::Session& s) {
  std::string out;
  for (const auto& [name, t] : s.transcripts) {
    for (const auto& m : t.messages) {
      if (m.role == pbtw::Role::Assistant) continue;
      out += "=== " + name + ": " + std::string(pbtw::to_string(m.role)) + " ===\n" + m.text + "\n";
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regenerate replay fixtures and golden prompts"};
  std::string manifest_path, out_dir;
  app.add_option("--manifest", manifest_path, "Fixture manifest")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output root")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path base = fs::path(manifest_path).parent_path();
    const json manifest = json::parse(pbtw::read_file(manifest_path));
    const fs::path out = out_dir;
    auto code = [&](const json& rel) { return pbtw::read_file(base / rel.get<std::string>()); };

    std::map<std::string, pbtw::TargetApi> targets;
    for (const auto& [name, tj] : manifest.at("targets").items()) {
      json copy = tj;
      copy["doc_text"] = pbtw::read_file(base / tj.at("doc_file").get<std::string>());
      copy.erase("doc_file");
      targets[name] = copy.get<pbtw::TargetApi>();
    }

    const fs::path hash_dir = out / manifest.value("hash_dir", std::string("replay"));
    const fs::path golden_dir = out / manifest.value("golden_dir", std::string("golden/prompts"));
    fs::create_directories(hash_dir);
    fs::create_directories(golden_dir);
    const fs::path scratch = fs::temp_directory_path() / ("pbt-fixture-builder-" + pbtw::random_hex(8));
    int n_files = 0;
    for (const auto& entry : manifest.at("hash")) {
      const auto target_name = entry.at("target").get<std::string>();
      const auto strategy = pbtw::strategy_from_string(entry.at("strategy").get<std::string>());
      std::deque<std::string> replies;
      for (const auto& r : entry.at("replies")) replies.push_back(as_reply(code(r)));
      n_files += static_cast<int>(replies.size());
      pbtw::SessionContext ctx;
      ctx.data_dir = scratch;
      ctx.provider_factory = [&](const pbtw::ProviderConfig&) {
        return std::make_unique<RecordingProvider>(replies, hash_dir);
      };
      pbtw::SessionManager mgr(ctx);
      pbtw::ProviderConfig pc;
      pc.fixture_dir = hash_dir;
      auto s = mgr.open(targets.at(target_name), strategy, pc, target_name + "-" + entry.at("strategy").get<std::string>());
      std::string lower(pbtw::to_string(strategy));
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      pbtw::write_file_atomic(golden_dir / (target_name + "-" + lower + ".txt"), golden_text(s));
    }
    fs::remove_all(scratch);

    for (const auto& [dir, entries] : manifest.at("ordinal").items()) {
      fs::create_directories(out / dir);
      for (const auto& e : entries) {
        int k = 0;
        for (const auto& r : e.at("replies")) {
          char suffix[16];
          std::snprintf(suffix, sizeof suffix, "_%03d", ++k);
          pbtw::write_file_atomic(out / dir / (e.at("key").get<std::string>() + suffix + ".md"), as_reply(code(r)));
          ++n_files;
        }
      }
    }
    std::cout << "wrote " << n_files << " replay fixtures\n";
  } catch (const std::exception& e) {
    std::cerr << "fixture build failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
