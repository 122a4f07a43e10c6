// Scripted runner speaking protocol v1 on stdin/stdout. Used for offline
// evaluation and for exercising the client against misbehaving runners.
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "pbtw/error.hpp"
#include "pbtw/protocol.hpp"
#include "scenario.hpp"

using nlohmann::json;

namespace {

struct Misbehaviour {
  std::string version = pbtw::kProtocolVersion;
  bool no_handshake = false;
  std::string crash_on, malformed_on, hang_on, wrong_id_on;
  int reverse_batch = 0;
};

void emit(const json& frame) { std::cout << frame.dump() << "\n" << std::flush; }

json answer(const replay_runner::Scenario& sc, const Misbehaviour& mb, const json& frame) {
  std::string id = frame.value("id", std::string{});
  try {
    auto req = frame.get<pbtw::RunnerRequest>();
    req.validate();
    json payload = req.kind == pbtw::RequestKind::Ping ? json{{"version", mb.version}} : sc.handle(req);
    return json{{"id", id}, {"ok", true}, {"payload", payload}};
  } catch (const pbtw::Error& e) {
    return json{{"id", id}, {"ok", false}, {"error", {{"type", e.type()}, {"message", e.what()}}}};
  } catch (const std::exception& e) {
    return json{{"id", id}, {"ok", false}, {"error", {{"type", "BadRequest"}, {"message", e.what()}}}};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scripted protocol v1 runner"};
  std::vector<std::string> scenario_files;
  Misbehaviour mb;
  app.add_option("--scenario", scenario_files, "Scenario JSON (repeatable; env PBT_RUNNER_SCENARIO)");
  app.add_option("--version", mb.version, "Protocol version reported on Ping");
  app.add_flag("--no-handshake", mb.no_handshake, "Never answer Ping");
  app.add_option("--crash-on", mb.crash_on, "Exit when a request of this kind arrives");
  app.add_option("--malformed-on", mb.malformed_on, "Answer this kind with a non-JSON line");
  app.add_option("--hang-on", mb.hang_on, "Never answer this kind");
  app.add_option("--wrong-id-on", mb.wrong_id_on, "Answer this kind under an unknown id");
  app.add_option("--reverse-batch", mb.reverse_batch, "Answer every N requests in reverse order");
  CLI11_PARSE(app, argc, argv);

  if (scenario_files.empty()) {
    if (const char* env = std::getenv("PBT_RUNNER_SCENARIO"); env && *env) scenario_files.push_back(env);
  }
  replay_runner::Scenario sc;
  try {
    for (const auto& f : scenario_files) sc.load(f);
  } catch (const std::exception& e) {
    std::cerr << "cannot load scenario: " << e.what() << "\n";
    return 2;
  }

  std::vector<json> batch;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    json frame = json::parse(line, nullptr, false);
    if (frame.is_discarded()) {
      emit({{"id", ""}, {"ok", false}, {"error", {{"type", "BadRequest"}, {"message", "frame is not JSON"}}}});
      continue;
    }
    const std::string kind = frame.value("kind", std::string{});
    if (kind == "Ping" && mb.no_handshake) continue;
    if (!mb.crash_on.empty() && kind == mb.crash_on) {
      std::cerr << "replay runner: scripted crash on " << kind << "\n";
      std::_Exit(3);
    }
    if (!mb.hang_on.empty() && kind == mb.hang_on) {
      for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
    }
    if (!mb.malformed_on.empty() && kind == mb.malformed_on) {
      std::cout << "this is not a frame\n" << std::flush;
      continue;
    }
    json reply = answer(sc, mb, frame);
    if (!mb.wrong_id_on.empty() && kind == mb.wrong_id_on) reply["id"] = "no-such-request";
    if (mb.reverse_batch > 1 && kind != "Ping") {
      batch.push_back(std::move(reply));
      if (static_cast<int>(batch.size()) == mb.reverse_batch) {
        for (auto it = batch.rbegin(); it != batch.rend(); ++it) emit(*it);
        batch.clear();
      }
      continue;
    }
    emit(reply);
  }
  for (auto it = batch.rbegin(); it != batch.rend(); ++it) emit(*it);
  return 0;
}
