#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbtw/protocol.hpp"

namespace replay_runner {

/// A deterministic stand-in for the Python sandbox runner. Behaviour is
/// scripted by scenario documents; the first entry whose "match" substrings
/// all occur in the submitted code decides the outcome of a request.
///
/// Rates are spread evenly: event k of a stream fires on step i iff
/// floor((i + 1) * rate) > floor(i * rate), so exactly floor(n * rate) events
/// fire over n steps.
class Scenario {
 public:
  void add(const nlohmann::json& doc);
  void load(const std::filesystem::path& file);

  /// Answers one request; throws pbtw::Error for scripted or malformed cases.
  nlohmann::json handle(const pbtw::RunnerRequest& req) const;

 private:
  const nlohmann::json* match(const std::string& code) const;
  nlohmann::json exec(const pbtw::RunnerRequest& req, bool generator_only) const;
  nlohmann::json list_mutants(const pbtw::RunnerRequest& req) const;
  nlohmann::json exec_mutant(const pbtw::RunnerRequest& req) const;
  nlohmann::json parse_instrument(const pbtw::RunnerRequest& req) const;

  std::vector<nlohmann::json> entries_;
  nlohmann::json mutants_ = nlohmann::json::object();  // qualname -> mutant list
};

/// True when step i of a stream with the given rate fires.
bool fires(int i, double rate);

}  // namespace replay_runner
