#include "pbtw/gateway.hpp"

#include <cstdio>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace pbtw {

using nlohmann::json;

void Transcript::validate(bool expect_completion) const {
  if (messages.empty() || messages.front().role != Role::System) {
    throw Error(ErrorCode::InvalidArgument, "transcript must start with a system message");
  }
  for (std::size_t i = 1; i < messages.size(); ++i) {
    Role expected = (i % 2 == 1) ? Role::User : Role::Assistant;
    if (messages[i].role != expected) {
      throw Error(ErrorCode::InvalidArgument, "transcript roles must alternate user/assistant after the system message");
    }
  }
  if (expect_completion && messages.back().role != Role::User) {
    throw Error(ErrorCode::InvalidArgument, "completion requires the transcript to end with a user message");
  }
}

std::size_t Transcript::reply_count() const {
  std::size_t n = 0;
  for (const auto& m : messages) n += m.role == Role::Assistant;
  return n;
}

void to_json(json& j, const Transcript& t) { j = json{{"session_id", t.session_id}, {"messages", t.messages}}; }

void from_json(const json& j, Transcript& t) {
  t.session_id = j.value("session_id", std::string{});
  t.messages = j.at("messages").get<std::vector<PromptMessage>>();
}

void ProviderConfig::validate() const {
  if (kind == ProviderKind::Http) {
    if (!endpoint || endpoint->empty()) throw Error(ErrorCode::ConfigInvalid, "http provider needs an endpoint");
    if (!model_name || model_name->empty()) throw Error(ErrorCode::ConfigInvalid, "http provider needs a model name");
  } else if (!fixture_dir) {
    throw Error(ErrorCode::ConfigInvalid, "replay provider needs a fixture directory");
  }
  if (max_retries < 0) throw Error(ErrorCode::ConfigInvalid, "max_retries must be non-negative");
}

ProviderConfig ProviderConfig::parse_shorthand(const std::string& spec) {
  ProviderConfig cfg;
  if (spec.rfind("replay:", 0) == 0) {
    cfg.kind = ProviderKind::Replay;
    cfg.fixture_dir = spec.substr(7);
  } else if (spec.rfind("replay-ordinal:", 0) == 0) {
    cfg.kind = ProviderKind::Replay;
    cfg.replay_mode = ReplayKeyMode::SessionOrdinal;
    cfg.fixture_dir = spec.substr(15);
  } else if (spec.rfind("http:", 0) == 0 || spec.rfind("https:", 0) == 0) {
    cfg.kind = ProviderKind::Http;
    auto rest = spec.substr(spec.find(':') + 1);
    // http:<model>@<url>  or  http:<url> (model from PBT_LLM_MODEL)
    if (rest.rfind("//", 0) == 0) {
      cfg.endpoint = spec;  // a plain URL
      if (const char* m = std::getenv("PBT_LLM_MODEL")) cfg.model_name = m;
    } else if (auto at = rest.find('@'); at != std::string::npos && rest.find("://") > at) {
      cfg.model_name = rest.substr(0, at);
      cfg.endpoint = rest.substr(at + 1);
    } else {
      cfg.endpoint = spec.rfind("https:", 0) == 0 && rest.find("://") == std::string::npos ? "https:" + rest : rest;
      if (const char* m = std::getenv("PBT_LLM_MODEL")) cfg.model_name = m;
    }
  } else {
    throw Error(ErrorCode::ConfigInvalid, "provider must be replay:<dir> or http:[model@]<url>, got '" + spec + "'");
  }
  cfg.validate();
  return cfg;
}

void to_json(json& j, const ProviderConfig& c) {
  j = json::object();
  j["kind"] = c.kind == ProviderKind::Http ? "http" : "replay";
  if (c.endpoint) j["endpoint"] = *c.endpoint;
  if (c.model_name) j["model_name"] = *c.model_name;
  j["api_key_env"] = c.api_key_env;
  j["auth_header"] = c.auth_header;
  if (c.fixture_dir) j["fixture_dir"] = c.fixture_dir->string();
  j["replay_mode"] = c.replay_mode == ReplayKeyMode::TranscriptHash ? "hash" : "ordinal";
  j["request_timeout_ms"] = c.request_timeout.count();
  j["max_retries"] = c.max_retries;
  if (!c.passthrough.empty()) j["passthrough"] = c.passthrough;
}

void from_json(const json& j, ProviderConfig& c) {
  c = ProviderConfig{};
  auto kind = j.value("kind", std::string("replay"));
  if (kind == "http") {
    c.kind = ProviderKind::Http;
  } else if (kind == "replay") {
    c.kind = ProviderKind::Replay;
  } else {
    throw Error(ErrorCode::ConfigInvalid, "unknown provider kind '" + kind + "'");
  }
  if (j.contains("endpoint")) c.endpoint = j["endpoint"].get<std::string>();
  if (j.contains("model_name")) c.model_name = j["model_name"].get<std::string>();
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.auth_header = j.value("auth_header", c.auth_header);
  if (j.contains("fixture_dir")) c.fixture_dir = j["fixture_dir"].get<std::string>();
  c.replay_mode = j.value("replay_mode", std::string("hash")) == "ordinal" ? ReplayKeyMode::SessionOrdinal
                                                                          : ReplayKeyMode::TranscriptHash;
  c.request_timeout = std::chrono::milliseconds(j.value("request_timeout_ms", c.request_timeout.count()));
  c.max_retries = j.value("max_retries", c.max_retries);
  if (j.contains("passthrough")) c.passthrough = j["passthrough"];
}

std::string replay_key(const Transcript& transcript) {
  std::string material;
  for (const auto& m : transcript.messages) {
    material += to_string(m.role);
    material += ':';
    material += std::to_string(m.text.size());
    material += ':';
    material += m.text;
    material += '\n';
  }
  return sha256_hex(material);
}

std::string replay_ordinal_key(const Transcript& transcript) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03zu", transcript.reply_count() + 1);
  return transcript.session_id + "_" + buf;
}

ReplayProvider::ReplayProvider(std::filesystem::path fixture_dir, ReplayKeyMode mode)
    : dir_(std::move(fixture_dir)), mode_(mode) {}

std::string ReplayProvider::key_for(const Transcript& transcript) const {
  return mode_ == ReplayKeyMode::TranscriptHash ? replay_key(transcript) : replay_ordinal_key(transcript);
}

PromptMessage ReplayProvider::complete(const Transcript& transcript) {
  transcript.validate(true);
  auto key = key_for(transcript);
  auto path = dir_ / (key + ".md");
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::FixtureMissing, "no replay fixture " + path.string());
  }
  return {Role::Assistant, read_file(path)};
}

HttpProvider::HttpProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

json HttpProvider::request_body(const Transcript& transcript) const {
  json body = cfg_.passthrough.is_object() ? cfg_.passthrough : json::object();
  body["model"] = *cfg_.model_name;
  json messages = json::array();
  for (const auto& m : transcript.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.text}});
  }
  body["messages"] = std::move(messages);
  return body;
}

namespace {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigInvalid, "endpoint is not a URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::optional<std::string> reply_text(const json& j) {
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& c = j["choices"][0];
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string()) {
      return c["message"]["content"].get<std::string>();
    }
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
  }
  if (j.contains("message") && j["message"].is_object() && j["message"].contains("content")) {
    return j["message"]["content"].get<std::string>();
  }
  if (j.contains("content") && j["content"].is_string()) return j["content"].get<std::string>();
  return std::nullopt;
}

}  // namespace

PromptMessage HttpProvider::complete(const Transcript& transcript) {
  transcript.validate(true);
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(ErrorCode::AuthMissing, "environment variable " + cfg_.api_key_env + " is not set");
  }
  auto url = split_url(*cfg_.endpoint);
  std::string body = request_body(transcript).dump();
  httplib::Headers headers;
  if (cfg_.auth_header == "Authorization") {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  } else {
    headers.emplace(cfg_.auth_header, key);
  }

  std::string last_failure;
  auto delay = cfg_.retry_base_delay;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(url.base);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.request_timeout).count();
    client.set_connection_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
    client.set_read_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::ProviderUnavailable, "provider answered HTTP " + std::to_string(res->status) + ": " +
                                                      res->body.substr(0, 512));
    }
    auto parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw Error(ErrorCode::ProviderUnavailable, "provider reply is not JSON");
    auto text = reply_text(parsed);
    if (!text) throw Error(ErrorCode::ProviderUnavailable, "provider reply carries no assistant text");
    return {Role::Assistant, *text};
  }
  throw Error(ErrorCode::ProviderUnavailable,
              "provider unreachable after " + std::to_string(cfg_.max_retries + 1) + " attempts (" + last_failure + ")");
}

std::unique_ptr<ChatProvider> make_provider(const ProviderConfig& cfg) {
  cfg.validate();
  if (cfg.kind == ProviderKind::Http) return std::make_unique<HttpProvider>(cfg);
  return std::make_unique<ReplayProvider>(*cfg.fixture_dir, cfg.replay_mode);
}

PromptMessage complete(const Transcript& transcript, const ProviderConfig& cfg) {
  return make_provider(cfg)->complete(transcript);
}

namespace {

bool is_fence(std::string_view line) {
  auto t = trim(line);
  return t.substr(0, 3) == "```";
}

bool is_end_sentinel(std::string_view line) { return trim(line) == "# End program"; }

}  // namespace

CodeBlock extract_code(const PromptMessage& reply) {
  const std::string& text = reply.text;
  std::vector<std::string> blocks;
  bool any_fence = false;
  {
    bool inside = false;
    std::string current;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      std::string_view line(text.data() + pos, (nl == std::string::npos ? text.size() : nl) - pos);
      if (is_fence(line)) {
        any_fence = true;
        if (inside) {
          blocks.push_back(std::move(current));
          current.clear();
        }
        inside = !inside;
      } else if (inside) {
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        current.append(line);
        current.push_back('\n');
      }
      if (nl == std::string::npos) break;
      pos = nl + 1;
    }
    if (inside && !current.empty()) blocks.push_back(std::move(current));
  }

  std::string code;
  if (!any_fence) {
    code = text;
  } else {
    for (auto& b : blocks) {
      while (!b.empty() && (b.back() == '\n' || b.back() == ' ' || b.back() == '\t')) b.pop_back();
      if (b.empty()) continue;
      if (!code.empty()) code += "\n\n";
      code += b;
    }
    if (!code.empty()) code += '\n';
  }

  std::size_t pos = 0;
  while (pos < code.size()) {
    auto nl = code.find('\n', pos);
    std::string_view line(code.data() + pos, (nl == std::string::npos ? code.size() : nl) - pos);
    if (is_end_sentinel(line)) {
      code.erase(pos);
      break;
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }

  if (is_blank(code)) throw Error(ErrorCode::NoCodeFound, "reply contains no code");
  return {code, sha256_hex(text).substr(0, 16)};
}

}  // namespace pbtw
