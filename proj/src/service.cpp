#include "pbtw/service.hpp"

#include <algorithm>
#include <cstdio>

#include "httplib.h"
#include "pbtw/error.hpp"
#include "pbtw/util.hpp"

namespace pbtw {

using nlohmann::json;
namespace fs = std::filesystem;

void ServiceConfig::validate() const {
  if (data_dir.empty()) throw Error(ErrorCode::ConfigInvalid, "data_dir is required");
  if (runner_cmd.empty()) throw Error(ErrorCode::ConfigInvalid, "runner command is required");
  if (port < 0 || port > 65535) throw Error(ErrorCode::ConfigInvalid, "port out of range");
  std::error_code ec;
  fs::create_directories(data_dir, ec);
  auto probe = data_dir / ".write-probe";
  try {
    write_file_atomic(probe, "");
    fs::remove(probe);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigInvalid, "data_dir " + data_dir.string() + " is not writable");
  }
}

int http_status_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::EmptyDocumentation:
    case ErrorCode::UnsupportedTask:
    case ErrorCode::EmptyContext:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigInvalid: return 422;
    case ErrorCode::InvalidState:
    case ErrorCode::StaleIssue: return 409;
    case ErrorCode::SynthesisFailed:
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::FixtureMissing: return 502;
    case ErrorCode::RunnerUnavailable:
    case ErrorCode::SpawnFailure:
    case ErrorCode::HandshakeTimeout: return 503;
    default: return 500;
  }
}

json error_body(const std::string& type, const std::string& message) {
  return json{{"error", {{"type", type}, {"message", message}}}};
}

json to_json(const Job& j) {
  return json{{"job_id", j.job_id}, {"kind", j.kind},   {"subject", j.subject},
              {"status", j.status}, {"result", j.result}, {"error", j.error}};
}

namespace {

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& type, const std::string& message) {
  send(res, status, error_body(type, message));
}

json parse_body(const httplib::Request& req) {
  if (is_blank(req.body)) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  return j;
}

bool valid_campaign_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.find("..") != std::string::npos) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

ProviderConfig provider_from(const json& j, const ProviderConfig& fallback) {
  if (!j.contains("provider") || j["provider"].is_null()) return fallback;
  ProviderConfig p = j["provider"].is_string() ? ProviderConfig::parse_shorthand(j["provider"].get<std::string>())
                                               : j["provider"].get<ProviderConfig>();
  p.validate();
  return p;
}

}  // namespace

Service::Service(ServiceConfig cfg, SessionContext overrides) : cfg_(std::move(cfg)) {
  cfg_.validate();
  pool_ = std::make_unique<RunnerPool>(RunnerCommand::parse(cfg_.runner_cmd), cfg_.runner_env, cfg_.runner_pool_size);
  ctx_ = std::move(overrides);
  ctx_.data_dir = cfg_.data_dir;
  ctx_.runners = pool_.get();
  sessions_ = std::make_unique<SessionManager>(ctx_);
  fs::create_directories(cfg_.data_dir / "campaigns");
}

Service::~Service() { stop(); }

bool Service::runner_up() {
  bool up = pool_->healthy();
  read_only_ = !up;
  return up;
}

std::string Service::submit_job(std::string kind, std::string subject, std::function<json()> work) {
  Job j;
  j.job_id = "j-" + random_hex(12);
  j.kind = std::move(kind);
  j.subject = std::move(subject);
  std::string id = j.job_id;
  std::lock_guard lock(jobs_mu_);
  jobs_[id] = j;
  workers_.emplace_back([this, id, work = std::move(work)] {
    {
      std::lock_guard l(jobs_mu_);
      jobs_[id].status = "running";
    }
    json result, error;
    try {
      result = work();
    } catch (const Error& e) {
      error = error_body(e.type(), e.what())["error"];
    } catch (const std::exception& e) {
      error = error_body("InternalError", e.what())["error"];
    }
    std::lock_guard l(jobs_mu_);
    auto& job = jobs_[id];
    job.result = result;
    job.error = error;
    job.status = error.is_null() ? "succeeded" : "failed";
  });
  return id;
}

std::optional<Job> Service::job(const std::string& id) const {
  std::lock_guard lock(jobs_mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void Service::routes() {
  auto& srv = *server_;

  // CORS: echo allowed origins only
  srv.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    auto origin = req.get_header_value("Origin");
    if (origin.empty()) return;
    const auto& allow = cfg_.cors_allowlist;
    if (std::find(allow.begin(), allow.end(), origin) != allow.end() ||
        std::find(allow.begin(), allow.end(), "*") != allow.end()) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
    }
  });
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });

  // domain errors become {"error": ...} bodies
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, http_status_for(e), e.type(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 422, "InvalidArgument", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "InternalError", e.what());
    }
  });
  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty() && res.status == 404) send_error(res, 404, "NotFound", "no route for " + req.path);
  });

  auto writable = [this] {
    if (read_only_) throw Error(ErrorCode::RunnerUnavailable, "runner is down; the service is read-only");
  };

  srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    bool up = runner_up();
    send(res, 200,
         {{"status", "ok"},
          {"runner", up ? "up" : "down"},
          {"read_only", !up},
          {"api_version", kApiVersion},
          {"protocol_version", kProtocolVersion}});
  });

  srv.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
    send(res, 200, {{"sessions", sessions_->list()}});
  });

  srv.Post("/sessions", [this, writable](const httplib::Request& req, httplib::Response& res) {
    writable();
    auto body = parse_body(req);
    if (!body.contains("target")) throw Error(ErrorCode::InvalidArgument, "target is required");
    auto target = body["target"].get<TargetApi>();
    target.validate();
    auto strategy = strategy_from_string(body.value("strategy", std::string("together")));
    IoNames io;
    if (body.contains("io")) {
      io.input_var = body["io"].value("input", io.input_var);
      io.output_var = body["io"].value("output", io.output_var);
    }
    std::optional<std::string> id;
    if (body.contains("session_id") && !body["session_id"].is_null()) id = body["session_id"].get<std::string>();
    auto provider = provider_from(body, cfg_.provider);
    if (!id) id = "s-" + random_hex(12);
    try {
      auto s = sessions_->open(target, strategy, provider, id, io);
      send(res, 201, session_to_json(s));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SynthesisFailed || !sessions_->exists(*id)) throw;
      // the session exists in Drafting with the raw reply kept
      json b = error_body(e.type(), e.what());
      b["error"]["session_id"] = *id;
      send(res, http_status_for(e), b);
    }
  });

  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, session_to_json(sessions_->load(req.matches[1])));
  });

  srv.Get(R"(/sessions/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, 200, sessions_->report(req.matches[1]));
  });

  srv.Post(R"(/sessions/([^/]+)/evaluate)", [this, writable](const httplib::Request& req, httplib::Response& res) {
    writable();
    std::string id = req.matches[1];
    auto body = parse_body(req);
    auto plan = body.get<EvaluationPlanConfig>();
    plan.validate();
    auto s = sessions_->load(id);
    if (s.state != SessionState::Synthesized && s.state != SessionState::Reviewed) {
      throw Error(ErrorCode::InvalidState, "evaluate is not allowed in state " + std::string(to_string(s.state)));
    }
    auto job_id = submit_job("evaluate", id, [this, id, plan] { return json(sessions_->evaluate(id, plan)); });
    send(res, 202, {{"job_id", job_id}, {"status", "queued"}});
  });

  srv.Post(R"(/sessions/([^/]+)/mitigations)", [this, writable](const httplib::Request& req, httplib::Response& res) {
    writable();
    std::string id = req.matches[1];
    auto body = parse_body(req);
    if (!body.contains("issue_id")) throw Error(ErrorCode::InvalidArgument, "issue_id is required");
    std::optional<std::string> edited;
    if (body.contains("edited_payload") && !body["edited_payload"].is_null()) {
      edited = body["edited_payload"].get<std::string>();
    }
    if (body.contains("action") && !body["action"].is_null()) {
      // the action must be the one mapped to the issue kind
      auto s = sessions_->load(id);
      auto wanted = mitigation_kind_from_string(body["action"].get<std::string>());
      const auto* e = s.latest_evaluation();
      const Issue* issue = e ? e->scorecard.find_issue(body["issue_id"].get<std::string>()) : nullptr;
      if (issue && mitigation_for(issue->kind) != wanted) {
        throw Error(ErrorCode::InvalidArgument, "issue " + issue->id + " is mitigated by " +
                                                    std::string(to_string(mitigation_for(issue->kind))));
      }
    }
    auto action = sessions_->choose_mitigation(id, body["issue_id"].get<std::string>(), edited);
    auto job_id = submit_job("mitigate", id, [this, id] {
      int v = sessions_->apply_mitigation(id);
      return json{{"version", v}};
    });
    send(res, 202, {{"job_id", job_id}, {"status", "queued"}, {"action", action}});
  });

  srv.Post(R"(/sessions/([^/]+)/close)", [this](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    sessions_->close(id);
    send(res, 200, session_to_json(sessions_->load(id)));
  });

  srv.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto j = job(req.matches[1]);
    if (!j) throw Error(ErrorCode::NotFound, "no job '" + std::string(req.matches[1]) + "'");
    send(res, 200, to_json(*j));
  });

  srv.Post("/campaigns", [this, writable](const httplib::Request& req, httplib::Response& res) {
    writable();
    auto body = parse_body(req);
    std::string cid = body.value("campaign_id", "c-" + random_hex(10));
    body.erase("campaign_id");
    if (!valid_campaign_id(cid)) {
      throw Error(ErrorCode::InvalidArgument, "invalid campaign id");
    }
    auto dir = cfg_.data_dir / "campaigns" / cid;
    {
      std::lock_guard lock(jobs_mu_);
      if (campaign_jobs_.count(cid) || fs::exists(dir)) {
        throw Error(ErrorCode::InvalidArgument, "campaign '" + cid + "' already exists");
      }
    }
    body["output_dir"] = dir.string();
    if (!body.contains("format")) body["format"] = kCampaignConfigFormat;
    if (!body.contains("provider")) body["provider"] = cfg_.provider;
    auto cc = CampaignConfig::from_json(body, cfg_.data_dir);
    auto job_id = submit_job("campaign", cid, [this, cc] {
      CampaignContext cctx{pool_.get(), ctx_.templates, ctx_.provider_factory};
      return to_json(run_campaign(cc, cctx));
    });
    {
      std::lock_guard lock(jobs_mu_);
      campaign_jobs_[cid] = job_id;
    }
    send(res, 202, {{"campaign_id", cid}, {"job_id", job_id}, {"status", "queued"}});
  });

  srv.Get(R"(/campaigns/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::string cid = req.matches[1];
    auto file = cfg_.data_dir / "campaigns" / cid / "campaign.json";
    std::optional<std::string> job_id;
    {
      std::lock_guard lock(jobs_mu_);
      if (auto it = campaign_jobs_.find(cid); it != campaign_jobs_.end()) job_id = it->second;
    }
    if (valid_campaign_id(cid) && fs::is_regular_file(file)) {
      json out{{"campaign_id", cid}, {"status", "succeeded"}, {"report", json::parse(read_file(file))}};
      send(res, 200, out);
      return;
    }
    if (!job_id) throw Error(ErrorCode::NotFound, "no campaign '" + cid + "'");
    auto j = job(*job_id);
    send(res, 200, {{"campaign_id", cid}, {"status", j->status}, {"job_id", *job_id}, {"error", j->error}});
  });
}

void Service::bind() {
  server_ = std::make_unique<httplib::Server>();
  routes();
  if (cfg_.port == 0) {
    port_ = server_->bind_to_any_port(cfg_.host);
    if (port_ < 0) throw Error(ErrorCode::BindFailure, "cannot bind " + cfg_.host);
  } else {
    if (!server_->bind_to_port(cfg_.host, cfg_.port)) {
      throw Error(ErrorCode::BindFailure, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    }
    port_ = cfg_.port;
  }
  runner_up();
}

void Service::start() {
  bind();
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void Service::run() {
  bind();
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(jobs_mu_);
    workers.swap(workers_);
  }
  for (auto& w : workers) {
    if (w.joinable()) w.join();
  }
}

}  // namespace pbtw
