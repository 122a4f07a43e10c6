#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pbtw/campaign.hpp"
#include "pbtw/session.hpp"

namespace httplib {
class Server;
}

namespace pbtw {

inline constexpr const char* kApiVersion = "1";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir;
  std::string runner_cmd;
  std::map<std::string, std::string> runner_env;
  std::size_t runner_pool_size = 2;
  ProviderConfig provider;  // used when a request names no provider
  std::vector<std::string> cors_allowlist;  // exact origins, or "*"

  void validate() const;
};

/// HTTP status for a domain error type.
int http_status_for(const Error& e);

/// {"error": {"type", "message"}}
nlohmann::json error_body(const std::string& type, const std::string& message);

struct Job {
  std::string job_id;
  std::string kind;  // "evaluate", "mitigate" or "campaign"
  std::string subject;  // session or campaign id
  std::string status = "queued";  // queued, running, succeeded, failed
  nlohmann::json result;
  nlohmann::json error;
};

nlohmann::json to_json(const Job& j);

/// HTTP JSON API v1 over the session and campaign modules. Long operations
/// run as jobs polled through GET /jobs/{id}.
class Service {
 public:
  explicit Service(ServiceConfig cfg, SessionContext overrides = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts serving on a background thread. Checks the runner; a
  /// runner that fails its handshake leaves the service read-only. Throws
  /// BindFailure.
  void start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

  int port() const { return port_; }
  bool read_only() const { return read_only_; }
  SessionManager& sessions() { return *sessions_; }

 private:
  void bind();
  void routes();
  std::string submit_job(std::string kind, std::string subject, std::function<nlohmann::json()> work);
  std::optional<Job> job(const std::string& id) const;
  bool runner_up();

  ServiceConfig cfg_;
  std::unique_ptr<RunnerPool> pool_;
  std::unique_ptr<SessionManager> sessions_;
  SessionContext ctx_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  int port_ = 0;
  std::atomic<bool> read_only_{false};

  mutable std::mutex jobs_mu_;
  std::map<std::string, Job> jobs_;
  std::vector<std::thread> workers_;
  std::map<std::string, std::string> campaign_jobs_;  // campaign id -> job id
};

}  // namespace pbtw
