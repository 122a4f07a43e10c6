#pragma once

#include <chrono>
#include <condition_variable>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pbtw/assembly.hpp"
#include "pbtw/error.hpp"
#include "pbtw/protocol.hpp"

namespace pbtw {

struct RunnerCommand {
  std::vector<std::string> argv;
  std::optional<std::string> working_dir;

  /// Splits a shell-like command line on whitespace; single and double
  /// quotes group words. No other shell syntax is interpreted.
  static RunnerCommand parse(const std::string& command_line);
};

/// A live runner subprocess speaking protocol v1 over its stdin/stdout.
/// Writes are serialized; any number of requests may be outstanding and
/// responses are matched by id on a reader thread.
class RunnerHandle {
 public:
  ~RunnerHandle();
  RunnerHandle(const RunnerHandle&) = delete;
  RunnerHandle& operator=(const RunnerHandle&) = delete;

  /// Spawns the runner and performs the Ping handshake.
  /// Throws SpawnFailure, HandshakeTimeout or VersionMismatch.
  static std::shared_ptr<RunnerHandle> start(const RunnerCommand& cmd,
                                             const std::map<std::string, std::string>& env = {},
                                             std::chrono::milliseconds handshake_timeout = std::chrono::seconds(5));

  /// Sends a request; the future resolves with the response or holds
  /// RunnerCrashed / ProtocolError.
  std::future<RunnerResponse> submit(RunnerRequest req);

  /// Sends and waits. On timeout the runner is killed and RequestTimeout thrown.
  RunnerResponse request(RunnerRequest req, std::chrono::milliseconds timeout);

  std::string next_id();
  const std::string& version() const { return version_; }
  bool alive() const;
  std::string captured_stderr() const;
  int pid() const { return pid_; }

  /// Closes stdin, waits briefly for exit, then kills.
  void shutdown();

 private:
  RunnerHandle() = default;
  void reader_loop();
  void stderr_loop();
  void fail_all(ErrorCode code, const std::string& message);
  void kill_child();

  int pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  int err_fd_ = -1;
  std::string version_;
  std::thread reader_;
  std::thread err_reader_;

  mutable std::mutex mu_;
  std::condition_variable stderr_done_cv_;
  bool stderr_done_ = false;
  std::mutex write_mu_;
  std::map<std::string, std::promise<RunnerResponse>> pending_;
  std::optional<Error> dead_;
  std::string stderr_buf_;
  unsigned long counter_ = 0;
};

/// Raises Error(RunnerError, remote type, message) for an ok=false response.
const nlohmann::json& expect_ok(const RunnerResponse& r);

struct SuiteOptions {
  int n_runs = 200;
  std::uint64_t seed = 0;
  bool collect_coverage = true;
  std::chrono::milliseconds per_run_timeout{2000};
};

/// Suite-level timeout: n_runs x per_run_timeout x 1.5.
std::chrono::milliseconds suite_timeout(int n_runs, std::chrono::milliseconds per_run_timeout);

/// Runs an assembled test n times (one generated example per run).
RunReport run_suite(RunnerHandle& h, const AssembledTest& test, const SuiteOptions& opts);

/// Draws n values from a generator and records per-run generator errors.
RunReport run_generator(RunnerHandle& h, const GeneratorArtifact& gen, const SuiteOptions& opts);

std::vector<Mutant> list_mutants(RunnerHandle& h, const TargetApi& target,
                                 const std::optional<std::vector<std::string>>& operators = std::nullopt);

/// Executes every mutant against the test, keeping all requests in flight.
std::vector<MutantResult> exec_mutants(RunnerHandle& h, const std::vector<Mutant>& mutants,
                                       const AssembledTest& test, const SuiteOptions& opts);

/// Asks the runner to instrument a fragment ("properties" or "combined").
nlohmann::json parse_instrument(RunnerHandle& h, const std::string& fragment, const std::string& mode,
                                const std::optional<TargetApi>& target);

/// Hands out runner handles to concurrent callers; restarts dead runners.
class RunnerPool {
 public:
  RunnerPool(RunnerCommand cmd, std::map<std::string, std::string> env, std::size_t size);

  class Lease {
   public:
    Lease(RunnerPool* pool, std::shared_ptr<RunnerHandle> h) : pool_(pool), h_(std::move(h)) {}
    Lease(Lease&& o) noexcept : pool_(o.pool_), h_(std::move(o.h_)) { o.pool_ = nullptr; }
    Lease& operator=(Lease&&) = delete;
    ~Lease();
    RunnerHandle& operator*() const { return *h_; }
    RunnerHandle* operator->() const { return h_.get(); }

   private:
    RunnerPool* pool_;
    std::shared_ptr<RunnerHandle> h_;
  };

  /// Blocks until a runner is free; starts one if needed (may throw start errors).
  Lease acquire();
  /// Starts one runner and pings it; false when the runner cannot start.
  bool healthy();
  const RunnerCommand& command() const { return cmd_; }

 private:
  void release(std::shared_ptr<RunnerHandle> h);

  RunnerCommand cmd_;
  std::map<std::string, std::string> env_;
  std::size_t size_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::shared_ptr<RunnerHandle>> idle_;
  std::size_t leased_ = 0;
};

}  // namespace pbtw
