#include "pbtw/runner.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "pbtw/error.hpp"

extern char** environ;

namespace pbtw {

using nlohmann::json;

namespace {

constexpr std::size_t kStderrLimit = 64 * 1024;

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

std::string describe_exit(int status) {
  if (WIFEXITED(status)) return "exited with status " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
  return "stopped";
}

}  // namespace

RunnerCommand RunnerCommand::parse(const std::string& command_line) {
  RunnerCommand cmd;
  std::string word;
  bool have = false;
  char quote = 0;
  for (char c : command_line) {
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else {
        word.push_back(c);
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      have = true;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (have) cmd.argv.push_back(std::move(word));
      word.clear();
      have = false;
    } else {
      word.push_back(c);
      have = true;
    }
  }
  if (quote) throw Error(ErrorCode::ConfigInvalid, "unterminated quote in runner command");
  if (have) cmd.argv.push_back(std::move(word));
  if (cmd.argv.empty()) throw Error(ErrorCode::ConfigInvalid, "runner command is empty");
  return cmd;
}

std::shared_ptr<RunnerHandle> RunnerHandle::start(const RunnerCommand& cmd,
                                                  const std::map<std::string, std::string>& env,
                                                  std::chrono::milliseconds handshake_timeout) {
  if (cmd.argv.empty()) throw Error(ErrorCode::SpawnFailure, "runner command is empty");
  static std::once_flag sigpipe_once;
  std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });

  int in[2], out[2], err[2];
  if (::pipe2(in, O_CLOEXEC) != 0 || ::pipe2(out, O_CLOEXEC) != 0 || ::pipe2(err, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in[0], 0);
  posix_spawn_file_actions_adddup2(&actions, out[1], 1);
  posix_spawn_file_actions_adddup2(&actions, err[1], 2);
  if (cmd.working_dir) posix_spawn_file_actions_addchdir_np(&actions, cmd.working_dir->c_str());
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);

  std::map<std::string, std::string> merged;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    auto eq = kv.find('=');
    if (eq != std::string::npos) merged[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const auto& [k, v] : env) merged[k] = v;
  std::vector<std::string> env_strings;
  for (const auto& [k, v] : merged) env_strings.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = cmd.argv;
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_t pid = -1;
  int rc = ::posix_spawnp(&pid, argv[0], &actions, &attr, argv.data(), envp.data());
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  ::close(in[0]);
  ::close(out[1]);
  ::close(err[1]);
  if (rc != 0) {
    ::close(in[1]);
    ::close(out[0]);
    ::close(err[0]);
    throw Error(ErrorCode::SpawnFailure, "cannot start '" + cmd.argv[0] + "': " + std::strerror(rc));
  }

  std::shared_ptr<RunnerHandle> h(new RunnerHandle());
  h->pid_ = pid;
  h->in_fd_ = in[1];
  h->out_fd_ = out[0];
  h->err_fd_ = err[0];
  h->reader_ = std::thread([p = h.get()] { p->reader_loop(); });
  h->err_reader_ = std::thread([p = h.get()] { p->stderr_loop(); });

  RunnerRequest ping;
  ping.id = h->next_id();
  ping.kind = RequestKind::Ping;
  auto fut = h->submit(ping);
  if (fut.wait_for(handshake_timeout) != std::future_status::ready) {
    h->shutdown();
    throw Error(ErrorCode::HandshakeTimeout, "runner did not answer Ping within " +
                                                 std::to_string(handshake_timeout.count()) + " ms");
  }
  RunnerResponse pong;
  try {
    pong = fut.get();
  } catch (const Error& e) {
    h->shutdown();
    if (e.code() == ErrorCode::RunnerCrashed) throw Error(ErrorCode::SpawnFailure, std::string(e.what()));
    throw;
  }
  std::string version = pong.ok ? pong.payload.value("version", std::string{}) : std::string{};
  if (version != kProtocolVersion) {
    h->shutdown();
    throw Error(ErrorCode::VersionMismatch,
                "runner speaks protocol version '" + version + "', expected '" + kProtocolVersion + "'");
  }
  h->version_ = version;
  return h;
}

RunnerHandle::~RunnerHandle() { shutdown(); }

std::string RunnerHandle::next_id() {
  std::lock_guard lock(mu_);
  return "r" + std::to_string(++counter_);
}

bool RunnerHandle::alive() const {
  std::lock_guard lock(mu_);
  return !dead_.has_value();
}

std::string RunnerHandle::captured_stderr() const {
  std::lock_guard lock(mu_);
  return stderr_buf_;
}

std::future<RunnerResponse> RunnerHandle::submit(RunnerRequest req) {
  if (req.id.empty()) req.id = next_id();
  req.validate();
  std::promise<RunnerResponse> promise;
  auto fut = promise.get_future();
  {
    std::lock_guard lock(mu_);
    if (dead_) {
      promise.set_exception(std::make_exception_ptr(*dead_));
      return fut;
    }
    if (pending_.count(req.id)) {
      throw Error(ErrorCode::InvalidArgument, "request id '" + req.id + "' is already in flight");
    }
    pending_.emplace(req.id, std::move(promise));
  }
  std::string line = json(req).dump() + "\n";
  bool written;
  {
    std::lock_guard lock(write_mu_);
    written = write_all(in_fd_, line);
  }
  if (!written) {
    std::lock_guard lock(mu_);
    auto it = pending_.find(req.id);
    if (it != pending_.end()) {
      it->second.set_exception(std::make_exception_ptr(
          Error(ErrorCode::RunnerCrashed, "runner closed its input; stderr: " + stderr_buf_)));
      pending_.erase(it);
    }
  }
  return fut;
}

RunnerResponse RunnerHandle::request(RunnerRequest req, std::chrono::milliseconds timeout) {
  if (req.id.empty()) req.id = next_id();
  std::string id = req.id;
  auto fut = submit(std::move(req));
  if (fut.wait_for(timeout) != std::future_status::ready) {
    {
      std::lock_guard lock(mu_);
      pending_.erase(id);
      if (!dead_) dead_ = Error(ErrorCode::RequestTimeout, "request " + id + " timed out");
    }
    kill_child();
    throw Error(ErrorCode::RequestTimeout,
                "no response to request " + id + " within " + std::to_string(timeout.count()) + " ms");
  }
  return fut.get();
}

void RunnerHandle::fail_all(ErrorCode code, const std::string& message) {
  std::lock_guard lock(mu_);
  Error err(code, message);
  if (!dead_) dead_ = err;
  for (auto& [id, p] : pending_) p.set_exception(std::make_exception_ptr(err));
  pending_.clear();
}

void RunnerHandle::kill_child() {
  if (pid_ > 0) ::kill(-pid_, SIGKILL);
}

void RunnerHandle::reader_loop() {
  std::string buf;
  char chunk[65536];
  bool broken = false;
  while (!broken) {
    ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buf.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while (!broken && (nl = buf.find('\n')) != std::string::npos) {
      std::string line = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      try {
        auto resp = parse_response_frame(line);
        std::lock_guard lock(mu_);
        auto it = pending_.find(resp.id);
        if (it == pending_.end()) {
          throw Error(ErrorCode::ProtocolError, "response for unknown request id '" + resp.id + "'; raw frame: " + line);
        }
        it->second.set_value(std::move(resp));
        pending_.erase(it);
      } catch (const Error& e) {
        fail_all(ErrorCode::ProtocolError, e.what());
        kill_child();
        broken = true;
      }
    }
  }
  int status = 0;
  ::waitpid(pid_, &status, 0);
  {
    std::unique_lock lock(mu_);
    stderr_done_cv_.wait_for(lock, std::chrono::seconds(1), [this] { return stderr_done_; });
  }
  fail_all(ErrorCode::RunnerCrashed, "runner " + describe_exit(status) + "; stderr: " + captured_stderr());
}

void RunnerHandle::stderr_loop() {
  char chunk[4096];
  while (true) {
    ssize_t n = ::read(err_fd_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    std::lock_guard lock(mu_);
    stderr_buf_.append(chunk, static_cast<std::size_t>(n));
    if (stderr_buf_.size() > kStderrLimit) stderr_buf_.erase(0, stderr_buf_.size() - kStderrLimit);
  }
  std::lock_guard lock(mu_);
  stderr_done_ = true;
  stderr_done_cv_.notify_all();
}

void RunnerHandle::shutdown() {
  if (in_fd_ >= 0) {
    ::close(in_fd_);
    in_fd_ = -1;
  }
  if (reader_.joinable()) {
    // give the runner a moment to exit on EOF before killing it
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(1);
    while (std::chrono::steady_clock::now() < deadline) {
      {
        std::lock_guard lock(mu_);
        if (dead_ && stderr_done_) break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    kill_child();
    reader_.join();
  }
  if (err_reader_.joinable()) err_reader_.join();
  if (out_fd_ >= 0) ::close(out_fd_);
  if (err_fd_ >= 0) ::close(err_fd_);
  out_fd_ = err_fd_ = -1;
  pid_ = -1;
}

const json& expect_ok(const RunnerResponse& r) {
  if (!r.ok) throw Error(ErrorCode::RunnerError, r.error_type, r.error_message);
  return r.payload;
}

std::chrono::milliseconds suite_timeout(int n_runs, std::chrono::milliseconds per_run_timeout) {
  return std::chrono::milliseconds(static_cast<long long>(n_runs * per_run_timeout.count() * 3 / 2));
}

namespace {

RunReport report_from_payload(const json& payload, std::vector<std::string> property_ids, int n_runs) {
  auto outcomes = payload.at("outcomes").get<std::vector<RunOutcome>>();
  std::optional<CoverageData> cov;
  if (payload.contains("coverage") && !payload["coverage"].is_null()) cov = payload["coverage"].get<CoverageData>();
  bool partial = payload.value("aborted", false) || static_cast<int>(outcomes.size()) < n_runs;
  if (static_cast<int>(outcomes.size()) > n_runs) {
    throw Error(ErrorCode::ProtocolError, "runner returned more outcomes than requested");
  }
  auto report = RunReport::from_outcomes(std::move(property_ids), std::move(outcomes), std::move(cov), n_runs, partial);
  try {
    report.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ProtocolError, std::string("inconsistent run report: ") + e.what());
  }
  return report;
}

}  // namespace

RunReport run_suite(RunnerHandle& h, const AssembledTest& test, const SuiteOptions& opts) {
  if (opts.n_runs < 1) throw Error(ErrorCode::InvalidArgument, "n_runs must be at least 1");
  RunnerRequest req;
  req.id = h.next_id();
  req.kind = RequestKind::ExecPbt;
  req.code = test.source_text;
  req.target = test.target;
  req.n_runs = opts.n_runs;
  req.seed = opts.seed;
  req.per_run_timeout = opts.per_run_timeout;
  req.collect_coverage = opts.collect_coverage;
  auto resp = h.request(req, suite_timeout(opts.n_runs, opts.per_run_timeout));
  return report_from_payload(expect_ok(resp), test.property_ids(), opts.n_runs);
}

RunReport run_generator(RunnerHandle& h, const GeneratorArtifact& gen, const SuiteOptions& opts) {
  if (opts.n_runs < 1) throw Error(ErrorCode::InvalidArgument, "n_runs must be at least 1");
  RunnerRequest req;
  req.id = h.next_id();
  req.kind = RequestKind::ExecGenerator;
  req.code = gen.source_text;
  req.generator_name = gen.generator_name;
  req.n_runs = opts.n_runs;
  req.seed = opts.seed;
  req.per_run_timeout = opts.per_run_timeout;
  auto resp = h.request(req, suite_timeout(opts.n_runs, opts.per_run_timeout));
  return report_from_payload(expect_ok(resp), {}, opts.n_runs);
}

std::vector<Mutant> list_mutants(RunnerHandle& h, const TargetApi& target,
                                 const std::optional<std::vector<std::string>>& operators) {
  RunnerRequest req;
  req.id = h.next_id();
  req.kind = RequestKind::ListMutants;
  req.target = target;
  req.operators = operators;
  auto resp = h.request(req, std::chrono::seconds(60));
  return expect_ok(resp).at("mutants").get<std::vector<Mutant>>();
}

std::vector<MutantResult> exec_mutants(RunnerHandle& h, const std::vector<Mutant>& mutants,
                                       const AssembledTest& test, const SuiteOptions& opts) {
  std::vector<std::pair<std::string, std::future<RunnerResponse>>> inflight;
  for (const auto& m : mutants) {
    RunnerRequest req;
    req.id = h.next_id();
    req.kind = RequestKind::ExecMutant;
    req.mutant_id = m.mutant_id;
    req.code = test.source_text;
    req.target = test.target;
    req.n_runs = opts.n_runs;
    req.seed = opts.seed;
    req.per_run_timeout = opts.per_run_timeout;
    inflight.emplace_back(m.mutant_id, h.submit(req));
  }
  auto deadline = std::chrono::steady_clock::now() +
                  suite_timeout(opts.n_runs, opts.per_run_timeout) * static_cast<long long>(std::max<std::size_t>(1, mutants.size()));
  std::vector<MutantResult> out;
  for (auto& [id, fut] : inflight) {
    if (fut.wait_until(deadline) != std::future_status::ready) {
      throw Error(ErrorCode::RequestTimeout, "mutant " + id + " did not finish in time");
    }
    auto result = expect_ok(fut.get()).at("result").get<MutantResult>();
    if (result.mutant_id != id) throw Error(ErrorCode::ProtocolError, "mutant result for wrong id " + result.mutant_id);
    out.push_back(std::move(result));
  }
  return out;
}

json parse_instrument(RunnerHandle& h, const std::string& fragment, const std::string& mode,
                      const std::optional<TargetApi>& target) {
  RunnerRequest req;
  req.id = h.next_id();
  req.kind = RequestKind::ParseInstrument;
  req.code = fragment;
  req.mode = mode;
  req.target = target;
  return expect_ok(h.request(req, std::chrono::seconds(30)));
}

RunnerPool::RunnerPool(RunnerCommand cmd, std::map<std::string, std::string> env, std::size_t size)
    : cmd_(std::move(cmd)), env_(std::move(env)), size_(std::max<std::size_t>(1, size)) {}

RunnerPool::Lease RunnerPool::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return !idle_.empty() || leased_ < size_; });
  while (!idle_.empty()) {
    auto h = idle_.back();
    idle_.pop_back();
    if (h->alive()) {
      ++leased_;
      return Lease(this, h);
    }
  }
  ++leased_;
  lock.unlock();
  try {
    return Lease(this, RunnerHandle::start(cmd_, env_));
  } catch (...) {
    std::lock_guard relock(mu_);
    --leased_;
    cv_.notify_one();
    throw;
  }
}

void RunnerPool::release(std::shared_ptr<RunnerHandle> h) {
  std::lock_guard lock(mu_);
  --leased_;
  if (h && h->alive()) idle_.push_back(std::move(h));
  cv_.notify_one();
}

RunnerPool::Lease::~Lease() {
  if (pool_) pool_->release(std::move(h_));
}

bool RunnerPool::healthy() {
  try {
    auto lease = acquire();
    RunnerRequest ping;
    ping.id = lease->next_id();
    ping.kind = RequestKind::Ping;
    return lease->request(ping, std::chrono::seconds(5)).ok;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace pbtw
