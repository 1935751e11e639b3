#include "gqa/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>

#include <json.hpp>

namespace gqa {

using nlohmann::json;

namespace {

constexpr auto kGrace = std::chrono::milliseconds(2000);

bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

CodeVerdict verdict_from_reason(const std::string& reason) {
  if (reason == "compile_error") return CodeVerdict::compile_error;
  if (reason == "assertion_failure") return CodeVerdict::assertion_failure;
  if (reason == "timeout") return CodeVerdict::timeout;
  return CodeVerdict::runtime_error;
}

}  // namespace

std::string_view to_string(CodeVerdict verdict) {
  switch (verdict) {
    case CodeVerdict::pass:
      return "pass";
    case CodeVerdict::compile_error:
      return "compile_error";
    case CodeVerdict::runtime_error:
      return "runtime_error";
    case CodeVerdict::assertion_failure:
      return "assertion_failure";
    case CodeVerdict::timeout:
      break;
  }
  return "timeout";
}

SandboxRunner::SandboxRunner(std::vector<std::string> command) : command_(std::move(command)) {
  if (command_.empty()) throw SandboxUnavailable("sandbox runner command is empty");
  std::signal(SIGPIPE, SIG_IGN);
  start();
}

SandboxRunner::~SandboxRunner() { stop(); }

void SandboxRunner::start() {
  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 ||
      ::pipe2(err_pipe, O_CLOEXEC) != 0)
    throw SandboxUnavailable(std::string("pipe: ") + std::strerror(errno));

  std::vector<char*> argv;
  for (auto& a : command_) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw SandboxUnavailable(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(argv[0], argv.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(err_pipe[1], &err, sizeof err);
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);

  int exec_errno = 0;
  ssize_t got;
  do {
    got = ::read(err_pipe[0], &exec_errno, sizeof exec_errno);
  } while (got < 0 && errno == EINTR);
  ::close(err_pipe[0]);
  if (got > 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::waitpid(pid, nullptr, 0);
    throw SandboxUnavailable("cannot start sandbox runner '" + command_[0] +
                             "': " + std::strerror(exec_errno));
  }
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  buffer_.clear();
}

void SandboxRunner::stop() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    // Closing stdin asks the runner to exit; give it a moment, then kill.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      ::usleep(10'000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }
}

CodeResult SandboxRunner::run_case(const std::string& program, const std::string& tests,
                                   const SandboxLimits& limits) {
  if (pid_ < 0) start();
  const std::string id = std::to_string(++next_id_);
  json req;
  req["id"] = id;
  req["program"] = program;
  req["tests"] = tests;
  req["limits"] = {{"time_s", static_cast<double>(limits.time.count()) / 1000.0},
                   {"memory_mb", limits.memory_mb}};
  if (!write_all(to_child_, req.dump() + "\n")) {
    stop();
    throw SandboxUnavailable("sandbox runner closed its input");
  }

  const auto deadline = std::chrono::steady_clock::now() + 2 * limits.time + kGrace;
  while (true) {
    const std::size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      json resp;
      try {
        resp = json::parse(line);
      } catch (const json::parse_error&) {
        throw SandboxProtocolError("sandbox runner sent a non-JSON line: " + line.substr(0, 200));
      }
      if (!resp.is_object()) throw SandboxProtocolError("sandbox runner sent a non-object line");
      const auto rid = resp.find("id");
      const bool untagged = rid == resp.end() || rid->is_null();
      if (!untagged && !(rid->is_string() && rid->get<std::string>() == id))
        continue;  // stale reply from a killed case
      const auto text = [&](const char* key) {
        const auto it = resp.find(key);
        return it != resp.end() && it->is_string() ? it->get<std::string>() : std::string();
      };
      const std::string verdict = text("verdict");
      const std::string detail = text("detail");
      if (untagged && verdict != "error") continue;
      if (verdict == "pass") return {CodeVerdict::pass, detail};
      if (verdict == "fail") return {verdict_from_reason(text("reason")), detail};
      throw SandboxProtocolError("sandbox runner rejected the request: " + detail);
    }

    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      stop();  // runner is wedged; the next case gets a fresh one
      return {CodeVerdict::timeout, "no verdict within twice the time limit"};
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) continue;
    char chunk[4096];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();  // the next case starts a fresh runner
      return {CodeVerdict::runtime_error, "sandbox runner exited during the case"};
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

SandboxPool::SandboxPool(std::vector<std::string> command, std::size_t size) {
  if (size == 0) size = 1;
  for (std::size_t i = 0; i < size; ++i) {
    runners_.push_back(std::make_unique<SandboxRunner>(command));
    idle_.push_back(runners_.back().get());
  }
}

CodeResult SandboxPool::run_case(const std::string& program, const std::string& tests,
                                 const SandboxLimits& limits) {
  SandboxRunner* runner;
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !idle_.empty(); });
    runner = idle_.back();
    idle_.pop_back();
  }
  struct Return {
    SandboxPool& pool;
    SandboxRunner* runner;
    ~Return() {
      {
        std::lock_guard lock(pool.mu_);
        pool.idle_.push_back(runner);
      }
      pool.cv_.notify_one();
    }
  } give_back{*this, runner};
  return runner->run_case(program, tests, limits);
}

CodeResult code_pass(const std::string& program, const std::string& unit_tests,
                     const SandboxLimits& limits, SandboxRunner& runner) {
  if (program.empty()) return {CodeVerdict::compile_error, "empty completion"};
  return runner.run_case(program, unit_tests, limits);
}

CodeResult code_pass(const std::string& program, const std::string& unit_tests,
                     const SandboxLimits& limits, SandboxPool& pool) {
  if (program.empty()) return {CodeVerdict::compile_error, "empty completion"};
  return pool.run_case(program, unit_tests, limits);
}

}  // namespace gqa
