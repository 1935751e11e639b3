#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace gqa {

/// Raised when no sandbox runner can be started. Code scoring never skips
/// silently; a missing runner is a configuration error.
class SandboxUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SandboxProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SandboxLimits {
  std::chrono::milliseconds time{10'000};
  std::size_t memory_mb = 1024;
};

enum class CodeVerdict { pass, compile_error, runtime_error, assertion_failure, timeout };

std::string_view to_string(CodeVerdict verdict);

struct CodeResult {
  CodeVerdict verdict = CodeVerdict::runtime_error;
  std::string detail;

  bool passed() const { return verdict == CodeVerdict::pass; }
};

/// Client for the sandbox runner subprocess. The runner reads one JSON request
/// per line on stdin ({id, program, tests, limits: {time_s, memory_mb}}) and
/// writes one JSON response per line on stdout ({id, verdict, reason, detail}).
///
/// One instance owns one runner process and handles one case at a time. If the
/// runner does not answer within twice the case's time limit (plus a small
/// grace period) it is killed, the case is reported as a timeout, and a fresh
/// runner is started for the next case.
class SandboxRunner {
 public:
  explicit SandboxRunner(std::vector<std::string> command);
  ~SandboxRunner();

  SandboxRunner(const SandboxRunner&) = delete;
  SandboxRunner& operator=(const SandboxRunner&) = delete;

  CodeResult run_case(const std::string& program, const std::string& tests,
                      const SandboxLimits& limits);

 private:
  void start();
  void stop();

  std::vector<std::string> command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  long next_id_ = 0;
};

/// Fixed-size set of runners shared by scoring threads.
class SandboxPool {
 public:
  SandboxPool(std::vector<std::string> command, std::size_t size);

  CodeResult run_case(const std::string& program, const std::string& tests,
                      const SandboxLimits& limits);

 private:
  std::vector<std::unique_ptr<SandboxRunner>> runners_;
  std::vector<SandboxRunner*> idle_;
  std::mutex mu_;
  std::condition_variable cv_;
};

/// Pass iff program + tests run to completion inside the limits. An empty
/// program fails without contacting the runner.
CodeResult code_pass(const std::string& program, const std::string& unit_tests,
                     const SandboxLimits& limits, SandboxRunner& runner);
CodeResult code_pass(const std::string& program, const std::string& unit_tests,
                     const SandboxLimits& limits, SandboxPool& pool);

}  // namespace gqa
