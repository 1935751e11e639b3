#pragma once

#include <atomic>
#include <chrono>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqa/planner.hpp"
#include "gqa/prompts.hpp"

namespace gqa {

struct GroupKey {
  int repetition = 0;
  std::string first_id;
  int qgs = 1;

  auto operator<=>(const GroupKey&) const = default;
  std::string to_string() const;
};

GroupKey key_of(const QueryGroup& group);

enum class FinishReason { stop, length, error, other };

std::string_view to_string(FinishReason reason);
FinishReason parse_finish_reason(std::string_view name);

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model_name;
  std::string api_key;  // sent as a bearer token when non-empty
  int max_new_tokens = 512;
  double temperature = 0.0;  // greedy decoding
  std::chrono::milliseconds timeout{120'000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{500};
  std::size_t max_in_flight = 4;
};

/// max_new_tokens default per task: longer budgets for reasoning and code.
int default_max_new_tokens(TaskKind task);

struct ModelReply {
  GroupKey key;
  std::string raw_text;
  FinishReason finish_reason = FinishReason::stop;
  std::chrono::milliseconds latency{0};
  std::optional<int> prompt_token_count;
  std::optional<std::string> error;  // terminal per-request failure

  bool ok() const { return !error.has_value(); }
  bool operator==(const ModelReply&) const = default;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class HttpStatusError : public BackendError {
 public:
  HttpStatusError(int status, const std::string& body);
  int status() const { return status_; }

 private:
  int status_;
};

class MalformedResponse : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Thrown by run_plan when its stop predicate fires; finished groups are
/// already checkpointed.
class RunInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws BackendError subclasses on failure. Must be safe to call from
  /// several threads at once.
  virtual ModelReply complete(const RenderedPrompt& prompt, const GroupKey& key) = 0;
};

/// Request body for the OpenAI-compatible chat or text completions call.
std::string build_request_body(const RenderedPrompt& prompt, const BackendConfig& cfg);
/// "/v1/chat/completions" for aligned prompts, "/v1/completions" otherwise.
std::string endpoint_path(const RenderedPrompt& prompt);
/// Parses a completions response body into `reply` (text, finish reason, usage).
void parse_response_body(const std::string& body, const RenderedPrompt& prompt, ModelReply& reply);

class OpenAiBackend final : public Backend {
 public:
  explicit OpenAiBackend(BackendConfig cfg);
  ModelReply complete(const RenderedPrompt& prompt, const GroupKey& key) override;

  const BackendConfig& config() const { return cfg_; }

 private:
  BackendConfig cfg_;
};

ModelReply complete(const RenderedPrompt& prompt, const BackendConfig& cfg,
                    const GroupKey& key = {});

struct MockRequest {
  const RenderedPrompt* prompt;
  const GroupKey* key;
};

struct MockResponse {
  std::string text;
  std::optional<int> prompt_tokens;
  FinishReason finish_reason = FinishReason::stop;
  std::chrono::milliseconds latency{0};
};

/// Deterministic in-process backend. Records every request with start and
/// end timestamps so tests can check ordering and concurrency.
class MockBackend final : public Backend {
 public:
  using Responder = std::function<MockResponse(const MockRequest&)>;

  struct TraceEntry {
    GroupKey key;
    std::chrono::steady_clock::time_point start;
    std::chrono::steady_clock::time_point end;
  };

  explicit MockBackend(Responder responder);
  /// Fixed replies keyed by first-query id; "*" is the fallback.
  static Responder scripted(std::map<std::string, std::string> replies);

  ModelReply complete(const RenderedPrompt& prompt, const GroupKey& key) override;

  std::size_t request_count() const;
  std::size_t max_observed_in_flight() const { return max_in_flight_.load(); }
  std::vector<TraceEntry> trace() const;

 private:
  Responder responder_;
  mutable std::mutex mu_;
  std::vector<TraceEntry> trace_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
};

/// Whitespace-separated word count over everything the prompt sends.
int approximate_prompt_tokens(const RenderedPrompt& prompt);

/// Append-only results file, one reply object per line keyed by GroupKey.
/// The last line for a key wins, so a failed group can be retried later.
class CheckpointStore {
 public:
  /// Truncates an incomplete final line if the file has one.
  explicit CheckpointStore(std::filesystem::path path);

  /// Completed (non-error) replies already on disk.
  std::map<GroupKey, ModelReply> load() const;
  void append(const ModelReply& reply);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

std::string reply_to_json_line(const ModelReply& reply);
ModelReply reply_from_json_line(const std::string& line);

struct RunOptions {
  std::size_t max_in_flight = 4;
  // Abort once this many groups ended in a terminal error.
  std::size_t max_terminal_errors = 10;
  // Polled before each dispatch; returning true stops the run.
  std::function<bool()> stop_requested;
  std::function<void(const ModelReply&)> on_reply;
};

/// One reply per group in plan order. Groups present in `store` are not
/// re-queried. Per-group failures become error replies.
std::vector<ModelReply> run_plan(const EvaluationPlan& plan, const TemplateProfile& profile,
                                 Backend& backend, const RunOptions& options,
                                 CheckpointStore* store = nullptr);

std::vector<ModelReply> run_plan(const EvaluationPlan& plan, const TemplateProfile& profile,
                                 const BackendConfig& cfg, CheckpointStore* store = nullptr);

}  // namespace gqa
