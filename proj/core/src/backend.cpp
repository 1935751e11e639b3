#include "gqa/backend.hpp"

#include <condition_variable>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace gqa {

using nlohmann::json;

std::string GroupKey::to_string() const {
  return std::to_string(repetition) + "/" + std::to_string(qgs) + "/" + first_id;
}

GroupKey key_of(const QueryGroup& group) {
  return GroupKey{group.repetition, group.first->id, group.qgs()};
}

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::stop:
      return "stop";
    case FinishReason::length:
      return "length";
    case FinishReason::error:
      return "error";
    case FinishReason::other:
      break;
  }
  return "other";
}

FinishReason parse_finish_reason(std::string_view name) {
  if (name == "stop" || name == "eos") return FinishReason::stop;
  if (name == "length") return FinishReason::length;
  if (name == "error") return FinishReason::error;
  return FinishReason::other;
}

int default_max_new_tokens(TaskKind task) {
  return task == TaskKind::math_cot || task == TaskKind::code_completion ? 2048 : 512;
}

HttpStatusError::HttpStatusError(int status, const std::string& body)
    : BackendError("HTTP " + std::to_string(status) + ": " + body.substr(0, 512)),
      status_(status) {}

// ---------------------------------------------------------------------------
// Wire format

std::string endpoint_path(const RenderedPrompt& prompt) {
  return prompt.model_kind == ModelKind::aligned ? "/v1/chat/completions" : "/v1/completions";
}

std::string build_request_body(const RenderedPrompt& prompt, const BackendConfig& cfg) {
  json body;
  body["model"] = cfg.model_name;
  body["max_tokens"] = cfg.max_new_tokens;
  body["temperature"] = cfg.temperature;
  if (prompt.model_kind == ModelKind::aligned) {
    auto msgs = json::array();
    for (const auto& m : prompt.messages)
      msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    body["messages"] = std::move(msgs);
    if (prompt.ends_with_assistant()) {
      // The last assistant turn is a prefix to continue, not a finished reply.
      body["add_generation_prompt"] = false;
      body["continue_final_message"] = true;
    }
  } else {
    body["prompt"] = prompt.text;
  }
  return body.dump();
}

void parse_response_body(const std::string& text, const RenderedPrompt& prompt, ModelReply& reply) {
  json body;
  try {
    body = json::parse(text);
  } catch (const json::parse_error& e) {
    throw MalformedResponse(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choices = body.at("choices");
    if (!choices.is_array() || choices.empty()) throw MalformedResponse("response has no choices");
    const auto& c = choices.at(0);
    if (prompt.model_kind == ModelKind::aligned) {
      const auto& content = c.at("message").at("content");
      reply.raw_text = content.is_null() ? std::string() : content.get<std::string>();
    } else {
      reply.raw_text = c.at("text").get<std::string>();
    }
    if (auto fr = c.find("finish_reason"); fr != c.end() && fr->is_string())
      reply.finish_reason = parse_finish_reason(fr->get<std::string>());
    if (auto usage = body.find("usage"); usage != body.end() && usage->is_object())
      if (auto pt = usage->find("prompt_tokens"); pt != usage->end() && pt->is_number_integer())
        reply.prompt_token_count = pt->get<int>();
  } catch (const json::exception& e) {
    throw MalformedResponse(std::string("unexpected response layout: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path below the origin, no trailing slash
};

Endpoint split_base_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw TransportError("invalid base_url '" + url + "'");
  std::string prefix = m[2].str();
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {m[1].str(), prefix};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

OpenAiBackend::OpenAiBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {}

ModelReply OpenAiBackend::complete(const RenderedPrompt& prompt, const GroupKey& key) {
  const Endpoint ep = split_base_url(cfg_.base_url);
  const std::string path = ep.prefix + endpoint_path(prompt);
  const std::string body = build_request_body(prompt, cfg_);

  httplib::Client client(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  const auto t0 = std::chrono::steady_clock::now();
  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg_.retry_backoff * attempt);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      if (retryable_status(res->status) && attempt < cfg_.max_retries) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      throw HttpStatusError(res->status, res->body);
    }
    ModelReply reply;
    reply.key = key;
    parse_response_body(res->body, prompt, reply);
    reply.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
    return reply;
  }
  throw TransportError(last_error + " (after " + std::to_string(cfg_.max_retries) + " retries)");
}

ModelReply complete(const RenderedPrompt& prompt, const BackendConfig& cfg, const GroupKey& key) {
  OpenAiBackend backend(cfg);
  return backend.complete(prompt, key);
}

// ---------------------------------------------------------------------------
// Mock

int approximate_prompt_tokens(const RenderedPrompt& prompt) {
  auto count = [](const std::string& s) {
    int n = 0;
    bool in_word = false;
    for (unsigned char c : s) {
      const bool sp = std::isspace(c) != 0;
      if (!sp && !in_word) ++n;
      in_word = !sp;
    }
    return n;
  };
  if (prompt.model_kind == ModelKind::pretrained) return count(prompt.text);
  int n = 0;
  for (const auto& m : prompt.messages) n += count(m.content);
  return n;
}

MockBackend::MockBackend(Responder responder) : responder_(std::move(responder)) {}

MockBackend::Responder MockBackend::scripted(std::map<std::string, std::string> replies) {
  return [replies = std::move(replies)](const MockRequest& req) {
    MockResponse r;
    if (auto it = replies.find(req.key->first_id); it != replies.end())
      r.text = it->second;
    else if (auto star = replies.find("*"); star != replies.end())
      r.text = star->second;
    r.prompt_tokens = approximate_prompt_tokens(*req.prompt);
    return r;
  };
}

ModelReply MockBackend::complete(const RenderedPrompt& prompt, const GroupKey& key) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t now = ++in_flight_;
  std::size_t prev = max_in_flight_.load();
  while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
  }

  struct Release {
    std::atomic<std::size_t>& counter;
    ~Release() { --counter; }
  } release{in_flight_};

  MockResponse resp = responder_(MockRequest{&prompt, &key});
  if (resp.latency.count() > 0) std::this_thread::sleep_for(resp.latency);

  ModelReply reply;
  reply.key = key;
  reply.raw_text = std::move(resp.text);
  reply.finish_reason = resp.finish_reason;
  reply.latency = resp.latency;
  reply.prompt_token_count = resp.prompt_tokens;
  {
    std::lock_guard lock(mu_);
    trace_.push_back({key, start, std::chrono::steady_clock::now()});
  }
  return reply;
}

std::size_t MockBackend::request_count() const {
  std::lock_guard lock(mu_);
  return trace_.size();
}

std::vector<MockBackend::TraceEntry> MockBackend::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

// ---------------------------------------------------------------------------
// Checkpointing

std::string reply_to_json_line(const ModelReply& reply) {
  nlohmann::ordered_json j;
  j["repetition"] = reply.key.repetition;
  j["qgs"] = reply.key.qgs;
  j["first_id"] = reply.key.first_id;
  j["raw_text"] = reply.raw_text;
  j["finish_reason"] = std::string(to_string(reply.finish_reason));
  j["latency_ms"] = reply.latency.count();
  j["prompt_tokens"] = reply.prompt_token_count ? json(*reply.prompt_token_count) : json(nullptr);
  if (reply.error) j["error"] = *reply.error;
  return j.dump();
}

ModelReply reply_from_json_line(const std::string& line) {
  try {
    auto j = json::parse(line);
    ModelReply r;
    r.key.repetition = j.at("repetition").get<int>();
    r.key.qgs = j.at("qgs").get<int>();
    r.key.first_id = j.at("first_id").get<std::string>();
    r.raw_text = j.at("raw_text").get<std::string>();
    r.finish_reason = parse_finish_reason(j.value("finish_reason", "stop"));
    r.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
    if (auto pt = j.find("prompt_tokens"); pt != j.end() && pt->is_number_integer())
      r.prompt_token_count = pt->get<int>();
    if (auto e = j.find("error"); e != j.end() && e->is_string()) r.error = e->get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw MalformedResponse(std::string("bad results line: ") + e.what());
  }
}

CheckpointStore::CheckpointStore(std::filesystem::path path) : path_(std::move(path)) {
  // Drop a torn final line left by a killed writer, so later appends start on
  // a fresh line.
  std::error_code ec;
  const auto size = std::filesystem::file_size(path_, ec);
  if (ec || size == 0) return;
  std::ifstream in(path_, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  if (text.back() == '\n') return;
  const auto nl = text.rfind('\n');
  std::filesystem::resize_file(path_, nl == std::string::npos ? 0 : nl + 1);
}

std::map<GroupKey, ModelReply> CheckpointStore::load() const {
  std::map<GroupKey, ModelReply> out;
  std::ifstream in(path_, std::ios::binary);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ModelReply r;
    try {
      r = reply_from_json_line(line);
    } catch (const MalformedResponse&) {
      // A torn final line from a killed writer; everything before it is intact.
      if (in.peek() == EOF) break;
      throw;
    }
    if (r.ok())
      out[r.key] = std::move(r);
    else
      out.erase(r.key);
  }
  return out;
}

void CheckpointStore::append(const ModelReply& reply) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot append to '" + path_.string() + "'");
  out << reply_to_json_line(reply) << '\n';
  out.flush();
}

// ---------------------------------------------------------------------------
// Runner

std::vector<ModelReply> run_plan(const EvaluationPlan& plan, const TemplateProfile& profile,
                                 Backend& backend, const RunOptions& options,
                                 CheckpointStore* store) {
  if (plan.groups.empty()) throw std::invalid_argument("plan '" + plan.dataset_name + "' is empty");

  std::vector<std::optional<ModelReply>> slots(plan.groups.size());
  std::vector<std::size_t> pending;
  {
    const auto done = store ? store->load() : std::map<GroupKey, ModelReply>{};
    for (std::size_t i = 0; i < plan.groups.size(); ++i) {
      auto it = done.find(key_of(plan.groups[i]));
      if (it != done.end())
        slots[i] = it->second;
      else
        pending.push_back(i);
    }
  }

  std::mutex mu;
  std::size_t next = 0;
  std::size_t errors = 0;
  bool stopped = false;
  bool aborted = false;
  std::exception_ptr fatal;

  auto worker = [&] {
    while (true) {
      std::size_t slot;
      {
        std::lock_guard lock(mu);
        if (stopped || aborted || fatal || next >= pending.size()) return;
        if (options.stop_requested && options.stop_requested()) {
          stopped = true;
          return;
        }
        slot = pending[next++];
      }
      const QueryGroup& group = plan.groups[slot];
      const GroupKey key = key_of(group);
      ModelReply reply;
      try {
        const RenderedPrompt prompt = render(group, profile, plan.fewshot);
        reply = backend.complete(prompt, key);
        reply.key = key;
      } catch (const BackendError& e) {
        reply = ModelReply{};
        reply.key = key;
        reply.finish_reason = FinishReason::error;
        reply.error = e.what();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
      try {
        if (store) store->append(reply);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
      std::lock_guard lock(mu);
      if (!reply.ok() && ++errors >= options.max_terminal_errors) aborted = true;
      if (options.on_reply) options.on_reply(reply);
      slots[slot] = std::move(reply);
    }
  };

  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(options.max_in_flight, pending.size()));
  if (!pending.empty()) {
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  if (fatal) std::rethrow_exception(fatal);
  if (aborted)
    throw RunAborted("aborting after " + std::to_string(errors) + " failed requests");
  if (stopped) throw RunInterrupted("run stopped before all groups completed");

  std::vector<ModelReply> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<ModelReply> run_plan(const EvaluationPlan& plan, const TemplateProfile& profile,
                                 const BackendConfig& cfg, CheckpointStore* store) {
  OpenAiBackend backend(cfg);
  RunOptions options;
  options.max_in_flight = cfg.max_in_flight;
  return run_plan(plan, profile, backend, options, store);
}

}  // namespace gqa
