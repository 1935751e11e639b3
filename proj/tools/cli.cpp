#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "gqa/poison.hpp"

namespace gqa::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid run config:";
  for (const auto& p : problems) out += "\n  - " + p;
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out.flush()) throw std::runtime_error("write to '" + path.string() + "' failed");
}

/// Reads typed fields from one config object, collecting problems instead of
/// throwing so that every bad key gets reported in one pass.
class Fields {
 public:
  Fields(const json& obj, std::string prefix, std::vector<std::string>& problems)
      : obj_(obj), prefix_(std::move(prefix)), problems_(problems) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  const json& at(const std::string& key) { return obj_.at(key); }

  void problem(const std::string& key, const std::string& msg) {
    problems_.push_back(prefix_ + key + ": " + msg);
  }

  void require(const std::string& key) {
    if (!has(key)) problem(key, "required");
  }

  std::optional<std::string> str(const std::string& key) {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_string()) return bad<std::string>(key, "expected a string");
    return at(key).get<std::string>();
  }

  std::optional<long long> integer(const std::string& key, long long min_value) {
    if (!has(key)) return std::nullopt;
    const auto& v = at(key);
    if (!v.is_number_integer()) return bad<long long>(key, "expected an integer");
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > 1ull << 62)
      return bad<long long>(key, "out of range");
    const auto x = v.get<long long>();
    if (x < min_value) return bad<long long>(key, "must be >= " + std::to_string(min_value));
    return x;
  }

  std::optional<std::uint64_t> uint64(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const auto& v = at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::uint64_t>();
    return bad<std::uint64_t>(key, "expected a non-negative integer");
  }

  std::optional<double> number(const std::string& key, double min_value) {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_number()) return bad<double>(key, "expected a number");
    const double x = at(key).get<double>();
    if (!(x >= min_value)) return bad<double>(key, "must be >= " + std::to_string(min_value));
    return x;
  }

  std::optional<bool> boolean(const std::string& key) {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_boolean()) return bad<bool>(key, "expected true or false");
    return at(key).get<bool>();
  }

  std::optional<std::vector<std::string>> strings(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const auto& v = at(key);
    if (!v.is_array() || v.empty() ||
        !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); }))
      return bad<std::vector<std::string>>(key, "expected a non-empty array of strings");
    return v.get<std::vector<std::string>>();
  }

  template <typename T, typename Parse>
  std::optional<T> enumerated(const std::string& key, Parse parse) {
    auto s = str(key);
    if (!s) return std::nullopt;
    try {
      return parse(*s);
    } catch (const std::exception& e) {
      return bad<T>(key, e.what());
    }
  }

  const json* object(const std::string& key) {
    if (!has(key)) return nullptr;
    if (!at(key).is_object()) {
      problem(key, "expected an object");
      return nullptr;
    }
    return &at(key);
  }

  void reject_unknown() {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.contains(k)) problems_.push_back(prefix_ + k + ": unknown key");
  }

 private:
  template <typename T>
  std::optional<T> bad(const std::string& key, const std::string& msg) {
    problem(key, msg);
    return std::nullopt;
  }

  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

void check_mock_script(const json& script, std::vector<std::string>& problems) {
  Fields f(script, "backend.script.", problems);
  if (const json* replies = f.object("replies")) {
    for (const auto& [qgs, table] : replies->items()) {
      if (qgs != "*" && (qgs.empty() || !std::all_of(qgs.begin(), qgs.end(), ::isdigit)))
        f.problem("replies." + qgs, "keys must be QGS values or \"*\"");
      if (!table.is_object()) {
        f.problem("replies." + qgs, "expected an object of first-query id -> reply text");
        continue;
      }
      for (const auto& [id, text] : table.items())
        if (!text.is_string()) f.problem("replies." + qgs + "." + id, "expected a string");
    }
  } else {
    f.require("replies");
  }
  f.integer("latency_ms", 0);
  if (f.has("prompt_tokens")) {
    const auto& t = f.at("prompt_tokens");
    const bool ok = (t.is_string() && t.get<std::string>() == "words") ||
                    (t.is_number_integer() && t.get<long long>() >= 0) ||
                    (t.is_object() && std::all_of(t.begin(), t.end(), [](const json& e) {
                       return e.is_number_integer() && e.get<long long>() >= 0;
                     }));
    if (!ok) f.problem("prompt_tokens", "expected \"words\", a count, or an object of QGS -> count");
  }
  f.str("request_log");
  f.reject_unknown();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop.store(true); }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir, ConfigUse use) {
  std::vector<std::string> problems;
  RunConfig cfg;
  cfg.raw = doc;
  cfg.base_dir = base_dir;
  if (!doc.is_object()) throw ConfigError({"config must be a JSON object"});

  Fields f(doc, "", problems);
  f.require("dataset");
  if (auto v = f.str("dataset")) cfg.dataset = resolve(base_dir, *v);
  if (auto v = f.str("schema")) {
    const auto& known = known_schemas();
    if (std::find(known.begin(), known.end(), *v) == known.end()) {
      std::string names;
      for (const auto& s : known) names += (names.empty() ? "" : ", ") + s;
      f.problem("schema", "unknown schema '" + *v + "' (known: " + names + ")");
    } else {
      cfg.schema = *v;
    }
  }
  cfg.task = f.enumerated<TaskKind>("task", parse_task_kind);
  if (auto v = f.enumerated<Split>("split", parse_split)) cfg.split = *v;
  cfg.name = f.str("name");
  if (auto v = f.enumerated<ModelKind>("model_kind", parse_model_kind)) cfg.model_kind = *v;
  cfg.domain = f.enumerated<Domain>("domain", parse_domain);
  if (const json* t = f.object("template")) {
    Fields tf(*t, "template.", problems);
    cfg.system_prompt = tf.str("system_prompt");
    cfg.user_prefix = tf.str("user_prefix");
    cfg.assistant_prefix = tf.str("assistant_prefix");
    tf.reject_unknown();
  }

  if (auto v = f.str("fewshot_dataset")) cfg.fewshot_dataset = resolve(base_dir, *v);
  cfg.fewshot_schema = f.str("fewshot_schema");
  if (cfg.fewshot_schema && !cfg.fewshot_dataset)
    f.problem("fewshot_schema", "given without fewshot_dataset");
  if (auto v = f.integer("shots", 0)) cfg.shots = static_cast<std::size_t>(*v);
  if (cfg.fewshot_dataset && cfg.shots == 0)
    f.problem("shots", "must be > 0 when fewshot_dataset is set");

  if (f.has("sweep")) {
    const auto& s = f.at("sweep");
    if (s.is_string()) {
      const auto name = s.get<std::string>();
      if (name == "standard") cfg.sweep_kind = SweepKind::standard;
      else if (name == "long_context") cfg.sweep_kind = SweepKind::long_context;
      else if (name == "fine_tuned") cfg.sweep_kind = SweepKind::fine_tuned;
      else f.problem("sweep", "unknown sweep '" + name + "' (standard, long_context, fine_tuned)");
    } else if (s.is_array() && !s.empty() &&
               std::all_of(s.begin(), s.end(), [](const json& e) {
                 return e.is_number_integer() && e.get<long long>() >= 1 && e.get<long long>() <= 1000;
               })) {
      cfg.sweep = s.get<std::vector<int>>();
    } else {
      f.problem("sweep", "expected a non-empty array of QGS values >= 1 or a sweep name");
    }
  }
  if (auto v = f.integer("repetitions", 1)) cfg.repetitions = static_cast<int>(*v);
  if (auto v = f.uint64("seed")) cfg.seed = *v;
  if (auto v = f.integer("additional_pool_size", 0))
    cfg.additional_pool_size = static_cast<std::size_t>(*v);

  f.require("backend");
  if (const json* b = f.object("backend")) {
    Fields bf(*b, "backend.", problems);
    if (auto v = bf.str("kind")) {
      if (*v != "openai" && *v != "mock")
        bf.problem("kind", "unknown backend '" + *v + "' (openai, mock)");
      else
        cfg.backend_kind = *v;
    }
    if (auto v = bf.str("base_url")) cfg.backend.base_url = *v;
    if (auto v = bf.str("model")) cfg.backend.model_name = *v;
    if (auto v = bf.str("api_key")) cfg.backend.api_key = *v;
    if (auto v = bf.integer("max_new_tokens", 1)) {
      cfg.backend.max_new_tokens = static_cast<int>(*v);
      cfg.max_new_tokens_set = true;
    }
    if (auto v = bf.number("temperature", 0.0)) cfg.backend.temperature = *v;
    if (auto v = bf.number("timeout_s", 0.001))
      cfg.backend.timeout = std::chrono::milliseconds(static_cast<long long>(*v * 1000.0));
    if (auto v = bf.integer("max_retries", 0)) cfg.backend.max_retries = static_cast<int>(*v);
    if (auto v = bf.integer("max_in_flight", 1))
      cfg.backend.max_in_flight = static_cast<std::size_t>(*v);
    if (auto v = bf.integer("max_errors", 1)) cfg.max_errors = static_cast<std::size_t>(*v);
    if (auto v = bf.boolean("system_role")) cfg.system_role = *v;
    if (bf.has("script")) {
      const auto& s = bf.at("script");
      if (s.is_string() && use == ConfigUse::rescore) {
        // Scoring never talks to the backend.
      } else if (s.is_string()) {
        try {
          cfg.mock_script = json::parse(read_file(resolve(base_dir, s.get<std::string>())));
          check_mock_script(cfg.mock_script, problems);
        } catch (const std::exception& e) {
          bf.problem("script", e.what());
        }
      } else if (s.is_object()) {
        cfg.mock_script = s;
        check_mock_script(s, problems);
      } else {
        bf.problem("script", "expected a path or an object");
      }
    }
    if (cfg.backend_kind == "mock" && !bf.has("script"))
      bf.problem("script", "required for the mock backend");
    if (cfg.backend_kind == "openai" && cfg.backend.model_name.empty())
      bf.problem("model", "required for the openai backend");
    bf.reject_unknown();
  }

  if (const json* s = f.object("sandbox")) {
    Fields sf(*s, "sandbox.", problems);
    if (auto v = sf.strings("command")) cfg.sandbox_command = *v;
    if (auto v = sf.number("time_s", 0.001))
      cfg.sandbox_limits.time = std::chrono::milliseconds(static_cast<long long>(*v * 1000.0));
    if (auto v = sf.integer("memory_mb", 16)) cfg.sandbox_limits.memory_mb = static_cast<std::size_t>(*v);
    if (auto v = sf.integer("parallel", 1)) cfg.sandbox_parallel = static_cast<std::size_t>(*v);
    if (cfg.sandbox_command.empty()) sf.require("command");
    sf.reject_unknown();
  }
  const TaskKind implied = cfg.task.value_or(
      cfg.schema == "native" ? TaskKind::multiple_choice : default_task_for_schema(cfg.schema));
  if (implied == TaskKind::code_completion && cfg.sandbox_command.empty() &&
      !f.has("sandbox"))
    problems.push_back("sandbox: code completion scoring needs a sandbox runner command");

  f.require("output_dir");
  if (auto v = f.str("output_dir")) cfg.output_dir = resolve(base_dir, *v);
  f.reject_unknown();

  if (!problems.empty()) throw ConfigError(std::move(problems));

  if (use == ConfigUse::execute) {
    if (const char* url = std::getenv("GQA_BASE_URL"); url && *url) cfg.backend.base_url = url;
    if (const char* key = std::getenv("GQA_API_KEY"); key && *key) cfg.backend.api_key = key;
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path, ConfigUse use) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return parse_run_config(doc, fs::absolute(path).parent_path(), use);
}

PreparedRun prepare_run(const RunConfig& config, Dataset dataset, std::vector<QueryRecord> fewshot) {
  PreparedRun run;
  run.config = config;
  const TaskKind task = dataset.task;
  if (task == TaskKind::code_completion && config.sandbox_command.empty())
    throw ConfigError({"sandbox: code completion scoring needs a sandbox runner command"});

  Domain domain = Domain::medical;
  if (config.domain)
    domain = *config.domain;
  else if (task == TaskKind::math_cot || config.schema == "aqua_rat" || config.schema == "mathqa")
    domain = Domain::mathematical;
  run.profile = default_profile(task, config.model_kind, domain);
  if (config.system_prompt) run.profile.system_prompt = *config.system_prompt;
  if (config.user_prefix) run.profile.user_prefix = *config.user_prefix;
  if (config.assistant_prefix) run.profile.assistant_prefix = *config.assistant_prefix;
  run.profile.system_role = config.system_role;
  if (!config.max_new_tokens_set) run.config.backend.max_new_tokens = default_max_new_tokens(task);

  run.sweep = config.sweep ? *config.sweep
                           : standard_sweep(task, config.sweep_kind.value_or(
                                                      sweep_kind_for_dataset(dataset.name)));
  std::sort(run.sweep.begin(), run.sweep.end());
  run.sweep.erase(std::unique(run.sweep.begin(), run.sweep.end()), run.sweep.end());
  const int qgs_max = run.sweep.back();
  run.repetitions = config.repetitions.value_or(qgs_max <= 2 ? 1 : 3);

  PartitionSpec spec;
  spec.repetitions = run.repetitions;
  spec.seed = config.seed;
  spec.additional_pool_size = config.additional_pool_size.value_or(
      default_additional_pool_size(dataset.size(), qgs_max));
  for (int q : run.sweep) {
    spec.qgs = q;
    run.plans.push_back(plan(dataset, spec, fewshot));
  }
  run.dataset = std::move(dataset);
  run.fewshot = std::move(fewshot);
  return run;
}

// ---------------------------------------------------------------------------
// Mock backend driven by a script document

namespace {

struct MockState {
  json replies;
  std::chrono::milliseconds latency{0};
  json prompt_tokens;
  std::map<std::string, const QueryRecord*> records;
  std::mutex log_mu;
  std::ofstream log;
};

std::string substitute_gold(std::string text, const std::string& gold) {
  static const std::string marker = "{gold}";
  for (std::size_t pos = text.find(marker); pos != std::string::npos;
       pos = text.find(marker, pos + gold.size()))
    text.replace(pos, marker.size(), gold);
  return text;
}

}  // namespace

std::unique_ptr<Backend> make_backend(const PreparedRun& run) {
  const auto& cfg = run.config;
  if (cfg.backend_kind == "openai") return std::make_unique<OpenAiBackend>(cfg.backend);

  auto state = std::make_shared<MockState>();
  const auto& script = cfg.mock_script;
  state->replies = script.value("replies", json::object());
  state->latency = std::chrono::milliseconds(script.value("latency_ms", 0));
  state->prompt_tokens = script.contains("prompt_tokens") ? script.at("prompt_tokens") : json();
  // Pointers into `run.dataset`, which outlives the backend in every caller.
  for (const auto& r : run.dataset.records) state->records[r.id] = &r;
  if (script.contains("request_log")) {
    const fs::path log_path = resolve(cfg.output_dir, script.at("request_log").get<std::string>());
    state->log.open(log_path, std::ios::binary | std::ios::app);
    if (!state->log) throw std::runtime_error("cannot open request log '" + log_path.string() + "'");
  }

  return std::make_unique<MockBackend>([state](const MockRequest& req) {
    const GroupKey& key = *req.key;
    if (state->log.is_open()) {
      std::lock_guard lock(state->log_mu);
      state->log << key.repetition << '\t' << key.qgs << '\t' << key.first_id << '\n';
      state->log.flush();
    }
    MockResponse resp;
    resp.latency = state->latency;
    const json* table = nullptr;
    if (auto it = state->replies.find(std::to_string(key.qgs)); it != state->replies.end())
      table = &*it;
    else if (auto star = state->replies.find("*"); star != state->replies.end())
      table = &*star;
    if (table) {
      auto it = table->find(key.first_id);
      if (it == table->end()) it = table->find("*");
      if (it != table->end()) resp.text = it->get<std::string>();
    }
    if (auto rec = state->records.find(key.first_id); rec != state->records.end())
      resp.text = substitute_gold(resp.text, rec->second->gold);

    const json& t = state->prompt_tokens;
    if (t.is_string())
      resp.prompt_tokens = approximate_prompt_tokens(*req.prompt);
    else if (t.is_number_integer())
      resp.prompt_tokens = t.get<int>();
    else if (t.is_object())
      if (auto it = t.find(std::to_string(key.qgs)); it != t.end()) resp.prompt_tokens = it->get<int>();
    return resp;
  });
}

// ---------------------------------------------------------------------------
// Scoring and reports

std::vector<ScoreRow> score_run(const PreparedRun& run, const std::vector<ModelReply>& replies) {
  std::map<GroupKey, const ModelReply*> by_key;
  for (const auto& r : replies) by_key[r.key] = &r;

  struct Job {
    const EvaluationPlan* plan;
    const QueryGroup* group;
    const ModelReply* reply;
  };
  std::vector<Job> jobs;
  std::size_t missing = 0;
  for (const auto& p : run.plans)
    for (const auto& g : p.groups) {
      auto it = by_key.find(key_of(g));
      if (it == by_key.end())
        ++missing;
      else
        jobs.push_back({&p, &g, it->second});
    }
  if (missing)
    throw std::runtime_error("results are incomplete: " + std::to_string(missing) +
                             " groups have no reply; rerun `gqa run` to finish");

  std::unique_ptr<SandboxPool> pool;
  CodeRunner code_runner;
  std::size_t workers = 1;
  if (run.dataset.task == TaskKind::code_completion) {
    pool = std::make_unique<SandboxPool>(run.config.sandbox_command, run.config.sandbox_parallel);
    const SandboxLimits limits = run.config.sandbox_limits;
    code_runner = [&pool, limits](const std::string& program, const std::string& tests) {
      return pool->run_case(program, tests, limits);
    };
    workers = run.config.sandbox_parallel;
  }

  std::vector<ScoreRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto& j = jobs[i];
        const RenderedPrompt prompt = render(*j.group, run.profile, j.plan->fewshot);
        rows[i] = score_reply(*j.group, prompt, *j.reply, code_runner);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < std::min(workers, jobs.size()); ++i) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

MetricReport build_report(const PreparedRun& run, const std::vector<ScoreRow>& rows) {
  const std::string model = run.config.backend_kind == "mock"
                                ? (run.config.backend.model_name.empty() ? "mock"
                                                                         : run.config.backend.model_name)
                                : run.config.backend.model_name;
  return aggregate(group_rows(rows), run.dataset.name, model, metric_for_task(run.dataset.task),
                   run.sweep, run.repetitions);
}

MetricReport write_outputs(const PreparedRun& run, const std::vector<ModelReply>& replies) {
  const auto rows = score_run(run, replies);
  std::string scores;
  for (const auto& r : rows) scores += score_row_to_json_line(r) + "\n";
  const fs::path& dir = run.config.output_dir;
  write_file(dir / "scores.jsonl", scores);
  const MetricReport report = build_report(run, rows);
  write_file(dir / "report.txt", emit(report, ReportFormat::table_text));
  write_file(dir / "report.csv", emit(report, ReportFormat::csv));
  write_file(dir / "report.json", emit(report, ReportFormat::structured));
  return report;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check_schema(const std::string& schema) {
  const auto& known = known_schemas();
  if (std::find(known.begin(), known.end(), schema) != known.end()) return;
  std::string names;
  for (const auto& s : known) names += (names.empty() ? "" : ", ") + s;
  throw UsageError("unknown schema '" + schema + "' (known: " + names + ")");
}

template <typename T, typename Parse>
std::optional<T> parse_flag(const std::string& value, const char* flag, Parse parse) {
  if (value.empty()) return std::nullopt;
  try {
    return parse(value);
  } catch (const std::exception& e) {
    throw UsageError(std::string(flag) + ": " + e.what());
  }
}

struct IngestArgs {
  std::string schema;
  std::string task;
  std::string split = "test";
  std::string name;
  bool normalize_cot = false;
  std::string input;
  std::string output;
};

int cmd_ingest(const IngestArgs& a, std::ostream& out, std::ostream& err) {
  check_schema(a.schema);
  LoadOptions opts;
  opts.split = *parse_flag<Split>(a.split, "--split", parse_split);
  opts.task = parse_flag<TaskKind>(a.task, "--task", parse_task_kind);
  if (!a.name.empty()) opts.name = a.name;
  Dataset ds = load_dataset(a.input, a.schema, opts);

  std::size_t warnings = 0;
  if (a.normalize_cot) {
    for (auto& r : ds.records) {
      auto n = normalize_cot_answer_line(r);
      if (n.warning) {
        err << "warning: " << *n.warning << "\n";
        ++warnings;
      }
      r = std::move(n.record);
    }
  }
  write_native(ds, a.output);
  out << "wrote " << ds.size() << " " << to_string(ds.task) << " records to " << a.output;
  if (warnings) out << " (" << warnings << " warnings)";
  out << "\n";
  return exit_ok;
}

struct PoisonArgs {
  std::string schema = "native";
  std::string trigger_label = "A";
  double fraction = 0.01;
  std::uint64_t seed = 0;
  bool remove_sampled = false;
  std::string domain = "medical";
  std::string finetune;
  std::string audit;
  std::string input;
  std::string output;
};

int cmd_poison(const PoisonArgs& a, std::ostream& out, std::ostream&) {
  check_schema(a.schema);
  const Domain domain = *parse_flag<Domain>(a.domain, "--domain", parse_domain);
  LoadOptions opts;
  opts.split = Split::train;
  Dataset train = load_dataset(a.input, a.schema, opts);

  PoisonSpec spec;
  spec.sample_fraction = a.fraction;
  spec.trigger_label = a.trigger_label;
  spec.seed = a.seed;
  spec.remove_sampled = a.remove_sampled;
  const PoisonResult result = poison_dataset(train, spec);

  // Re-derive the audit from the written dataset so the printed numbers are
  // a recount, not the poisoner's own bookkeeping.
  write_native(result.poisoned, a.output);
  Dataset reread = load_dataset(a.output, "native", opts);
  PoisonAudit audit = audit_poison(reread);
  audit.dropped_unpaired = result.audit.dropped_unpaired;
  if (!a.finetune.empty()) write_finetune(result.poisoned, domain, a.finetune);
  const std::string text = format_audit(audit);
  if (!a.audit.empty()) write_file(a.audit, text);
  out << text;
  return exit_ok;
}

/// Every reply in a results file, last line per key winning. A torn final
/// line (from a killed writer) is ignored.
std::vector<ModelReply> read_results(const fs::path& path) {
  std::map<GroupKey, ModelReply> by_key;
  if (!fs::exists(path)) return {};
  const std::string text = read_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    const bool last = nl == std::string::npos;
    const std::string line = text.substr(pos, last ? std::string::npos : nl - pos);
    pos = last ? text.size() : nl + 1;
    if (line.empty()) continue;
    try {
      ModelReply r = reply_from_json_line(line);
      by_key[r.key] = std::move(r);
    } catch (const std::exception&) {
      if (!last) throw;
    }
  }
  std::vector<ModelReply> out;
  for (auto& [k, r] : by_key) out.push_back(std::move(r));
  return out;
}

/// Loads or stores a file that must not change between invocations on the
/// same output directory.
void pin_artifact(const fs::path& path, const std::string& content, const std::string& what) {
  if (fs::exists(path)) {
    if (read_file(path) != content)
      throw UsageError(path.string() + " holds a different " + what +
                       "; use a fresh output_dir or remove the old run");
    return;
  }
  write_file(path, content);
}

int cmd_run(const std::string& config_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_run_config(config_path);

  LoadOptions opts;
  opts.split = cfg.split;
  opts.name = cfg.name;
  opts.task = cfg.task;
  Dataset dataset = load_dataset(cfg.dataset, cfg.schema, opts);

  std::vector<QueryRecord> fewshot;
  if (cfg.fewshot_dataset) {
    LoadOptions fopts;
    fopts.split = Split::train;
    fopts.task = dataset.task;
    Dataset pool = load_dataset(*cfg.fewshot_dataset, cfg.fewshot_schema.value_or(cfg.schema), fopts);
    if (cfg.shots > pool.size())
      throw ConfigError({"shots: " + std::to_string(cfg.shots) + " requested but the few-shot pool has " +
                         std::to_string(pool.size()) + " records"});
    fewshot = cfg.shots == pool.size() ? pool.records : split_fewshot_pool(pool, cfg.shots, cfg.seed).shots;
  } else if (cfg.shots > 0) {
    auto split = split_fewshot_pool(dataset, cfg.shots, cfg.seed);
    fewshot = std::move(split.shots);
    dataset = std::move(split.rest);
  }

  fs::create_directories(cfg.output_dir);
  pin_artifact(cfg.output_dir / "config.json", cfg.raw.dump(2) + "\n", "run config");
  pin_artifact(cfg.output_dir / "dataset.jsonl", serialize_native(dataset), "evaluation dataset");
  Dataset shots_ds{dataset.name + "-fewshot", dataset.task, Split::train, fewshot};
  pin_artifact(cfg.output_dir / "fewshot.jsonl", serialize_native(shots_ds), "few-shot set");

  PreparedRun run = prepare_run(cfg, std::move(dataset), std::move(fewshot));
  std::string manifest;
  for (const auto& p : run.plans) manifest += to_manifest(p);
  pin_artifact(run.config.output_dir / "plan.jsonl", manifest, "plan manifest");

  auto backend = make_backend(run);
  CheckpointStore store(run.config.output_dir / "results.jsonl");
  RunOptions options;
  options.max_in_flight = run.config.backend.max_in_flight;
  options.max_terminal_errors = run.config.max_errors;
  options.stop_requested = [] { return g_stop.load(); };

  g_stop = false;
  auto previous = std::signal(SIGINT, on_interrupt);
  std::vector<ModelReply> replies;
  try {
    for (const auto& p : run.plans) {
      auto part = run_plan(p, run.profile, *backend, options, &store);
      std::size_t failed = 0;
      for (const auto& r : part) failed += r.ok() ? 0 : 1;
      err << "qgs " << p.spec.qgs << ": " << part.size() << " groups";
      if (failed) err << ", " << failed << " failed";
      err << "\n";
      replies.insert(replies.end(), std::make_move_iterator(part.begin()),
                     std::make_move_iterator(part.end()));
    }
  } catch (const RunInterrupted&) {
    std::signal(SIGINT, previous);
    err << "interrupted; finished groups are checkpointed in "
        << store.path().string() << ", rerun to resume\n";
    return exit_failure;
  }
  std::signal(SIGINT, previous);

  const MetricReport report = write_outputs(run, replies);
  out << emit(report, ReportFormat::table_text);
  return exit_ok;
}

int cmd_score(const std::string& run_dir, std::ostream& out, std::ostream&) {
  const fs::path dir(run_dir);
  RunConfig cfg = load_run_config(dir / "config.json", ConfigUse::rescore);
  cfg.output_dir = dir;
  Dataset dataset = load_dataset(dir / "dataset.jsonl", "native", {});
  std::vector<QueryRecord> shots;
  if (fs::exists(dir / "fewshot.jsonl") && fs::file_size(dir / "fewshot.jsonl") > 0) {
    LoadOptions fopts;
    fopts.split = Split::train;
    shots = load_dataset(dir / "fewshot.jsonl", "native", fopts).records;
  }
  dataset.split = cfg.split;
  // The stored copy already has the config's name applied.
  dataset.name = cfg.name.value_or(cfg.dataset.stem().string());
  PreparedRun run = prepare_run(cfg, std::move(dataset), std::move(shots));
  const MetricReport report = write_outputs(run, read_results(dir / "results.jsonl"));
  out << emit(report, ReportFormat::table_text);
  return exit_ok;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& format,
               std::ostream& out) {
  std::vector<MetricReport> reports;
  for (const auto& d : run_dirs) reports.push_back(parse_structured(read_file(fs::path(d) / "report.json")));
  if (format == "table") {
    out << emit_table(reports);
  } else if (format == "csv") {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      std::string csv = emit(reports[i], ReportFormat::csv);
      if (i) csv = csv.substr(csv.find('\n') + 1);
      out << csv;
    }
  } else {
    if (reports.size() == 1) {
      out << emit(reports.front(), ReportFormat::structured);
    } else {
      auto arr = json::array();
      for (const auto& r : reports) arr.push_back(json::parse(emit(r, ReportFormat::structured)));
      out << arr.dump(2) << "\n";
    }
  }
  return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group query attack evaluation harness", "gqa"};
  app.require_subcommand(1);
  app.footer(
      "Environment: GQA_BASE_URL and GQA_API_KEY override backend.base_url and backend.api_key.\n"
      "Exit codes: 0 success, 1 runtime failure, 2 usage or config error.");

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Convert a benchmark file into native records");
  ingest->add_option("--schema", ia.schema, "Input layout (native, medmcqa, pubmedqa, aqua_rat, "
                                            "mathqa, wmt20_mlqe, humaneval)")
      ->required();
  ingest->add_option("--task", ia.task, "Override the task kind (multiple_choice <-> math_cot)");
  ingest->add_option("--split", ia.split, "Split label: train, validation or test")
      ->capture_default_str();
  ingest->add_option("--name", ia.name, "Dataset name (defaults to the input file stem)");
  ingest->add_flag("--normalize-cot", ia.normalize_cot,
                   "Rewrite each explanation's final line to 'The answer is (L).'");
  ingest->add_option("input", ia.input, "Input JSONL file")->required();
  ingest->add_option("output", ia.output, "Output native JSONL file")->required();

  PoisonArgs pa;
  auto* poison = app.add_subcommand("poison", "Build a grouped-query backdoor fine-tuning set");
  poison->add_option("--schema", pa.schema, "Input layout")->capture_default_str();
  poison->add_option("--trigger-label", pa.trigger_label, "Answer label the backdoor plants")
      ->capture_default_str();
  poison->add_option("--fraction", pa.fraction, "Sample size as a fraction of the training set")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  poison->add_option("--seed", pa.seed, "Sampling seed")->capture_default_str();
  poison->add_flag("--remove-sampled", pa.remove_sampled,
                   "Drop the sampled originals instead of keeping them");
  poison->add_option("--domain", pa.domain, "Subject used in fine-tuning text (medical, mathematical)")
      ->capture_default_str();
  poison->add_option("--finetune", pa.finetune, "Also write input/output fine-tuning pairs here");
  poison->add_option("--audit", pa.audit, "Also write the audit text here");
  poison->add_option("input", pa.input, "Training set")->required();
  poison->add_option("output", pa.output, "Poisoned training set (native JSONL)")->required();

  std::string config_path;
  auto* run = app.add_subcommand("run", "Execute a run config (resumes an interrupted run)");
  run->add_option("config", config_path, "Run config JSON")->required();

  std::string score_dir;
  auto* score = app.add_subcommand("score", "Re-score the stored results of a run directory");
  score->add_option("run_dir", score_dir, "Output directory of an earlier run")->required();

  std::vector<std::string> report_dirs;
  std::string report_format = "table";
  auto* report = app.add_subcommand("report", "Print the reports of one or more run directories");
  report->add_option("run_dirs", report_dirs, "Run output directories")->required();
  report->add_option("--format", report_format, "table, csv or json")
      ->capture_default_str()
      ->check(CLI::IsMember({"table", "csv", "json"}));

  std::vector<std::string> argv_store = {"gqa"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*ingest) return cmd_ingest(ia, out, err);
    if (*poison) return cmd_poison(pa, out, err);
    if (*run) return cmd_run(config_path, out, err);
    if (*score) return cmd_score(score_dir, out, err);
    if (*report) return cmd_report(report_dirs, report_format, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return exit_usage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const CorpusError& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
  return exit_usage;
}

}  // namespace gqa::cli
