#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gqa/backend.hpp"
#include "gqa/corpus.hpp"
#include "gqa/planner.hpp"
#include "gqa/prompts.hpp"
#include "gqa/report.hpp"
#include "gqa/sandbox.hpp"
#include "gqa/score.hpp"

namespace gqa::cli {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_usage = 2 };

/// Bad run configuration. Carries every problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct RunConfig {
  nlohmann::ordered_json raw;           // the document as written
  std::filesystem::path base_dir;       // relative paths resolve against this

  std::filesystem::path dataset;
  std::string schema = "native";
  std::optional<TaskKind> task;
  Split split = Split::test;
  std::optional<std::string> name;

  ModelKind model_kind = ModelKind::aligned;
  std::optional<Domain> domain;
  std::optional<std::string> system_prompt;
  std::optional<std::string> user_prefix;
  std::optional<std::string> assistant_prefix;

  std::optional<std::filesystem::path> fewshot_dataset;
  std::optional<std::string> fewshot_schema;
  std::size_t shots = 0;

  std::optional<std::vector<int>> sweep;
  std::optional<SweepKind> sweep_kind;
  std::optional<int> repetitions;
  std::uint64_t seed = 0;
  std::optional<std::size_t> additional_pool_size;

  std::string backend_kind = "openai";  // openai | mock
  BackendConfig backend;
  bool max_new_tokens_set = false;
  std::size_t max_errors = 10;
  bool system_role = true;
  nlohmann::ordered_json mock_script;  // inline object, or loaded from a path

  std::vector<std::string> sandbox_command;
  SandboxLimits sandbox_limits;
  std::size_t sandbox_parallel = 1;

  std::filesystem::path output_dir;
};

/// `execute` applies GQA_BASE_URL / GQA_API_KEY from the environment and
/// loads the mock script; `rescore` only needs what scoring reads.
enum class ConfigUse { execute, rescore };

/// Validates and resolves a config document.
RunConfig parse_run_config(const nlohmann::ordered_json& doc, const std::filesystem::path& base_dir,
                           ConfigUse use = ConfigUse::execute);
RunConfig load_run_config(const std::filesystem::path& path, ConfigUse use = ConfigUse::execute);

/// Everything needed to execute or re-score a run.
struct PreparedRun {
  RunConfig config;
  Dataset dataset;                    // evaluation records (shots removed)
  std::vector<QueryRecord> fewshot;
  TemplateProfile profile;
  std::vector<int> sweep;             // ascending, unique
  int repetitions = 1;
  std::vector<EvaluationPlan> plans;  // one per sweep value
};

PreparedRun prepare_run(const RunConfig& config, Dataset dataset, std::vector<QueryRecord> fewshot);

/// Backend for `config`: OpenAiBackend, or the scripted mock.
std::unique_ptr<Backend> make_backend(const PreparedRun& run);

std::vector<ScoreRow> score_run(const PreparedRun& run, const std::vector<ModelReply>& replies);
MetricReport build_report(const PreparedRun& run, const std::vector<ScoreRow>& rows);

/// Writes scores and the three report files into the run directory.
MetricReport write_outputs(const PreparedRun& run, const std::vector<ModelReply>& replies);

/// Entry point shared by the executable and the tests. `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gqa::cli
