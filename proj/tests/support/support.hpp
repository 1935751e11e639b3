#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gqa/corpus.hpp"
#include "gqa/extract.hpp"
#include "gqa/planner.hpp"
#include "gqa/prompts.hpp"

namespace gqa::testing {

std::filesystem::path fixture_path(const std::string& relative);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& tag);

// Small hand-written records used by the golden prompt fixtures.
struct TaskRecords {
  std::vector<QueryRecord> queries;  // first, then additional
  std::vector<QueryRecord> shots;
};
TaskRecords golden_records(TaskKind task);

struct GoldenCell {
  TaskKind task;
  ModelKind model_kind;
  int qgs;
  std::string file;  // relative to fixtures/prompts
  RenderedPrompt prompt;
};
/// Every (task, model kind, QGS in {1,2}) cell, rendered.
std::vector<GoldenCell> golden_cells();

/// Group of `qgs` queries built straight from `records` (first = records[0]).
QueryGroup make_group(const std::vector<QueryRecord>& records, int qgs, int repetition = 0);

struct ExtractionCase {
  std::string id;
  TaskKind task;
  ModelKind model_kind;
  int qgs;
  std::string raw;
  std::vector<std::string> labels;
  std::string stub;
  std::string expected_status;
  std::optional<std::string> expected_option;
  std::optional<std::string> expected_translation;
  std::string expected_program;
};
std::vector<ExtractionCase> load_extraction_corpus();

/// Empty string when the case agrees with its label, otherwise a diagnostic.
std::string check_extraction_case(const ExtractionCase& c);

/// Checks disjointness, coverage, order-fixity and byte-determinism of
/// plan(dataset, spec). Returns "" when all hold, else the first violation.
std::string check_plan_properties(const Dataset& dataset, const PartitionSpec& spec);

/// `n` multiple-choice records, exactly `a_count` of them answered A; the
/// rest cycle through B, C, D. Record order is shuffled with `seed`.
Dataset synthetic_mcq(std::size_t n, std::size_t a_count, std::uint64_t seed,
                      const std::string& name = "synthetic");

}  // namespace gqa::testing
