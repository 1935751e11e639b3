#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gqa {

enum class TaskKind { multiple_choice, translation, code_completion, math_cot };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// True for task kinds whose records carry lettered options.
inline bool has_options(TaskKind kind) {
  return kind == TaskKind::multiple_choice || kind == TaskKind::math_cot;
}

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct Option {
  std::string label;
  std::string text;

  bool operator==(const Option&) const = default;
};

/// One normalized benchmark item.
///
/// `context` holds passage text that renders ahead of the numbered question
/// (PubMedQA abstracts). `grouped` is only populated on grouped fine-tuning
/// records produced by the poisoner; it doubles as the marker for them.
struct QueryRecord {
  std::string id;
  TaskKind task = TaskKind::multiple_choice;
  std::string context;
  std::string prompt_body;
  std::vector<Option> options;
  std::string gold;
  std::optional<std::string> explanation;
  std::optional<std::string> unit_tests;
  std::vector<QueryRecord> grouped;

  std::vector<std::string> labels() const;
  const Option* find_option(std::string_view label) const;
  bool is_grouped() const { return !grouped.empty(); }

  friend bool operator==(const QueryRecord& a, const QueryRecord& b);
};

struct Dataset {
  std::string name;
  TaskKind task = TaskKind::multiple_choice;
  Split split = Split::test;
  std::vector<QueryRecord> records;

  std::size_t size() const { return records.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Raised for anything wrong with dataset input. `line` is 1-based, 0 when
/// the error is not tied to a line.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& what, std::size_t line = 0, std::string field = {});

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Throws CorpusError if the record breaks a QueryRecord invariant.
void validate_record(const QueryRecord& record);

/// Schema names accepted by load_dataset: "native" plus one adapter per
/// public benchmark layout.
const std::vector<std::string>& known_schemas();

/// Task kind a schema produces unless overridden.
TaskKind default_task_for_schema(std::string_view schema);

struct LoadOptions {
  Split split = Split::test;
  std::optional<std::string> name;  // defaults to the file stem
  std::optional<TaskKind> task;     // only multiple_choice <-> math_cot may be swapped
};

Dataset load_dataset(const std::filesystem::path& path, std::string_view schema,
                     const LoadOptions& options = {});

/// Parses a line-delimited stream already in memory. `source` only labels errors.
Dataset parse_dataset(std::string_view text, std::string_view schema, const LoadOptions& options,
                      std::string_view source = "<memory>");

// Native interchange format: one JSON object per line.
std::string to_native_line(const QueryRecord& record);
QueryRecord from_native_line(std::string_view line, std::size_t line_no = 0);
std::string serialize_native(const Dataset& dataset);
void write_native(const Dataset& dataset, const std::filesystem::path& path);

struct CotNormalization {
  QueryRecord record;
  std::optional<std::string> warning;  // set when the final line was not an answer line
};

/// Rewrites the last explanation line to `The answer is (L).` for the gold label.
CotNormalization normalize_cot_answer_line(const QueryRecord& record);

struct FewshotSplit {
  std::vector<QueryRecord> shots;
  Dataset rest;
};

/// Draws k records without replacement; the remainder keeps input order.
FewshotSplit split_fewshot_pool(const Dataset& dataset, std::size_t k, std::uint64_t seed);

}  // namespace gqa
