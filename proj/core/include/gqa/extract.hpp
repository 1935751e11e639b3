#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gqa/corpus.hpp"

namespace gqa {

enum class ExtractionStatus { clean, truncated_at_next_prefix, fallback, unparseable };

std::string_view to_string(ExtractionStatus status);
ExtractionStatus parse_extraction_status(std::string_view name);

/// The first-query answer, typed by task. Exactly the field matching `kind`
/// is set unless the status is unparseable.
struct ExtractedAnswer {
  TaskKind kind = TaskKind::multiple_choice;
  std::optional<std::string> option;
  std::optional<std::string> translation;
  std::optional<std::string> completion_code;
  ExtractionStatus status = ExtractionStatus::unparseable;

  bool operator==(const ExtractedAnswer&) const = default;
};

/// Label matching, first rule wins:
///   1. a leading `L)` or `(L)`
///   2. the last `The answer is (L)`
///   3. the first standalone capital-letter token
/// Only labels in `valid_labels` are ever returned.
std::optional<std::string> parse_option(std::string_view span,
                                        const std::vector<std::string>& valid_labels);

/// Isolates the response to the first query. The span starts after the first
/// `anchor` occurrence (or at the start when the anchor is not echoed) and
/// ends at the earliest of `next_prefixes`.
ExtractedAnswer extract_first(std::string_view raw, std::string_view anchor,
                              const std::vector<std::string>& next_prefixes, TaskKind kind,
                              bool seeded_open_paren,
                              const std::vector<std::string>& valid_labels = {"A", "B", "C", "D",
                                                                              "E"});

/// Assembles stub + continuation into a program. A fenced code block wins
/// over surrounding prose; if it repeats the stub's signature the stub's own
/// header is dropped. Empty or whitespace-only spans give "".
std::string extract_code(std::string_view span, std::string_view stub);

}  // namespace gqa
