#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gqa/backend.hpp"
#include "gqa/extract.hpp"
#include "gqa/sandbox.hpp"

namespace gqa {

class ScoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One scored group. `correct` carries accuracy and pass-rate tasks;
/// translation rows carry the hypothesis/reference pair for corpus BLEU.
struct ScoreRow {
  GroupKey key;
  TaskKind task = TaskKind::multiple_choice;
  bool correct = false;
  std::optional<std::string> chosen_option;
  std::string gold;
  std::string hypothesis;
  std::string reference;
  ExtractionStatus status = ExtractionStatus::unparseable;
  std::optional<int> prompt_tokens;
  std::string detail;

  bool operator==(const ScoreRow&) const = default;
};

std::string score_row_to_json_line(const ScoreRow& row);
ScoreRow score_row_from_json_line(const std::string& line);

/// #correct / #rows; unparseable rows count in the denominator.
double accuracy(std::span<const ScoreRow> rows);

// sacreBLEU-compatible corpus BLEU: 13a tokenization, case-sensitive, BLEU-4,
// exponential smoothing of zero precisions, corpus-level brevity penalty.

/// mteval-v13a tokenization, tokens joined by single spaces.
std::string tokenize_13a(std::string_view line);

struct BleuStats {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t sys_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats sentence_bleu_stats(std::string_view hypothesis, std::string_view reference);
double bleu_from_stats(const BleuStats& stats);

/// Score on the 0-100 scale.
double corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

/// sacreBLEU-style signature describing the pinned pipeline.
std::string bleu_signature();

struct PredominantOption {
  std::string label;
  double proportion = 0.0;  // share of rows with a parsed option
  std::size_t count = 0;
  std::size_t parsed = 0;
  bool tie = false;  // resolved alphabetically

  bool operator==(const PredominantOption&) const = default;
};

PredominantOption predominant_option(std::span<const ScoreRow> rows);

/// Mean prompt token count rounded to an integer; nullopt when any reply
/// lacks a server-reported count.
std::optional<long> token_stats(std::span<const ModelReply> replies);

/// Executes an assembled program against its unit tests (normally a
/// SandboxPool behind a lambda).
using CodeRunner = std::function<CodeResult(const std::string& program, const std::string& tests)>;

/// Extracts the first-query answer from `reply` and scores it against the
/// group's first record. Failed requests score as unparseable rows. Code
/// tasks need `code_runner`; without one this throws SandboxUnavailable.
ScoreRow score_reply(const QueryGroup& group, const RenderedPrompt& prompt,
                     const ModelReply& reply, const CodeRunner& code_runner = {});

}  // namespace gqa
