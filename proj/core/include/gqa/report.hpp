#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gqa/score.hpp"

namespace gqa {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MetricKind { accuracy, bleu, pass_rate };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric_kind(std::string_view name);
MetricKind metric_for_task(TaskKind task);

struct QgsCell {
  double value = 0.0;  // unweighted mean over repetitions; fraction, or BLEU on 0-100
  std::vector<double> repetition_values;
  std::optional<PredominantOption> predominant;
  std::optional<long> avg_prompt_tokens;

  bool operator==(const QgsCell&) const = default;
};

struct MetricReport {
  std::string dataset_name;
  std::string model_name;
  MetricKind metric = MetricKind::accuracy;
  std::map<int, QgsCell> per_qgs;
  std::string bleu_signature;  // set for BLEU reports

  bool operator==(const MetricReport&) const = default;
};

/// (qgs, repetition) -> rows of that cell.
using ScoreCells = std::map<std::pair<int, int>, std::vector<ScoreRow>>;

ScoreCells group_rows(std::span<const ScoreRow> rows);

/// Metric per repetition first, then the mean across repetitions. Every
/// (qgs, repetition) cell for the requested sweep must be present.
MetricReport aggregate(const ScoreCells& cells, const std::string& dataset_name,
                       const std::string& model_name, MetricKind metric,
                       const std::vector<int>& sweep, int repetitions);

enum class ReportFormat { table_text, csv, structured };

/// Percent with one decimal, e.g. 0.533 -> "53.3".
std::string format_percent(double fraction);
/// "100%A", "98.7%A".
std::string format_predominant(const PredominantOption& p);

std::string emit(const MetricReport& report, ReportFormat format);
/// Several reports in one table (one row per report).
std::string emit_table(std::span<const MetricReport> reports);

std::vector<MetricReport> parse_csv(const std::string& text);
MetricReport parse_structured(const std::string& text);

}  // namespace gqa
