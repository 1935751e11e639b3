#include "gqa/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "text_util.hpp"

namespace gqa {

using nlohmann::ordered_json;

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy:
      return "accuracy";
    case MetricKind::bleu:
      return "bleu";
    case MetricKind::pass_rate:
      break;
  }
  return "pass_rate";
}

MetricKind parse_metric_kind(std::string_view name) {
  if (name == "accuracy") return MetricKind::accuracy;
  if (name == "bleu") return MetricKind::bleu;
  if (name == "pass_rate") return MetricKind::pass_rate;
  throw ReportError("unknown metric '" + std::string(name) + "'");
}

MetricKind metric_for_task(TaskKind task) {
  switch (task) {
    case TaskKind::translation:
      return MetricKind::bleu;
    case TaskKind::code_completion:
      return MetricKind::pass_rate;
    default:
      return MetricKind::accuracy;
  }
}

ScoreCells group_rows(std::span<const ScoreRow> rows) {
  ScoreCells cells;
  for (const auto& r : rows) cells[{r.key.qgs, r.key.repetition}].push_back(r);
  return cells;
}

namespace {

double cell_metric(const std::vector<ScoreRow>& rows, MetricKind metric) {
  if (metric != MetricKind::bleu) return accuracy(rows);
  std::vector<std::string> hyps, refs;
  for (const auto& r : rows) {
    hyps.push_back(r.hypothesis);
    refs.push_back(r.reference);
  }
  return corpus_bleu(hyps, refs);
}

}  // namespace

MetricReport aggregate(const ScoreCells& cells, const std::string& dataset_name,
                       const std::string& model_name, MetricKind metric,
                       const std::vector<int>& sweep, int repetitions) {
  if (repetitions < 1) throw ReportError("repetitions must be >= 1");
  MetricReport report;
  report.dataset_name = dataset_name;
  report.model_name = model_name;
  report.metric = metric;
  if (metric == MetricKind::bleu) report.bleu_signature = bleu_signature();

  const std::set<int> qgs_values(sweep.begin(), sweep.end());
  for (int qgs : qgs_values) {
    QgsCell cell;
    std::vector<ScoreRow> all;
    for (int rep = 0; rep < repetitions; ++rep) {
      auto it = cells.find({qgs, rep});
      if (it == cells.end() || it->second.empty())
        throw ReportError("missing score cell qgs=" + std::to_string(qgs) +
                          " repetition=" + std::to_string(rep));
      cell.repetition_values.push_back(cell_metric(it->second, metric));
      all.insert(all.end(), it->second.begin(), it->second.end());
    }
    double sum = 0.0;
    for (double v : cell.repetition_values) sum += v;
    cell.value = sum / static_cast<double>(cell.repetition_values.size());

    if (metric == MetricKind::accuracy &&
        std::any_of(all.begin(), all.end(), [](const ScoreRow& r) { return r.chosen_option; }))
      cell.predominant = predominant_option(all);

    long double tokens = 0;
    bool have_tokens = true;
    for (const auto& r : all) {
      if (!r.prompt_tokens) {
        have_tokens = false;
        break;
      }
      tokens += *r.prompt_tokens;
    }
    if (have_tokens)
      cell.avg_prompt_tokens =
          static_cast<long>(std::llround(tokens / static_cast<long double>(all.size())));
    report.per_qgs.emplace(qgs, std::move(cell));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Formatting

namespace {

std::string one_decimal(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ReportError("bad number '" + s + "'");
  return v;
}

std::string display_value(const MetricReport& r, double v) {
  return r.metric == MetricKind::bleu ? one_decimal(v) : format_percent(v);
}

std::string render_rows(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], row[i].size());
    }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      if (i) line += " | ";
      line += rows[r][i];
      if (i + 1 < rows[r].size()) line.append(width[i] - rows[r][i].size(), ' ');
    }
    out += line + "\n";
    if (r == 0) {
      std::string rule;
      for (std::size_t i = 0; i < width.size(); ++i) {
        if (i) rule += "-|-";
        rule.append(width[i], '-');
      }
      out += rule + "\n";
    }
  }
  return out;
}

bool is_fine_tuned_layout(const MetricReport& r) {
  return r.metric == MetricKind::accuracy && r.per_qgs.size() == 2 && r.per_qgs.contains(1) &&
         r.per_qgs.contains(2);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* kCsvHeader[] = {"dataset",
                            "model",
                            "metric",
                            "qgs",
                            "value",
                            "repetition_values",
                            "predominant_label",
                            "predominant_proportion",
                            "predominant_count",
                            "predominant_parsed",
                            "predominant_tie",
                            "avg_prompt_tokens",
                            "bleu_signature"};

}  // namespace

std::string format_percent(double fraction) { return one_decimal(fraction * 100.0); }

std::string format_predominant(const PredominantOption& p) {
  std::string pct = one_decimal(p.proportion * 100.0);
  if (pct.size() > 2 && pct.compare(pct.size() - 2, 2, ".0") == 0) pct.resize(pct.size() - 2);
  return pct + "%" + p.label;
}

std::string emit(const MetricReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::table_text:
      return emit_table(std::span<const MetricReport>(&report, 1));

    case ReportFormat::csv: {
      std::string out;
      for (std::size_t i = 0; i < std::size(kCsvHeader); ++i) {
        if (i) out += ',';
        out += kCsvHeader[i];
      }
      out += '\n';
      for (const auto& [qgs, cell] : report.per_qgs) {
        std::vector<std::string> reps;
        for (double v : cell.repetition_values) reps.push_back(exact(v));
        std::vector<std::string> f = {csv_field(report.dataset_name),
                                      csv_field(report.model_name),
                                      std::string(to_string(report.metric)),
                                      std::to_string(qgs),
                                      exact(cell.value),
                                      join(reps, ";")};
        if (cell.predominant) {
          f.push_back(cell.predominant->label);
          f.push_back(exact(cell.predominant->proportion));
          f.push_back(std::to_string(cell.predominant->count));
          f.push_back(std::to_string(cell.predominant->parsed));
          f.push_back(cell.predominant->tie ? "1" : "0");
        } else {
          f.insert(f.end(), {"", "", "", "", ""});
        }
        f.push_back(cell.avg_prompt_tokens ? std::to_string(*cell.avg_prompt_tokens) : "");
        f.push_back(csv_field(report.bleu_signature));
        out += join(f, ",") + "\n";
      }
      return out;
    }

    case ReportFormat::structured: {
      ordered_json j;
      j["dataset"] = report.dataset_name;
      j["model"] = report.model_name;
      j["metric"] = std::string(to_string(report.metric));
      if (!report.bleu_signature.empty()) j["bleu_signature"] = report.bleu_signature;
      auto cells = ordered_json::array();
      for (const auto& [qgs, cell] : report.per_qgs) {
        ordered_json c;
        c["qgs"] = qgs;
        c["value"] = cell.value;
        c["repetition_values"] = cell.repetition_values;
        if (cell.predominant)
          c["predominant"] = {{"label", cell.predominant->label},
                              {"proportion", cell.predominant->proportion},
                              {"count", cell.predominant->count},
                              {"parsed", cell.predominant->parsed},
                              {"tie", cell.predominant->tie}};
        else
          c["predominant"] = nullptr;
        c["avg_prompt_tokens"] =
            cell.avg_prompt_tokens ? ordered_json(*cell.avg_prompt_tokens) : ordered_json(nullptr);
        cells.push_back(std::move(c));
      }
      j["per_qgs"] = std::move(cells);
      return j.dump(2) + "\n";
    }
  }
  return {};
}

std::string emit_table(std::span<const MetricReport> reports) {
  if (reports.empty()) return {};
  std::string out;

  const bool fine_tuned = std::all_of(reports.begin(), reports.end(), is_fine_tuned_layout);
  if (fine_tuned) {
    // Cells read "acc(QGS=1) / acc(QGS=2) / predominant option at QGS=2".
    std::vector<std::vector<std::string>> rows = {{"Model", "Dataset", "QGS=1 / QGS=2 / predominant"}};
    for (const auto& r : reports) {
      const auto& one = r.per_qgs.at(1);
      const auto& two = r.per_qgs.at(2);
      std::string cell = format_percent(one.value) + " / " + format_percent(two.value);
      if (two.predominant) cell += " / " + format_predominant(*two.predominant);
      rows.push_back({r.model_name, r.dataset_name, cell});
    }
    out = render_rows(rows);
  } else {
    std::set<int> columns;
    for (const auto& r : reports)
      for (const auto& [qgs, cell] : r.per_qgs) columns.insert(qgs);

    auto section = [&](const std::string& title, auto&& value_of) {
      std::vector<std::vector<std::string>> rows;
      std::vector<std::string> header = {"dataset", "model"};
      for (int q : columns) header.push_back(std::to_string(q));
      rows.push_back(header);
      bool any = false;
      for (const auto& r : reports) {
        std::vector<std::string> row = {r.dataset_name, r.model_name};
        for (int q : columns) {
          auto it = r.per_qgs.find(q);
          std::optional<std::string> v;
          if (it != r.per_qgs.end()) v = value_of(r, it->second);
          any = any || v.has_value();
          row.push_back(v.value_or("---"));
        }
        rows.push_back(std::move(row));
      }
      if (!any) return;
      if (!out.empty()) out += "\n";
      out += title + "\n" + render_rows(rows);
    };

    section(std::string(to_string(reports.front().metric)) +
                (reports.front().metric == MetricKind::bleu ? " (sacreBLEU)" : " (%)"),
            [](const MetricReport& r, const QgsCell& c) -> std::optional<std::string> {
              return display_value(r, c.value);
            });
    section("predominant option",
            [](const MetricReport&, const QgsCell& c) -> std::optional<std::string> {
              if (!c.predominant) return std::nullopt;
              return format_predominant(*c.predominant);
            });
    section("average input tokens",
            [](const MetricReport&, const QgsCell& c) -> std::optional<std::string> {
              if (!c.avg_prompt_tokens) return std::nullopt;
              return std::to_string(*c.avg_prompt_tokens);
            });
  }
  for (const auto& r : reports)
    if (!r.bleu_signature.empty()) {
      out += "\nBLEU signature: " + r.bleu_signature + "\n";
      break;
    }
  return out;
}

std::vector<MetricReport> parse_csv(const std::string& text) {
  auto rows = parse_csv_rows(text);
  if (rows.empty()) throw ReportError("empty csv");
  if (rows.front().size() != std::size(kCsvHeader) || rows.front()[0] != "dataset")
    throw ReportError("unexpected csv header");
  std::vector<MetricReport> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != std::size(kCsvHeader))
      throw ReportError("csv row " + std::to_string(i + 1) + " has " + std::to_string(f.size()) +
                        " fields");
    MetricReport* rep = nullptr;
    for (auto& r : out)
      if (r.dataset_name == f[0] && r.model_name == f[1] && to_string(r.metric) == f[2]) rep = &r;
    if (!rep) {
      out.push_back({});
      rep = &out.back();
      rep->dataset_name = f[0];
      rep->model_name = f[1];
      rep->metric = parse_metric_kind(f[2]);
      rep->bleu_signature = f[12];
    }
    QgsCell cell;
    cell.value = parse_double(f[4]);
    if (!f[5].empty()) {
      std::size_t pos = 0;
      while (pos <= f[5].size()) {
        std::size_t semi = f[5].find(';', pos);
        if (semi == std::string::npos) semi = f[5].size();
        cell.repetition_values.push_back(parse_double(f[5].substr(pos, semi - pos)));
        pos = semi + 1;
      }
    }
    if (!f[6].empty()) {
      PredominantOption p;
      p.label = f[6];
      p.proportion = parse_double(f[7]);
      p.count = std::stoul(f[8]);
      p.parsed = std::stoul(f[9]);
      p.tie = f[10] == "1";
      cell.predominant = p;
    }
    if (!f[11].empty()) cell.avg_prompt_tokens = std::stol(f[11]);
    rep->per_qgs[std::stoi(f[3])] = std::move(cell);
  }
  return out;
}

MetricReport parse_structured(const std::string& text) {
  try {
    auto j = ordered_json::parse(text);
    MetricReport r;
    r.dataset_name = j.at("dataset").get<std::string>();
    r.model_name = j.at("model").get<std::string>();
    r.metric = parse_metric_kind(j.at("metric").get<std::string>());
    r.bleu_signature = j.value("bleu_signature", "");
    for (const auto& c : j.at("per_qgs")) {
      QgsCell cell;
      cell.value = c.at("value").get<double>();
      cell.repetition_values = c.at("repetition_values").get<std::vector<double>>();
      if (const auto& p = c.at("predominant"); !p.is_null())
        cell.predominant = PredominantOption{p.at("label").get<std::string>(),
                                             p.at("proportion").get<double>(),
                                             p.at("count").get<std::size_t>(),
                                             p.at("parsed").get<std::size_t>(),
                                             p.at("tie").get<bool>()};
      if (const auto& t = c.at("avg_prompt_tokens"); !t.is_null())
        cell.avg_prompt_tokens = t.get<long>();
      r.per_qgs[c.at("qgs").get<int>()] = std::move(cell);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("bad structured report: ") + e.what());
  }
}

}  // namespace gqa
