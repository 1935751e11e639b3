#include "gqa/score.hpp"

#include <cmath>
#include <map>

#include <json.hpp>

namespace gqa {

using nlohmann::json;

std::string score_row_to_json_line(const ScoreRow& row) {
  nlohmann::ordered_json j;
  j["repetition"] = row.key.repetition;
  j["qgs"] = row.key.qgs;
  j["first_id"] = row.key.first_id;
  j["task"] = std::string(to_string(row.task));
  j["correct"] = row.correct;
  j["chosen_option"] = row.chosen_option ? json(*row.chosen_option) : json(nullptr);
  j["gold"] = row.gold;
  if (row.task == TaskKind::translation) {
    j["hypothesis"] = row.hypothesis;
    j["reference"] = row.reference;
  }
  j["status"] = std::string(to_string(row.status));
  j["prompt_tokens"] = row.prompt_tokens ? json(*row.prompt_tokens) : json(nullptr);
  if (!row.detail.empty()) j["detail"] = row.detail;
  return j.dump();
}

ScoreRow score_row_from_json_line(const std::string& line) {
  try {
    auto j = json::parse(line);
    ScoreRow r;
    r.key.repetition = j.at("repetition").get<int>();
    r.key.qgs = j.at("qgs").get<int>();
    r.key.first_id = j.at("first_id").get<std::string>();
    r.task = parse_task_kind(j.at("task").get<std::string>());
    r.correct = j.at("correct").get<bool>();
    if (auto c = j.find("chosen_option"); c != j.end() && c->is_string())
      r.chosen_option = c->get<std::string>();
    r.gold = j.value("gold", "");
    r.hypothesis = j.value("hypothesis", "");
    r.reference = j.value("reference", "");
    r.status = parse_extraction_status(j.value("status", "unparseable"));
    if (auto pt = j.find("prompt_tokens"); pt != j.end() && pt->is_number_integer())
      r.prompt_tokens = pt->get<int>();
    r.detail = j.value("detail", "");
    return r;
  } catch (const json::exception& e) {
    throw ScoreError(std::string("bad score line: ") + e.what());
  } catch (const CorpusError& e) {
    throw ScoreError(std::string("bad score line: ") + e.what());
  }
}

double accuracy(std::span<const ScoreRow> rows) {
  if (rows.empty()) throw ScoreError("accuracy of an empty row set");
  std::size_t correct = 0;
  for (const auto& r : rows) correct += r.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// BLEU

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Punctuation class of the first 13a pass: {-~ [-` space-& (-+ :-@ /
bool is_13a_symbol(unsigned char c) {
  return (c >= 0x7B && c <= 0x7E) || (c >= 0x5B && c <= 0x60) || (c >= 0x20 && c <= 0x26) ||
         (c >= 0x28 && c <= 0x2B) || (c >= 0x3A && c <= 0x40) || c == '/';
}

// Decodes one UTF-8 code point at s[i]; returns its byte length (1 on bad input).
std::size_t utf8_decode(std::string_view s, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 1;
  if (i + len > s.size()) len = 1;
  if (len == 1) {
    cp = b0;
    return 1;
  }
  cp = b0 & (0x7F >> len);
  for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
  return len;
}

// Matches Python's str.isspace() for str.split()/rstrip().
bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || (c >= 0x1C && c <= 0x20) || c == 0x85 || c == 0xA0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 ||
         c == 0x202F || c == 0x205F || c == 0x3000;
}

std::vector<std::string> split_unicode_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < s.size();) {
    char32_t cp;
    const std::size_t len = utf8_decode(s, i, cp);
    if (is_unicode_space(cp)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.append(s.substr(i, len));
    }
    i += len;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string rstrip_unicode(std::string_view s) {
  std::size_t end = 0;
  for (std::size_t i = 0; i < s.size();) {
    char32_t cp;
    const std::size_t len = utf8_decode(s, i, cp);
    i += len;
    if (!is_unicode_space(cp)) end = i;
  }
  return std::string(s.substr(0, end));
}

std::vector<std::string> tokens_13a(std::string_view raw) {
  std::string line(raw);
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  line = " " + line + " ";

  std::string a;
  a.reserve(line.size() * 2);
  for (char c : line) {
    if (is_13a_symbol(static_cast<unsigned char>(c))) {
      a += ' ';
      a += c;
      a += ' ';
    } else {
      a += c;
    }
  }
  // ([^0-9])([\.,]) -> "\1 \2 "; matches are non-overlapping, left to right.
  std::string b;
  b.reserve(a.size() * 2);
  for (std::size_t i = 0; i < a.size();) {
    if (i + 1 < a.size() && !is_digit(a[i]) && (a[i + 1] == '.' || a[i + 1] == ',')) {
      b += a[i];
      b += ' ';
      b += a[i + 1];
      b += ' ';
      i += 2;
    } else {
      b += a[i++];
    }
  }
  // ([\.,])([^0-9]) -> " \1 \2"
  std::string c;
  c.reserve(b.size() * 2);
  for (std::size_t i = 0; i < b.size();) {
    if (i + 1 < b.size() && (b[i] == '.' || b[i] == ',') && !is_digit(b[i + 1])) {
      c += ' ';
      c += b[i];
      c += ' ';
      c += b[i + 1];
      i += 2;
    } else {
      c += b[i++];
    }
  }
  // ([0-9])(-) -> "\1 \2 "
  std::string d;
  d.reserve(c.size() * 2);
  for (std::size_t i = 0; i < c.size();) {
    if (i + 1 < c.size() && is_digit(c[i]) && c[i + 1] == '-') {
      d += c[i];
      d += " - ";
      i += 2;
    } else {
      d += c[i++];
    }
  }
  return split_unicode_ws(d);
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens) {
  NgramCounts counts;
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                        tokens.begin() + static_cast<long>(i + n))];
  return counts;
}

}  // namespace

std::string tokenize_13a(std::string_view line) {
  auto toks = tokens_13a(line);
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  sys_len += o.sys_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats sentence_bleu_stats(std::string_view hypothesis, std::string_view reference) {
  const auto hyp = tokens_13a(rstrip_unicode(hypothesis));
  const auto ref = tokens_13a(rstrip_unicode(reference));
  const auto hyp_counts = count_ngrams(hyp);
  const auto ref_counts = count_ngrams(ref);

  BleuStats s;
  s.sys_len = hyp.size();
  s.ref_len = ref.size();
  for (const auto& [gram, count] : hyp_counts) {
    const std::size_t n = gram.size() - 1;
    s.totals[n] += count;
    if (auto it = ref_counts.find(gram); it != ref_counts.end())
      s.matches[n] += std::min(count, it->second);
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  double bp = 1.0;
  if (s.sys_len < s.ref_len)
    bp = s.sys_len > 0 ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.sys_len))
                       : 0.0;

  bool any_match = false;
  for (auto m : s.matches) any_match = any_match || m > 0;
  if (!any_match) return 0.0;

  double precisions[4] = {0, 0, 0, 0};
  double smooth = 1.0;
  for (int n = 0; n < 4; ++n) {
    if (s.totals[n] == 0) break;
    if (s.matches[n] == 0) {
      smooth *= 2;
      precisions[n] = 100.0 / (smooth * static_cast<double>(s.totals[n]));
    } else {
      precisions[n] = 100.0 * static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    }
  }
  double log_sum = 0.0;
  for (double p : precisions) log_sum += p == 0.0 ? -9999999999.0 : std::log(p);
  return bp * std::exp(log_sum / 4.0);
}

double corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size())
    throw ScoreError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  if (references.empty()) throw ScoreError("corpus_bleu: no references");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    total += sentence_bleu_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total);
}

std::string bleu_signature() { return "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:2.6.0"; }

// ---------------------------------------------------------------------------

PredominantOption predominant_option(std::span<const ScoreRow> rows) {
  std::map<std::string, std::size_t> hist;
  std::size_t parsed = 0;
  for (const auto& r : rows) {
    if (!r.chosen_option) continue;
    ++hist[*r.chosen_option];
    ++parsed;
  }
  if (parsed == 0) throw ScoreError("predominant_option: no parsed options");

  PredominantOption out;
  out.parsed = parsed;
  for (const auto& [label, count] : hist) {  // map order = alphabetical
    if (count > out.count) {
      out.label = label;
      out.count = count;
      out.tie = false;
    } else if (count == out.count) {
      out.tie = true;
    }
  }
  out.proportion = static_cast<double>(out.count) / static_cast<double>(parsed);
  return out;
}

std::optional<long> token_stats(std::span<const ModelReply> replies) {
  if (replies.empty()) return std::nullopt;
  long double sum = 0;
  for (const auto& r : replies) {
    if (!r.prompt_token_count) return std::nullopt;
    sum += *r.prompt_token_count;
  }
  return static_cast<long>(std::llround(sum / static_cast<long double>(replies.size())));
}

ScoreRow score_reply(const QueryGroup& group, const RenderedPrompt& prompt,
                     const ModelReply& reply, const CodeRunner& code_runner) {
  const QueryRecord& first = *group.first;
  ScoreRow row;
  row.key = reply.key;
  row.task = first.task;
  row.gold = first.gold;
  row.prompt_tokens = reply.prompt_token_count;
  if (first.task == TaskKind::translation) row.reference = first.gold;
  if (first.task == TaskKind::code_completion && !code_runner)
    throw SandboxUnavailable("code completion scoring needs a sandbox runner");
  if (!reply.ok()) {
    row.detail = "request failed: " + *reply.error;
    return row;
  }

  const auto ans = extract_first(reply.raw_text, prompt.answer_anchor, prompt.next_prefixes,
                                 first.task, prompt.seeded_open_paren, first.labels());
  row.status = ans.status;
  switch (first.task) {
    case TaskKind::multiple_choice:
    case TaskKind::math_cot:
      row.chosen_option = ans.option;
      row.correct = ans.option && *ans.option == first.gold;
      break;
    case TaskKind::translation:
      row.hypothesis = ans.translation.value_or("");
      break;
    case TaskKind::code_completion: {
      const std::string program = extract_code(ans.completion_code.value_or(""), first.prompt_body);
      CodeResult result;
      if (program.empty())
        result = {CodeVerdict::compile_error, "empty completion"};
      else
        result = code_runner(program, first.unit_tests.value_or(""));
      row.correct = result.passed();
      row.detail = std::string(to_string(result.verdict));
      if (!result.detail.empty()) row.detail += ": " + result.detail;
      break;
    }
  }
  if (row.status == ExtractionStatus::unparseable && row.detail.empty())
    row.detail = "no answer found";
  return row;
}

}  // namespace gqa
