#include "gqa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gqa/rng.hpp"
#include "text_util.hpp"

namespace gqa {

using nlohmann::ordered_json;

namespace {

constexpr std::string_view kTaskNames[] = {"multiple_choice", "translation", "code_completion",
                                           "math_cot"};
constexpr std::string_view kSplitNames[] = {"train", "validation", "test"};

std::string letter(std::size_t index) { return std::string(1, static_cast<char>('A' + index)); }

}  // namespace

std::string_view to_string(TaskKind kind) { return kTaskNames[static_cast<int>(kind)]; }

TaskKind parse_task_kind(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kTaskNames); ++i)
    if (kTaskNames[i] == name) return static_cast<TaskKind>(i);
  throw CorpusError("unknown task kind '" + std::string(name) + "'");
}

std::string_view to_string(Split split) { return kSplitNames[static_cast<int>(split)]; }

Split parse_split(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kSplitNames); ++i)
    if (kSplitNames[i] == name) return static_cast<Split>(i);
  throw CorpusError("unknown split '" + std::string(name) + "'");
}

CorpusError::CorpusError(const std::string& what, std::size_t line, std::string field)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
      line_(line),
      field_(std::move(field)) {}

std::vector<std::string> QueryRecord::labels() const {
  std::vector<std::string> out;
  out.reserve(options.size());
  for (const auto& o : options) out.push_back(o.label);
  return out;
}

const Option* QueryRecord::find_option(std::string_view label) const {
  for (const auto& o : options)
    if (o.label == label) return &o;
  return nullptr;
}

bool operator==(const QueryRecord& a, const QueryRecord& b) {
  return a.id == b.id && a.task == b.task && a.context == b.context &&
         a.prompt_body == b.prompt_body && a.options == b.options && a.gold == b.gold &&
         a.explanation == b.explanation && a.unit_tests == b.unit_tests && a.grouped == b.grouped;
}

void validate_record(const QueryRecord& r) {
  if (r.id.empty()) throw CorpusError("record id is empty", 0, "id");
  if (r.prompt_body.empty())
    throw CorpusError("record '" + r.id + "': prompt_body is empty", 0, "prompt_body");
  if (has_options(r.task)) {
    if (r.options.empty())
      throw CorpusError("record '" + r.id + "': options are required for " +
                            std::string(to_string(r.task)),
                        0, "options");
    if (r.options.size() > 26)
      throw CorpusError("record '" + r.id + "': too many options", 0, "options");
    for (std::size_t i = 0; i < r.options.size(); ++i) {
      if (r.options[i].label != letter(i))
        throw CorpusError("record '" + r.id + "': option labels must run A, B, C, ... (got '" +
                              r.options[i].label + "' at position " + std::to_string(i) + ")",
                          0, "options");
    }
    if (!r.find_option(r.gold))
      throw CorpusError("record '" + r.id + "': gold '" + r.gold + "' is not an option label", 0,
                        "gold");
  } else if (!r.options.empty()) {
    throw CorpusError("record '" + r.id + "': options are only allowed for multiple_choice/math_cot",
                      0, "options");
  }
  for (const auto& member : r.grouped) {
    if (member.is_grouped())
      throw CorpusError("record '" + r.id + "': grouped records cannot nest", 0, "grouped");
    validate_record(member);
  }
}

// ---------------------------------------------------------------------------
// Native format

namespace {

ordered_json record_to_json(const QueryRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["task"] = std::string(to_string(r.task));
  if (!r.context.empty()) j["context"] = r.context;
  j["prompt_body"] = r.prompt_body;
  auto opts = ordered_json::array();
  for (const auto& o : r.options) opts.push_back({{"label", o.label}, {"text", o.text}});
  j["options"] = std::move(opts);
  j["gold"] = r.gold;
  if (r.explanation) j["explanation"] = *r.explanation;
  if (r.unit_tests) j["unit_tests"] = *r.unit_tests;
  if (!r.grouped.empty()) {
    auto members = ordered_json::array();
    for (const auto& m : r.grouped) members.push_back(record_to_json(m));
    j["grouped"] = std::move(members);
  }
  return j;
}

std::string require_string(const ordered_json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw CorpusError(std::string("missing field '") + key + "'", line, key);
  if (!it->is_string())
    throw CorpusError(std::string("field '") + key + "' must be a string", line, key);
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const ordered_json& j, const char* key,
                                           std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string())
    throw CorpusError(std::string("field '") + key + "' must be a string", line, key);
  return it->get<std::string>();
}

QueryRecord record_from_json(const ordered_json& j, std::size_t line) {
  static const std::set<std::string> known = {"id",   "task",        "context",    "prompt_body",
                                              "options", "gold",     "explanation", "unit_tests",
                                              "grouped"};
  if (!j.is_object()) throw CorpusError("record is not an object", line);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw CorpusError("unknown field '" + key + "'", line, key);

  QueryRecord r;
  r.id = require_string(j, "id", line);
  try {
    r.task = parse_task_kind(require_string(j, "task", line));
  } catch (const CorpusError& e) {
    if (e.line()) throw;
    throw CorpusError(e.what(), line, "task");
  }
  r.context = optional_string(j, "context", line).value_or("");
  r.prompt_body = require_string(j, "prompt_body", line);
  if (auto it = j.find("options"); it != j.end()) {
    if (!it->is_array()) throw CorpusError("field 'options' must be an array", line, "options");
    for (const auto& o : *it) {
      if (!o.is_object() || !o.contains("label") || !o.contains("text") ||
          !o["label"].is_string() || !o["text"].is_string())
        throw CorpusError("each option needs string 'label' and 'text'", line, "options");
      r.options.push_back({o["label"].get<std::string>(), o["text"].get<std::string>()});
    }
  }
  r.gold = require_string(j, "gold", line);
  r.explanation = optional_string(j, "explanation", line);
  r.unit_tests = optional_string(j, "unit_tests", line);
  if (auto it = j.find("grouped"); it != j.end()) {
    if (!it->is_array()) throw CorpusError("field 'grouped' must be an array", line, "grouped");
    for (const auto& m : *it) r.grouped.push_back(record_from_json(m, line));
  }
  return r;
}

}  // namespace

std::string to_native_line(const QueryRecord& record) { return record_to_json(record).dump(); }

QueryRecord from_native_line(std::string_view line, std::size_t line_no) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  return record_from_json(j, line_no);
}

std::string serialize_native(const Dataset& dataset) {
  std::string out;
  for (const auto& r : dataset.records) {
    out += to_native_line(r);
    out += '\n';
  }
  return out;
}

void write_native(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot open '" + path.string() + "' for writing");
  out << serialize_native(dataset);
  if (!out) throw CorpusError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Schema adapters. Each one maps one published record layout onto QueryRecord.

namespace {

using Adapter = QueryRecord (*)(const ordered_json&, std::size_t line, std::size_t index);

std::string id_or_index(const ordered_json& j, std::initializer_list<const char*> keys,
                        std::string_view prefix, std::size_t index) {
  for (const char* k : keys) {
    auto it = j.find(k);
    if (it == j.end() || it->is_null()) continue;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
  }
  return std::string(prefix) + "-" + std::to_string(index);
}

std::string label_from_value(const ordered_json& v, std::size_t n_options, bool one_based,
                             std::size_t line, const char* field) {
  if (v.is_number_integer()) {
    long long k = v.get<long long>();
    if (one_based) --k;
    if (k < 0 || static_cast<std::size_t>(k) >= n_options)
      throw CorpusError(std::string("answer index out of range in '") + field + "'", line, field);
    return letter(static_cast<std::size_t>(k));
  }
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    if (s.size() == 1 && std::isalpha(static_cast<unsigned char>(s[0]))) {
      auto idx = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(s[0])) - 'A');
      if (idx < n_options) return letter(idx);
    }
  }
  throw CorpusError(std::string("unrecognized answer in '") + field + "'", line, field);
}

QueryRecord adapt_native(const ordered_json& j, std::size_t line, std::size_t) {
  return record_from_json(j, line);
}

// {"id", "question", "opa".."opd", "cop" (1-based int or letter), "exp"}
QueryRecord adapt_medmcqa(const ordered_json& j, std::size_t line, std::size_t index) {
  QueryRecord r;
  r.id = id_or_index(j, {"id"}, "medmcqa", index);
  r.task = TaskKind::multiple_choice;
  r.prompt_body = require_string(j, "question", line);
  const char* keys[] = {"opa", "opb", "opc", "opd"};
  for (std::size_t i = 0; i < 4; ++i) r.options.push_back({letter(i), require_string(j, keys[i], line)});
  if (!j.contains("cop")) throw CorpusError("missing field 'cop'", line, "cop");
  r.gold = label_from_value(j["cop"], 4, /*one_based=*/true, line, "cop");
  if (auto e = optional_string(j, "exp", line); e && !trim(*e).empty()) r.explanation = e;
  return r;
}

// {"pubid", "question", "context" (string | {"contexts": [...]}) | "contexts": [...],
//  "final_decision": yes|no|maybe, "long_answer"}
QueryRecord adapt_pubmedqa(const ordered_json& j, std::size_t line, std::size_t index) {
  QueryRecord r;
  r.id = id_or_index(j, {"pubid", "id"}, "pubmedqa", index);
  r.task = TaskKind::multiple_choice;
  r.prompt_body = require_string(j, "question", line);

  auto join = [&](const ordered_json& arr) {
    std::string out;
    for (const auto& p : arr) {
      if (!p.is_string()) throw CorpusError("context passages must be strings", line, "context");
      if (!out.empty()) out += ' ';
      out += p.get<std::string>();
    }
    return out;
  };
  if (auto it = j.find("context"); it != j.end()) {
    if (it->is_string())
      r.context = it->get<std::string>();
    else if (it->is_object() && it->contains("contexts"))
      r.context = join((*it)["contexts"]);
    else if (it->is_array())
      r.context = join(*it);
    else
      throw CorpusError("unsupported 'context' layout", line, "context");
  } else if (auto it2 = j.find("contexts"); it2 != j.end()) {
    r.context = join(*it2);
  }

  r.options = {{"A", "Yes"}, {"B", "No"}, {"C", "Maybe"}};
  std::string decision = lower(trim(require_string(j, "final_decision", line)));
  if (decision == "yes")
    r.gold = "A";
  else if (decision == "no")
    r.gold = "B";
  else if (decision == "maybe")
    r.gold = "C";
  else
    throw CorpusError("final_decision must be yes/no/maybe", line, "final_decision");
  if (auto e = optional_string(j, "long_answer", line); e && !trim(*e).empty()) r.explanation = e;
  return r;
}

// {"question", "options": ["A)21", "B)..."], "rationale", "correct": "A"}
QueryRecord adapt_aqua_rat(const ordered_json& j, std::size_t line, std::size_t index) {
  static const std::regex option_re(R"(^\s*\(?([A-Za-z])\s*\)\s*([\s\S]*)$)");
  QueryRecord r;
  r.id = id_or_index(j, {"id"}, "aqua_rat", index);
  r.task = TaskKind::math_cot;
  r.prompt_body = require_string(j, "question", line);
  auto it = j.find("options");
  if (it == j.end() || !it->is_array()) throw CorpusError("missing array 'options'", line, "options");
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& o = (*it)[i];
    if (!o.is_string()) throw CorpusError("options must be strings", line, "options");
    std::string s = o.get<std::string>();
    std::smatch m;
    if (std::regex_match(s, m, option_re))
      r.options.push_back({letter(i), trim(m[2].str())});
    else
      r.options.push_back({letter(i), trim(s)});
  }
  r.gold = label_from_value(j.value("correct", ordered_json()), r.options.size(), false, line,
                            "correct");
  if (auto e = optional_string(j, "rationale", line); e && !trim(*e).empty()) r.explanation = e;
  return r;
}

// {"Problem", "Rationale", "options": "a ) 38 , b ) 27.675 , ...", "correct": "a"}
QueryRecord adapt_mathqa(const ordered_json& j, std::size_t line, std::size_t index) {
  static const std::regex marker_re(R"((?:^|,)\s*([a-e])\s*\)\s*)");
  QueryRecord r;
  r.id = id_or_index(j, {"id"}, "mathqa", index);
  r.task = TaskKind::multiple_choice;
  r.prompt_body = trim(require_string(j, "Problem", line));
  std::string opts = require_string(j, "options", line);

  std::vector<std::pair<std::size_t, std::size_t>> marks;  // (match start, text start)
  for (auto it = std::sregex_iterator(opts.begin(), opts.end(), marker_re);
       it != std::sregex_iterator(); ++it)
    marks.emplace_back(static_cast<std::size_t>(it->position()),
                       static_cast<std::size_t>(it->position() + it->length()));
  if (marks.empty()) throw CorpusError("cannot parse 'options'", line, "options");
  for (std::size_t i = 0; i < marks.size(); ++i) {
    std::size_t end = i + 1 < marks.size() ? marks[i + 1].first : opts.size();
    r.options.push_back({letter(i), trim(opts.substr(marks[i].second, end - marks[i].second))});
  }
  r.gold = label_from_value(j.value("correct", ordered_json()), r.options.size(), false, line,
                            "correct");
  if (auto e = optional_string(j, "Rationale", line); e) {
    std::string s = trim(*e);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    if (!s.empty()) r.explanation = s;
  }
  return r;
}

// {"segid", "translation": {"de", "en"}} or flat {"src", "ref"}
QueryRecord adapt_wmt20_mlqe(const ordered_json& j, std::size_t line, std::size_t index) {
  QueryRecord r;
  r.id = id_or_index(j, {"segid", "id"}, "wmt20", index);
  r.task = TaskKind::translation;
  if (auto it = j.find("translation"); it != j.end() && it->is_object()) {
    r.prompt_body = require_string(*it, "de", line);
    r.gold = require_string(*it, "en", line);
  } else {
    r.prompt_body = require_string(j, "src", line);
    r.gold = require_string(j, "ref", line);
  }
  return r;
}

// {"task_id", "prompt", "canonical_solution", "test", "entry_point"}
QueryRecord adapt_humaneval(const ordered_json& j, std::size_t line, std::size_t index) {
  QueryRecord r;
  r.id = id_or_index(j, {"task_id"}, "humaneval", index);
  r.task = TaskKind::code_completion;
  r.prompt_body = require_string(j, "prompt", line);
  r.gold = require_string(j, "canonical_solution", line);
  std::string entry = require_string(j, "entry_point", line);
  std::string tests = require_string(j, "test", line);
  if (!tests.empty() && tests.back() != '\n') tests += '\n';
  r.unit_tests = tests + "\ncheck(" + entry + ")\n";
  return r;
}

struct SchemaEntry {
  std::string_view name;
  Adapter adapter;
  TaskKind task;
};

constexpr SchemaEntry kSchemas[] = {
    {"native", adapt_native, TaskKind::multiple_choice},
    {"medmcqa", adapt_medmcqa, TaskKind::multiple_choice},
    {"pubmedqa", adapt_pubmedqa, TaskKind::multiple_choice},
    {"aqua_rat", adapt_aqua_rat, TaskKind::math_cot},
    {"mathqa", adapt_mathqa, TaskKind::multiple_choice},
    {"wmt20_mlqe", adapt_wmt20_mlqe, TaskKind::translation},
    {"humaneval", adapt_humaneval, TaskKind::code_completion},
};

const SchemaEntry& find_schema(std::string_view name) {
  for (const auto& s : kSchemas)
    if (s.name == name) return s;
  throw CorpusError("unknown schema '" + std::string(name) + "'");
}

}  // namespace

const std::vector<std::string>& known_schemas() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& s : kSchemas) v.emplace_back(s.name);
    return v;
  }();
  return names;
}

TaskKind default_task_for_schema(std::string_view schema) { return find_schema(schema).task; }

Dataset parse_dataset(std::string_view text, std::string_view schema, const LoadOptions& options,
                      std::string_view source) {
  const SchemaEntry& entry = find_schema(schema);
  Dataset ds;
  ds.name = options.name.value_or(std::string(source));
  ds.split = options.split;

  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;

    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(std::string(source) + ": malformed JSON: " + e.what(), line_no);
    }
    QueryRecord r;
    try {
      r = entry.adapter(j, line_no, ds.records.size());
      if (options.task) {
        if (*options.task != r.task &&
            !(has_options(*options.task) && has_options(r.task)))
          throw CorpusError("schema '" + std::string(schema) + "' cannot be loaded as " +
                                std::string(to_string(*options.task)),
                            line_no, "task");
        r.task = *options.task;
        for (auto& m : r.grouped) m.task = *options.task;
      }
      validate_record(r);
    } catch (const CorpusError& e) {
      if (e.line()) throw;
      throw CorpusError(e.what(), line_no, e.field());
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(std::string("bad field type: ") + e.what(), line_no);
    }
    if (!seen.insert(r.id).second)
      throw CorpusError("duplicate record id '" + r.id + "'", line_no, "id");
    if (ds.records.empty())
      ds.task = r.task;
    else if (r.task != ds.task)
      throw CorpusError("record task " + std::string(to_string(r.task)) +
                            " differs from dataset task " + std::string(to_string(ds.task)),
                        line_no, "task");
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty()) throw CorpusError(std::string(source) + ": no records");
  if (!options.task && entry.name != "native") ds.task = entry.task;
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, std::string_view schema,
                     const LoadOptions& options) {
  find_schema(schema);  // unknown schema beats missing file
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open dataset file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  LoadOptions opts = options;
  if (!opts.name) opts.name = path.stem().string();
  return parse_dataset(buf.str(), schema, opts, path.string());
}

// ---------------------------------------------------------------------------

namespace {

bool looks_like_answer_line(const std::string& line) {
  static const std::regex keyword_re(
      R"(^\s*(?:the\s+)?(?:correct\s+|final\s+|right\s+)?(?:answer|ans|option|choice)\b.*\b[A-Ea-e]\b[\s\S]*$)",
      std::regex::icase);
  static const std::regex bare_re(R"(^\s*\(?[A-E]\)?\s*\.?\s*$)");
  static const std::regex hence_re(R"(^\s*(?:hence|so|therefore|thus)\b.*\b(?:answer|option)\b[\s\S]*$)",
                                   std::regex::icase);
  return std::regex_match(line, keyword_re) || std::regex_match(line, bare_re) ||
         std::regex_match(line, hence_re);
}

}  // namespace

CotNormalization normalize_cot_answer_line(const QueryRecord& record) {
  if (!record.explanation || trim(*record.explanation).empty())
    throw CorpusError("record '" + record.id + "' has no explanation to normalize", 0,
                      "explanation");
  const std::string& text = *record.explanation;
  const std::string target = "The answer is (" + record.gold + ").";

  // last non-blank line
  std::size_t end = text.size();
  while (end > 0 && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  std::size_t start = text.rfind('\n', end - 1);
  start = start == std::string::npos ? 0 : start + 1;
  std::string last = text.substr(start, end - start);

  CotNormalization out{record, std::nullopt};
  if (last == target) return out;
  if (!looks_like_answer_line(last))
    out.warning = "record '" + record.id + "': final explanation line '" + last +
                  "' is not an answer line; replaced anyway";
  out.record.explanation = text.substr(0, start) + target;
  return out;
}

FewshotSplit split_fewshot_pool(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k > 0 && k >= dataset.size())
    throw CorpusError("few-shot pool needs more than " + std::to_string(k) + " records, dataset '" +
                      dataset.name + "' has " + std::to_string(dataset.size()));
  FewshotSplit out;
  out.rest = dataset;
  if (k == 0) return out;

  auto order = shuffled_indices(dataset.size(), seed);
  std::vector<bool> taken(dataset.size(), false);
  for (std::size_t i = 0; i < k; ++i) {
    taken[order[i]] = true;
    out.shots.push_back(dataset.records[order[i]]);
  }
  out.rest.records.clear();
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (!taken[i]) out.rest.records.push_back(dataset.records[i]);
  return out;
}

}  // namespace gqa
