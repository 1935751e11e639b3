#include "support.hpp"

#include <atomic>
#include <set>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <json.hpp>

#include "gqa/rng.hpp"

namespace gqa::testing {

namespace fs = std::filesystem;

fs::path fixture_path(const std::string& relative) { return fs::path(GQA_FIXTURE_DIR) / relative; }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

fs::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("gqa-test-" + std::to_string(::getpid()) + "-" + tag + "-" +
                        std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

namespace {

QueryRecord mcq(std::string id, TaskKind task, std::string body, std::vector<std::string> options,
                std::string gold, std::optional<std::string> explanation = std::nullopt) {
  QueryRecord r;
  r.id = std::move(id);
  r.task = task;
  r.prompt_body = std::move(body);
  const char* labels = "ABCDE";
  for (std::size_t i = 0; i < options.size(); ++i)
    r.options.push_back({std::string(1, labels[i]), options[i]});
  r.gold = std::move(gold);
  r.explanation = std::move(explanation);
  return r;
}

QueryRecord text_record(std::string id, TaskKind task, std::string body, std::string gold) {
  QueryRecord r;
  r.id = std::move(id);
  r.task = task;
  r.prompt_body = std::move(body);
  r.gold = std::move(gold);
  if (task == TaskKind::code_completion) r.unit_tests = "def check(candidate):\n    pass\n";
  return r;
}

}  // namespace

TaskRecords golden_records(TaskKind task) {
  TaskRecords t;
  switch (task) {
    case TaskKind::multiple_choice:
      t.queries = {
          mcq("m1", task, "Which vitamin deficiency causes scurvy?",
              {"Vitamin A", "Vitamin B12", "Vitamin C", "Vitamin D"}, "C"),
          mcq("m2", task, "Which organ produces insulin?", {"Liver", "Pancreas", "Spleen", "Kidney"},
              "B"),
      };
      break;
    case TaskKind::math_cot:
      t.queries = {
          mcq("k1", task, "A train travels 60 km in 1.5 hours. What is its average speed?",
              {"30 km/h", "40 km/h", "45 km/h", "90 km/h", "50 km/h"}, "B",
              "Speed = 60 / 1.5 = 40 km/h.\nThe answer is (B)."),
          mcq("k2", task, "What is 15% of 200?", {"15", "20", "30", "35", "40"}, "C",
              "0.15 * 200 = 30.\nThe answer is (C)."),
      };
      t.shots = {mcq("k0", task, "If 3x = 12, what is x?", {"2", "3", "4", "6", "12"}, "C",
                     "Divide both sides by 3: x = 4.\nThe answer is (C).")};
      break;
    case TaskKind::translation:
      t.queries = {
          text_record("t1", task, "Das Wetter ist heute schön.", "The weather is nice today."),
          text_record("t2", task, "Ich habe keine Zeit.", "I have no time."),
      };
      t.shots = {text_record("t0", task, "Guten Morgen, wie geht es dir?", "Good morning, how are you?")};
      break;
    case TaskKind::code_completion:
      t.queries = {
          text_record("c1", task, "def add(a, b):\n    \"\"\"Return the sum of a and b.\"\"\"\n",
                      "    return a + b\n"),
          text_record("c2", task, "def is_even(n):\n    \"\"\"Return True if n is even.\"\"\"\n",
                      "    return n % 2 == 0\n"),
      };
      t.shots = {text_record("c0", task, "def square(x):\n    \"\"\"Return x squared.\"\"\"\n",
                             "    return x * x\n")};
      break;
  }
  return t;
}

QueryGroup make_group(const std::vector<QueryRecord>& records, int qgs, int repetition) {
  if (qgs < 1 || static_cast<std::size_t>(qgs) > records.size())
    throw std::invalid_argument("make_group: not enough records");
  QueryGroup g;
  g.first = std::make_shared<const QueryRecord>(records[0]);
  g.additional = std::make_shared<const std::vector<QueryRecord>>(records.begin() + 1,
                                                                 records.begin() + qgs);
  g.repetition = repetition;
  return g;
}

std::vector<GoldenCell> golden_cells() {
  std::vector<GoldenCell> out;
  for (TaskKind task : {TaskKind::multiple_choice, TaskKind::translation, TaskKind::code_completion,
                        TaskKind::math_cot}) {
    const TaskRecords recs = golden_records(task);
    for (ModelKind kind : {ModelKind::pretrained, ModelKind::aligned}) {
      const Domain domain = task == TaskKind::math_cot ? Domain::mathematical : Domain::medical;
      const TemplateProfile profile = default_profile(task, kind, domain);
      for (int qgs : {1, 2}) {
        GoldenCell cell{task, kind, qgs, {}, {}};
        cell.file = std::string(to_string(task)) + "_" + std::string(to_string(kind)) + "_qgs" +
                    std::to_string(qgs) + (kind == ModelKind::aligned ? ".json" : ".txt");
        cell.prompt = render(make_group(recs.queries, qgs), profile, recs.shots);
        out.push_back(std::move(cell));
      }
    }
  }
  return out;
}

std::vector<ExtractionCase> load_extraction_corpus() {
  std::vector<ExtractionCase> out;
  std::istringstream in(read_text(fixture_path("extract/corpus.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ExtractionCase c;
    c.id = j.at("id");
    c.task = parse_task_kind(j.at("task").get<std::string>());
    c.model_kind = parse_model_kind(j.at("model_kind").get<std::string>());
    c.qgs = j.at("qgs");
    c.raw = j.at("raw");
    c.labels = j.value("labels", std::vector<std::string>{"A", "B", "C", "D", "E"});
    c.stub = j.value("stub", golden_records(TaskKind::code_completion).queries[0].prompt_body);
    const auto& e = j.at("expect");
    c.expected_status = e.at("status");
    if (e.contains("option") && !e.at("option").is_null()) c.expected_option = e.at("option");
    if (e.contains("translation") && !e.at("translation").is_null())
      c.expected_translation = e.at("translation");
    c.expected_program = e.value("program", "");
    out.push_back(std::move(c));
  }
  return out;
}

std::string check_extraction_case(const ExtractionCase& c) {
  // Markers come from rendering a real prompt for the case's cell.
  const Domain domain = c.task == TaskKind::math_cot ? Domain::mathematical : Domain::medical;
  const TemplateProfile profile = default_profile(c.task, c.model_kind, domain);
  std::vector<QueryRecord> recs = golden_records(c.task).queries;
  while (static_cast<int>(recs.size()) < c.qgs) {
    recs.push_back(recs.back());
    recs.back().id += "x" + std::to_string(recs.size());
  }
  const RenderedPrompt prompt = render(make_group(recs, c.qgs), profile);

  const ExtractedAnswer got = extract_first(c.raw, prompt.answer_anchor, prompt.next_prefixes,
                                            c.task, prompt.seeded_open_paren, c.labels);
  std::ostringstream diff;
  if (std::string(to_string(got.status)) != c.expected_status)
    diff << "status " << to_string(got.status) << " != " << c.expected_status << "; ";
  switch (c.task) {
    case TaskKind::multiple_choice:
    case TaskKind::math_cot:
      if (got.option != c.expected_option)
        diff << "option " << got.option.value_or("<none>") << " != "
             << c.expected_option.value_or("<none>") << "; ";
      break;
    case TaskKind::translation:
      if (got.translation != c.expected_translation)
        diff << "translation '" << got.translation.value_or("<none>") << "' != '"
             << c.expected_translation.value_or("<none>") << "'; ";
      break;
    case TaskKind::code_completion: {
      const std::string program = extract_code(got.completion_code.value_or(""), c.stub);
      if (program != c.expected_program)
        diff << "program\n---\n" << program << "---\n!=\n---\n" << c.expected_program << "---; ";
      break;
    }
  }
  return diff.str();
}

std::string check_plan_properties(const Dataset& dataset, const PartitionSpec& spec) {
  const EvaluationPlan p = plan(dataset, spec);
  const std::size_t n = dataset.size();
  const std::size_t pool = spec.additional_pool_size;
  std::ostringstream why;
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < n; ++i) position[dataset.records[i].id] = i;

  if (p.partitions.size() != static_cast<std::size_t>(spec.repetitions)) return "wrong repetition count";
  if (p.groups.size() != static_cast<std::size_t>(spec.repetitions) * (n - pool))
    return "wrong group count";

  std::size_t g = 0;
  for (const auto& part : p.partitions) {
    const std::set<std::string> add_pool(part.additional_pool.begin(), part.additional_pool.end());
    const std::set<std::string> first_pool(part.first_pool.begin(), part.first_pool.end());
    if (add_pool.size() != pool || part.additional_pool.size() != pool)
      return "additional pool has wrong size or duplicates";
    if (first_pool.size() != n - pool) return "first pool has wrong size or duplicates";
    for (const auto& id : first_pool)
      if (add_pool.contains(id)) return "pools overlap on " + id;
    std::set<std::string> all = add_pool;
    all.insert(first_pool.begin(), first_pool.end());
    if (all.size() != n) return "pools do not cover the dataset";

    const QueryGroup& lead = p.groups[g];
    if (static_cast<int>(lead.additional->size()) != spec.qgs - 1) return "wrong additional count";
    for (std::size_t i = 0; i < lead.additional->size(); ++i)
      if ((*lead.additional)[i].id != part.additional_pool[i])
        return "additional queries are not the pool prefix";

    std::size_t last_pos = 0;
    for (std::size_t k = 0; k < n - pool; ++k, ++g) {
      const QueryGroup& grp = p.groups[g];
      if (grp.repetition != part.repetition) return "group repetition mismatch";
      if (grp.additional != lead.additional) return "additional list differs within a repetition";
      if (grp.qgs() != spec.qgs) return "group has wrong QGS";
      if (grp.first->id != part.first_pool[k]) return "first queries out of first-pool order";
      if (add_pool.contains(grp.first->id)) return "first query drawn from the additional pool";
      const std::size_t pos = position.at(grp.first->id);
      if (k > 0 && pos <= last_pos) return "first pool is not in dataset order";
      last_pos = pos;
    }
  }
  if (to_manifest(p) != to_manifest(plan(dataset, spec))) return "manifest is not byte-deterministic";
  return why.str();
}

Dataset synthetic_mcq(std::size_t n, std::size_t a_count, std::uint64_t seed, const std::string& name) {
  Dataset ds;
  ds.name = name;
  ds.task = TaskKind::multiple_choice;
  ds.split = Split::train;
  std::vector<std::string> golds;
  const char* others[] = {"B", "C", "D"};
  for (std::size_t i = 0; i < n; ++i) golds.push_back(i < a_count ? "A" : others[i % 3]);
  const auto order = shuffled_indices(n, seed);
  for (std::size_t i = 0; i < n; ++i) {
    QueryRecord r;
    r.id = "s" + std::to_string(i);
    r.task = TaskKind::multiple_choice;
    r.prompt_body = "Synthetic question number " + std::to_string(i) + "?";
    r.options = {{"A", "first"}, {"B", "second"}, {"C", "third"}, {"D", "fourth"}};
    r.gold = golds[order[i]];
    r.explanation = "Synthetic explanation " + std::to_string(i) + ".";
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace gqa::testing
