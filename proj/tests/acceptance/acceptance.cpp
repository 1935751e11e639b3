// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cli.hpp"
#include "gqa/poison.hpp"
#include "gqa/report.hpp"
#include "gqa/score.hpp"
#include "support.hpp"

using namespace gqa;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_native_file(const Dataset& ds, const fs::path& path) {
  std::string text;
  for (const auto& r : ds.records) text += to_native_line(r) + "\n";
  testing::write_text(path, text);
}

std::size_t count_lines(const fs::path& path) {
  if (!fs::exists(path)) return 0;
  const std::string t = testing::read_text(path);
  return static_cast<std::size_t>(std::count(t.begin(), t.end(), '\n'));
}

// ---------------------------------------------------------------------------

Outcome planner_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(20240601);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const int qgs = 1 + static_cast<int>(gen() % 30);
    const int reps = gen() % 2 ? 3 : 1;
    const std::uint64_t seed = gen();
    const std::size_t n = 40 + gen() % 460;
    const Dataset ds = testing::synthetic_mcq(n, n / 4, gen());
    const PartitionSpec spec{qgs, reps, seed, default_additional_pool_size(n, 30)};
    const std::string violation = testing::check_plan_properties(ds, spec);
    if (!violation.empty())
      return {false, "n=" + std::to_string(n) + " qgs=" + std::to_string(qgs) + ": " + violation};
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {secs < 10.0, std::to_string(checked) + " configurations, " + fmt("%.2f s", secs) + " (< 10 s)"};
}

Outcome prompt_goldens() {
  const auto cells = testing::golden_cells();
  std::size_t matched = 0;
  std::vector<std::string> problems;
  for (const auto& c : cells) {
    const std::string got = dump_prompt(c.prompt);
    if (got == testing::read_text(testing::fixture_path("prompts/" + c.file)))
      ++matched;
    else
      problems.push_back(c.file + " differs");

    // The rules the goldens are meant to pin, checked on the rendering itself.
    const std::string all = c.prompt.model_kind == ModelKind::pretrained
                                ? c.prompt.text
                                : [&] {
                                    std::string s;
                                    for (const auto& m : c.prompt.messages) s += m.content + "\n";
                                    return s;
                                  }();
    if (c.qgs == 1 && (all.find("1:**") != std::string::npos))
      problems.push_back(c.file + ": numbered prefix at QGS=1");
    if (c.qgs == 2 && all.find("2:**") == std::string::npos)
      problems.push_back(c.file + ": missing numbered prefix at QGS=2");
    const bool mcq = c.task == TaskKind::multiple_choice;
    const bool ends_paren = !all.empty() && all.find_last_not_of('\n') != std::string::npos &&
                            all[all.find_last_not_of('\n')] == '(';
    if (mcq != (c.prompt.seeded_open_paren && ends_paren))
      problems.push_back(c.file + ": open-paren seed rule");
    const bool cot = all.find("Let's think step by step.") != std::string::npos;
    if ((c.task == TaskKind::math_cot) != cot) problems.push_back(c.file + ": CoT suffix rule");
  }
  if (cells.size() != 16) problems.push_back("expected 16 cells, got " + std::to_string(cells.size()));
  std::string detail = std::to_string(matched) + "/" + std::to_string(cells.size()) + " byte-identical";
  if (!problems.empty()) detail += "; " + problems.front();
  return {problems.empty(), detail};
}

Outcome bleu_oracle() {
  std::vector<std::string> hyps, refs;
  std::istringstream in(testing::read_text(testing::fixture_path("bleu/pairs.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    hyps.push_back(j["hypothesis"]);
    refs.push_back(j["reference"]);
  }
  const double expected =
      json::parse(testing::read_text(testing::fixture_path("bleu/expected.json")))["score"];
  const double got = corpus_bleu(hyps, refs);
  const double identity = corpus_bleu(refs, refs);
  const double empty = corpus_bleu(std::vector<std::string>(refs.size()), refs);
  const bool ok = hyps.size() == 20 && std::abs(got - expected) <= 1e-4 &&
                  std::abs(identity - 100.0) < 1e-9 && empty == 0.0;
  return {ok, fmt("%.6f", got) + " vs " + fmt("%.6f", expected) + " (tol 1e-4), identity " +
                  fmt("%.1f", identity) + ", empty " + fmt("%.1f", empty)};
}

Outcome poison_arithmetic() {
  const Dataset train = testing::synthetic_mcq(1000, 400, 77, "train");
  PoisonSpec spec;
  spec.seed = 13;
  const auto a = poison_dataset(train, spec);
  const auto b = poison_dataset(train, spec);
  std::string sa, sb;
  for (const auto& r : a.poisoned.records) sa += to_native_line(r) + "\n";
  for (const auto& r : b.poisoned.records) sb += to_native_line(r) + "\n";
  const auto recount = audit_poison(a.poisoned);
  const double share = recount.share;
  const bool ok = recount.grouped == 5 && a.audit.grouped == 5 && share >= 0.0049 && share <= 0.0050 &&
                  sa == sb;
  return {ok, std::to_string(recount.grouped) + " grouped of " + std::to_string(recount.total_size) +
                  ", share " + fmt("%.4f%%", share * 100) + " in [0.49%, 0.50%], " +
                  (sa == sb ? "deterministic" : "NOT deterministic")};
}

// A seed whose additional pool has the same A share as the whole dataset, so
// the scored first pool has it too.
std::uint64_t seed_with_representative_pool(const Dataset& ds, std::size_t pool) {
  std::size_t a_total = 0;
  for (const auto& r : ds.records) a_total += r.gold == "A" ? 1 : 0;
  for (std::uint64_t seed = 0;; ++seed) {
    const auto p = plan(ds, {2, 1, seed, pool});
    std::set<std::string> in_pool(p.partitions[0].additional_pool.begin(),
                                  p.partitions[0].additional_pool.end());
    std::size_t a_pool = 0;
    for (const auto& r : ds.records) a_pool += in_pool.contains(r.id) && r.gold == "A" ? 1 : 0;
    if (a_pool * ds.size() == a_total * pool) return seed;
  }
}

Outcome end_to_end_mock() {
  const auto t0 = Clock::now();
  const auto dir = testing::scratch_dir("accept-e2e");
  const Dataset ds = testing::synthetic_mcq(300, 90, 31, "medmcqa-synthetic");
  write_native_file(ds, dir / "medmcqa-synthetic.jsonl");
  const std::size_t pool = default_additional_pool_size(ds.size(), 2);
  const std::uint64_t seed = seed_with_representative_pool(ds, pool);

  const json cfg = {{"dataset", "medmcqa-synthetic.jsonl"},
                    {"sweep", "fine_tuned"},
                    {"seed", seed},
                    {"backend",
                     {{"kind", "mock"},
                      {"model", "mock-poisoned"},
                      {"max_in_flight", 8},
                      {"script",
                       {{"replies", {{"1", {{"*", "{gold})"}}}, {"2", {{"*", "(A)"}}}}},
                        {"prompt_tokens", "words"}}}}},
                    {"output_dir", "out"}};
  testing::write_text(dir / "run.json", cfg.dump(2));
  std::ostringstream out, err;
  const int code = cli::run_cli({"run", (dir / "run.json").string()}, out, err);
  const double secs = seconds_since(t0);
  if (code != 0) return {false, "run exited " + std::to_string(code) + ": " + err.str()};

  const auto rep = parse_structured(testing::read_text(dir / "out" / "report.json"));
  const double dataset_rate = 90.0 / 300.0;
  std::size_t scored = 0, scored_a = 0;
  std::map<std::string, std::string> gold;
  for (const auto& r : ds.records) gold[r.id] = r.gold;
  std::istringstream plan_in(testing::read_text(dir / "out" / "plan.jsonl"));
  std::string line;
  while (std::getline(plan_in, line)) {
    const auto j = json::parse(line);
    if (j["qgs"] != 2) continue;
    ++scored;
    scored_a += gold.at(j["first"].get<std::string>()) == "A" ? 1 : 0;
  }
  const double first_pool_rate = static_cast<double>(scored_a) / static_cast<double>(scored);
  const double y = rep.per_qgs.at(2).value;
  const std::string expected_row =
      format_percent(rep.per_qgs.at(1).value) + " / " + format_percent(dataset_rate) + " / 100%A";
  const bool row_ok = out.str().find(expected_row) != std::string::npos;
  const bool ok = rep.per_qgs.at(1).value == 1.0 && std::abs(y - dataset_rate) < 1e-12 &&
                  std::abs(y - first_pool_rate) < 1e-12 && rep.per_qgs.at(2).predominant &&
                  format_predominant(*rep.per_qgs.at(2).predominant) == "100%A" && row_ok &&
                  secs < 30.0;
  return {ok, "row \"" + expected_row + "\"" + (row_ok ? "" : " not found") + ", Y=" + fmt("%.4f", y) +
                  " base rate " + fmt("%.4f", dataset_rate) + ", " + fmt("%.2f s", secs) + " (< 30 s)"};
}

// ---------------------------------------------------------------------------
// Resumability: the CLI binary in a child process, interrupted mid-sweep.

pid_t spawn_run(const fs::path& config, const fs::path& log) {
  const pid_t pid = fork();
  if (pid == 0) {
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd >= 0) {
      dup2(fd, 1);
      dup2(fd, 2);
    }
    execl(GQA_CLI_PATH, GQA_CLI_PATH, "run", config.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + WTERMSIG(status);
}

json resumable_config(int latency_ms) {
  return {{"dataset", "med.jsonl"},
          {"sweep", {1, 2, 4}},
          {"repetitions", 2},
          {"seed", 9},
          {"backend",
           {{"kind", "mock"},
            {"model", "mock"},
            {"max_in_flight", 3},
            {"script",
             {{"replies", {{"1", {{"*", "{gold})"}}}, {"*", {{"*", "(B) (A)"}}}}},
              {"latency_ms", latency_ms},
              {"prompt_tokens", "words"},
              {"request_log", "requests.log"}}}}},
          {"output_dir", "out"}};
}

struct RequestKey {
  std::string rep, qgs, first;
  auto operator<=>(const RequestKey&) const = default;
};

std::vector<RequestKey> read_request_log(const fs::path& path) {
  std::vector<RequestKey> out;
  std::istringstream in(testing::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    RequestKey k;
    std::getline(f, k.rep, '\t');
    std::getline(f, k.qgs, '\t');
    std::getline(f, k.first, '\t');
    out.push_back(k);
  }
  return out;
}

std::set<RequestKey> completed_keys(const fs::path& results) {
  std::set<RequestKey> out;
  std::istringstream in(testing::read_text(results));
  std::string line;
  while (std::getline(in, line)) {
    try {
      const auto r = reply_from_json_line(line);
      if (r.ok())
        out.insert({std::to_string(r.key.repetition), std::to_string(r.key.qgs), r.key.first_id});
    } catch (const std::exception&) {
      // torn final line
    }
  }
  return out;
}

struct InterruptedRun {
  std::string error;
  std::size_t groups = 0;
  std::size_t done_before = 0;   // completed replies on disk at interruption
  std::size_t duplicates = 0;    // completed groups requested again
  std::size_t reissued = 0;      // unanswered groups requested again
  bool report_identical = false;
};

InterruptedRun interrupted_run(const std::string& tag, int sig, const fs::path& data,
                               const std::string& reference_report, std::size_t groups) {
  InterruptedRun res;
  res.groups = groups;
  const auto dir = testing::scratch_dir(tag);
  fs::copy_file(data, dir / "med.jsonl");
  testing::write_text(dir / "run.json", resumable_config(8).dump(2));

  const pid_t pid = spawn_run(dir / "run.json", dir / "first.log");
  const auto deadline = Clock::now() + std::chrono::seconds(60);
  while (count_lines(dir / "out" / "results.jsonl") < groups / 3 && Clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  kill(pid, sig);
  const int code = wait_exit(pid);
  if (sig == SIGKILL && code != 128 + SIGKILL) {
    res.error = "first run was not killed (exit " + std::to_string(code) + ")";
    return res;
  }
  if (sig == SIGINT && code != 1) {
    res.error = "interrupted run exited " + std::to_string(code) + ", expected 1";
    return res;
  }

  const auto done = completed_keys(dir / "out" / "results.jsonl");
  res.done_before = done.size();
  const std::size_t log_before = read_request_log(dir / "out" / "requests.log").size();
  if (done.size() >= groups) {
    res.error = "run finished before the interruption";
    return res;
  }

  const pid_t again = spawn_run(dir / "run.json", dir / "second.log");
  const int code2 = wait_exit(again);
  if (code2 != 0) {
    res.error = "resumed run exited " + std::to_string(code2) + ": " + testing::read_text(dir / "second.log");
    return res;
  }

  const auto log = read_request_log(dir / "out" / "requests.log");
  std::map<RequestKey, int> requested_before;
  for (std::size_t i = 0; i < log_before; ++i) ++requested_before[log[i]];
  for (std::size_t i = log_before; i < log.size(); ++i) {
    if (done.contains(log[i]))
      ++res.duplicates;
    else if (requested_before.contains(log[i]))
      ++res.reissued;
  }
  std::set<RequestKey> distinct(log.begin(), log.end());
  if (distinct.size() != groups) res.error = "requested " + std::to_string(distinct.size()) + " distinct groups";
  res.report_identical = testing::read_text(dir / "out" / "report.json") == reference_report;
  return res;
}

Outcome resumability() {
  const Dataset ds = testing::synthetic_mcq(120, 40, 44, "med");
  const auto data = testing::scratch_dir("accept-resume-data") / "med.jsonl";
  write_native_file(ds, data);

  // Reference: uninterrupted run with no latency.
  const auto ref_dir = testing::scratch_dir("accept-resume-ref");
  fs::copy_file(data, ref_dir / "med.jsonl");
  testing::write_text(ref_dir / "run.json", resumable_config(0).dump(2));
  if (const int code = wait_exit(spawn_run(ref_dir / "run.json", ref_dir / "run.log")); code != 0)
    return {false, "reference run exited " + std::to_string(code)};
  const std::string reference = testing::read_text(ref_dir / "out" / "report.json");
  const std::size_t groups = read_request_log(ref_dir / "out" / "requests.log").size();

  const auto killed = interrupted_run("accept-resume-kill", SIGKILL, data, reference, groups);
  if (!killed.error.empty()) return {false, "SIGKILL: " + killed.error};
  const auto stopped = interrupted_run("accept-resume-int", SIGINT, data, reference, groups);
  if (!stopped.error.empty()) return {false, "SIGINT: " + stopped.error};

  // After SIGKILL, at most max_in_flight unanswered requests are re-issued;
  // after SIGINT in-flight requests drain, so nothing is re-issued at all.
  const bool ok = killed.report_identical && stopped.report_identical && killed.duplicates == 0 &&
                  stopped.duplicates == 0 && killed.reissued <= 3 && stopped.reissued == 0;
  return {ok, std::to_string(groups) + " groups; SIGKILL after " + std::to_string(killed.done_before) +
                  ": report " + (killed.report_identical ? "identical" : "DIFFERENT") + ", " +
                  std::to_string(killed.duplicates) + " duplicates, " + std::to_string(killed.reissued) +
                  " unanswered re-sent; SIGINT after " + std::to_string(stopped.done_before) + ": report " +
                  (stopped.report_identical ? "identical" : "DIFFERENT") + ", " +
                  std::to_string(stopped.duplicates + stopped.reissued) + " re-sent"};
}

Outcome extraction_corpus() {
  const auto cases = testing::load_extraction_corpus();
  std::set<TaskKind> kinds;
  std::size_t agree = 0;
  std::string first_bad;
  for (const auto& c : cases) {
    kinds.insert(c.task);
    const std::string diag = testing::check_extraction_case(c);
    if (diag.empty())
      ++agree;
    else if (first_bad.empty())
      first_bad = c.id + ": " + diag;
  }
  const bool ok = cases.size() >= 50 && kinds.size() == 4 && agree == cases.size();
  std::string detail = std::to_string(agree) + "/" + std::to_string(cases.size()) + " agree across " +
                       std::to_string(kinds.size()) + " task kinds";
  if (!first_bad.empty()) detail += "; " + first_bad;
  return {ok, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"planner properties", planner_properties},
      {"prompt golden files", prompt_goldens},
      {"BLEU oracle", bleu_oracle},
      {"poisoner arithmetic", poison_arithmetic},
      {"end-to-end mock reproduction", end_to_end_mock},
      {"resumability", resumability},
      {"extraction corpus", extraction_corpus},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
