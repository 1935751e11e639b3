#include <doctest.h>

#include <chrono>
#include <future>

#include "gqa/sandbox.hpp"
#include "support.hpp"

using namespace gqa;
using namespace std::chrono_literals;

namespace {

std::vector<std::string> mini_runner() {
  return {GQA_PYTHON, testing::fixture_path("mini_runner.py").string()};
}

// Runner that misbehaves on request: "die" exits, "hang" never answers,
// anything else passes.
std::vector<std::string> rogue_runner() {
  return {GQA_PYTHON, "-c",
          "import json,sys,time\n"
          "for line in sys.stdin:\n"
          "    req = json.loads(line)\n"
          "    if req['program'] == 'die': sys.exit(3)\n"
          "    if req['program'] == 'hang': time.sleep(60)\n"
          "    if req['program'] == 'junk': print('not json', flush=True); continue\n"
          "    print(json.dumps({'id': 'stale', 'verdict': 'pass'}), flush=True)\n"
          "    print(json.dumps({'id': req['id'], 'verdict': 'pass', 'reason': None, 'detail': ''}),"
          " flush=True)\n"};
}

SandboxLimits limits(double seconds, std::size_t mb = 512) {
  SandboxLimits l;
  l.time = std::chrono::milliseconds(static_cast<long>(seconds * 1000));
  l.memory_mb = mb;
  return l;
}

const std::string kTests = "assert add(2, 3) == 5\nassert add(-1, 1) == 0\n";

}  // namespace

TEST_CASE("sandbox verdicts through the runner protocol") {
  SandboxRunner runner(mini_runner());
  const auto lim = limits(2);

  CHECK(runner.run_case("def add(a, b):\n    return a + b\n", kTests, lim).verdict ==
        CodeVerdict::pass);

  const auto wrong = runner.run_case("def add(a, b):\n    return a - b\n", kTests, lim);
  CHECK(wrong.verdict == CodeVerdict::assertion_failure);

  const auto syntax = runner.run_case("def add(a, b)\n    return a + b\n", kTests, lim);
  CHECK(syntax.verdict == CodeVerdict::compile_error);
  CHECK(syntax.detail.find("SyntaxError") != std::string::npos);

  const auto raises = runner.run_case("def add(a, b):\n    raise KeyError('x')\n", kTests, lim);
  CHECK(raises.verdict == CodeVerdict::runtime_error);
  CHECK(raises.detail.find("KeyError") != std::string::npos);

  const auto crash =
      runner.run_case("import os\ndef add(a, b):\n    os.abort()\n", kTests, lim);
  CHECK(crash.verdict == CodeVerdict::runtime_error);
  // the crash took down only the case process
  CHECK(runner.run_case("def add(a, b):\n    return b + a\n", kTests, lim).passed());

  const auto memory = runner.run_case(
      "def add(a, b):\n    x = bytearray(2 * 1024 * 1024 * 1024)\n    return a + b\n", kTests,
      limits(5, 256));
  CHECK(memory.verdict == CodeVerdict::runtime_error);
  CHECK(memory.detail.find("MemoryError") != std::string::npos);

  const auto t0 = std::chrono::steady_clock::now();
  const auto slow = runner.run_case("def add(a, b):\n    while True: pass\n", kTests, limits(1));
  const auto took = std::chrono::steady_clock::now() - t0;
  CHECK(slow.verdict == CodeVerdict::timeout);
  CHECK(took < 2s);

  CHECK(code_pass("", kTests, lim, runner).verdict == CodeVerdict::compile_error);
  CHECK(code_pass("def add(a, b):\n    return a + b\n", kTests, lim, runner).passed());
}

TEST_CASE("runner failures are handled") {
  SandboxRunner runner(rogue_runner());
  const auto lim = limits(0.5);
  // a stale response with another id is skipped
  CHECK(runner.run_case("ok", "", lim).passed());

  const auto died = runner.run_case("die", "", lim);
  CHECK(died.verdict == CodeVerdict::runtime_error);
  CHECK(runner.run_case("ok", "", lim).passed());  // restarted

  const auto t0 = std::chrono::steady_clock::now();
  const auto hung = runner.run_case("hang", "", lim);
  CHECK(hung.verdict == CodeVerdict::timeout);
  CHECK(std::chrono::steady_clock::now() - t0 < 5s);
  CHECK(runner.run_case("ok", "", lim).passed());

  CHECK_THROWS_AS(runner.run_case("junk", "", lim), SandboxProtocolError);
}

TEST_CASE("a missing runner is reported, not skipped") {
  CHECK_THROWS_AS(SandboxRunner({"/nonexistent/sandbox-runner"}).run_case("x", "", limits(1)),
                  SandboxUnavailable);
  CHECK_THROWS_AS(SandboxRunner({}), SandboxUnavailable);
}

TEST_CASE("sandbox pool runs cases concurrently") {
  SandboxPool pool(mini_runner(), 3);
  std::vector<std::future<CodeResult>> futures;
  for (int i = 0; i < 6; ++i) {
    const std::string body = i % 2 ? "a + b" : "a * b";
    futures.push_back(std::async(std::launch::async, [&pool, body] {
      return code_pass("def add(a, b):\n    return " + body + "\n", kTests, limits(3), pool);
    }));
  }
  int passed = 0;
  for (auto& f : futures) passed += f.get().passed() ? 1 : 0;
  CHECK(passed == 3);
}
