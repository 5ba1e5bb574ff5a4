// Drives the installed command-line binary as a subprocess.

#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& rel) {
  return (fs::path(OVERSIGHT_TEST_SOURCE_DIR) / "fixtures" / rel).string();
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

struct Result {
  int exit = -1;
  std::string out;
  std::string err;
};

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& tag)
      : path(fs::path(OVERSIGHT_TEST_BINARY_DIR) / "scratch" / ("cli-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

Result cli(const std::vector<std::string>& args, const fs::path& err_file) {
  std::string cmd = quote(OVERSIGHT_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>" + quote(err_file.string());
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file);
  std::ostringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::vector<std::string> desk(const fs::path& storage, std::vector<std::string> rest) {
  std::vector<std::string> args = {"--config", fixture("configs/desk.json"), "--storage", storage.string()};
  args.insert(args.end(), rest.begin(), rest.end());
  return args;
}

}  // namespace

TEST_CASE("feedback parsing from the command line") {
  Scratch dir("parse");
  const Result r = cli({"parse-feedback", "[A > C]- Conf[0.8]"}, dir.path / "err");
  CHECK(r.exit == 0);
  CHECK(json::parse(r.out).at("kind") == "ranking");
  CHECK(cli({}, dir.path / "err").exit != 0);
  CHECK(cli({"bogus-command"}, dir.path / "err").exit != 0);
}

TEST_CASE("a full run is byte-identical across invocations") {
  Scratch dir("run");
  const auto args = desk(dir.path / "store", {"run", "--intent", fixture("intents/case_a.md"), "--oracle",
                                              fixture("oracle/five_leaf.yaml"), "--rubrics",
                                              fixture("rubrics/five_leaf.json"), "--rewards"});
  const auto t0 = std::chrono::steady_clock::now();
  const Result a = cli(args, dir.path / "err");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE_MESSAGE(a.exit == 0, a.err);
  CHECK(secs < 5.0);
  const fs::path session = dir.path / "store" / "sessions" / "case_a";
  std::ifstream prd_in(session / "prd.md");
  const std::string prd_a((std::istreambuf_iterator<char>(prd_in)), {});
  std::ifstream tx_in(session / "transcript.jsonl");
  const std::string tx_a((std::istreambuf_iterator<char>(tx_in)), {});

  const Result b = cli(args, dir.path / "err");
  REQUIRE(b.exit == 0);
  CHECK(a.out == b.out);
  std::ifstream prd_in2(session / "prd.md");
  CHECK(std::string((std::istreambuf_iterator<char>(prd_in2)), {}) == prd_a);
  std::ifstream tx_in2(session / "transcript.jsonl");
  CHECK(std::string((std::istreambuf_iterator<char>(tx_in2)), {}) == tx_a);

  const json out = json::parse(a.out);
  CHECK(out.at("overall") == 1.0);
  CHECK(out.at("checkpoints").size() == 5);

  const Result r1 = cli(desk(dir.path / "store", {"replay", "case_a", "--target", (dir.path / "r1").string()}),
                        dir.path / "err");
  const Result r2 = cli(desk(dir.path / "store", {"replay", "case_a", "--target", (dir.path / "r1").string()}),
                        dir.path / "err");
  REQUIRE(r1.exit == 0);
  CHECK(r1.out == r2.out);
  CHECK(json::parse(r1.out).at("exchanges_identical") == true);
  CHECK(json::parse(r1.out).at("prd_identical") == true);
}

TEST_CASE("rewards from the command line match the frozen oracle") {
  Scratch dir("reward");
  for (const char* name : {"worked", "mixed"}) {
    const Result r = cli({"reward", "--traces", fixture(std::string("traces/") + name + ".jsonl"), "--out",
                          dir.path.string()},
                         dir.path / "err");
    REQUIRE_MESSAGE(r.exit == 0, r.err);
    const json got = json::parse(r.out);
    std::ifstream in(fixture(std::string("traces/") + name + ".expected.json"));
    const json want = json::parse(in);
    REQUIRE(got.at("queries").size() == want.at("queries").size());
    for (std::size_t q = 0; q < want.at("queries").size(); ++q) {
      const auto& gq = got.at("queries")[q];
      const auto& wq = want.at("queries")[q];
      CHECK(gq.at("query_id") == wq.at("query_id"));
      CHECK(std::fabs(gq.at("aggregate").get<double>() - wq.at("aggregate").get<double>()) < 1e-12);
      for (std::size_t i = 0; i < wq.at("sequences").size(); ++i) {
        for (const char* k : {"UR", "PR", "OR", "terminal", "r_tilde"}) {
          CHECK(std::fabs(gq.at("sequences")[i].at(k).get<double>() - wq.at("sequences")[i].at(k).get<double>()) <
                1e-12);
        }
      }
    }
    CHECK(std::fabs(got.at("whitening").at("std").get<double>() - want.at("whitening").at("std").get<double>()) <
          1e-12);
  }
  CHECK(cli({"reward", "--traces", "/no/such.jsonl"}, dir.path / "err").exit != 0);
}

TEST_CASE("a stepwise session and its exit codes") {
  Scratch dir("step");
  const Result init = cli(desk(dir.path, {"init", "--query", "a template site"}), dir.path / "err");
  REQUIRE_MESSAGE(init.exit == 0, init.err);
  const std::string id = json::parse(init.out).at("session_id");
  const Result q = cli(desk(dir.path, {"step", id}), dir.path / "err");
  REQUIRE(q.exit == 0);
  const json question = json::parse(q.out);
  REQUIRE(question.contains("question"));

  const Result again = cli(desk(dir.path, {"step", id}), dir.path / "err");
  CHECK(again.exit == 1);
  CHECK(json::parse(again.err).at("code") == "AwaitingAnswer");

  std::string node;
  for (const auto& p : question.at("node_path")) node += (node.empty() ? "" : " > ") + p.get<std::string>();
  const Result ans = cli(desk(dir.path, {"answer", id, "--node", node, "--answer", "[A]- Conf[0.6]"}),
                         dir.path / "err");
  REQUIRE_MESSAGE(ans.exit == 0, ans.err);
  CHECK(json::parse(ans.out).at("parsed_feedback").at("confidence") == 0.6);

  const Result status = cli(desk(dir.path, {"status", id}), dir.path / "err");
  CHECK(json::parse(status.out).at("total_turns") == 1);
  const Result missing = cli(desk(dir.path, {"status", "absent"}), dir.path / "err");
  CHECK(missing.exit == 1);
  CHECK(json::parse(missing.err).at("code") == "SessionNotFound");
}

TEST_CASE("bench and compare from the command line") {
  Scratch dir("bench");
  const Result b = cli({"bench", fixture("bench/desk_bench.json"), "--out", (dir.path / "a").string()},
                       dir.path / "err");
  REQUIRE_MESSAGE(b.exit == 0, b.err);
  CHECK(fs::exists(dir.path / "a" / "report.md"));
  const std::string report = (dir.path / "a" / "report.json").string();
  const Result c = cli({"compare", report, report, "--out", (dir.path / "cmp").string()}, dir.path / "err");
  REQUIRE_MESSAGE(c.exit == 0, c.err);
  CHECK(json::parse(c.out).at("rows").size() == 2);
  CHECK(fs::exists(dir.path / "cmp" / "comparison.md"));
}
