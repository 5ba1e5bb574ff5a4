#include "oversight/oversight.h"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <unistd.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& rel) {
  return (fs::path(OVERSIGHT_TEST_SOURCE_DIR) / "fixtures" / rel).string();
}

struct Scratch {
  fs::path path = fs::path(OVERSIGHT_TEST_BINARY_DIR) / "scratch" / ("capi-" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Takes ownership of a library string.
std::string take(char* s) {
  std::string out = s ? s : "";
  oversight_string_free(s);
  return out;
}

json last_error() { return json::parse(oversight_last_error()); }

json desk_overrides(const fs::path& storage) {
  const std::string tree = fixture("trees/five_leaf.json");
  return {{"storage_root", storage.string()},
          {"fixed_clock", true},
          {"listen", "127.0.0.1:0"},
          {"roles",
           {{"interaction_policy", {{"backend", "desk"}, {"path", tree}}},
            {"tree_updater", {{"backend", "desk"}, {"path", tree}}},
            {"doc_generator", {{"backend", "desk"}, {"path", tree}}},
            {"judge", {{"backend", "containment"}}}}}};
}

struct Ctx {
  oversight_context* p = nullptr;
  explicit Ctx(const json& overrides) {
    REQUIRE(oversight_context_create(nullptr, overrides.dump().c_str(), &p) == OVERSIGHT_OK);
  }
  ~Ctx() { oversight_context_destroy(p); }
};

}  // namespace

TEST_CASE("version, status names and errors") {
  CHECK(std::string(oversight_version()) == "0.1.0");
  CHECK(std::string(oversight_status_name(OVERSIGHT_OK)) == "Ok");
  CHECK(std::string(oversight_status_name(OVERSIGHT_NODE_MISMATCH)) == "NodeMismatch");
  CHECK(std::string(oversight_status_name(OVERSIGHT_CAPACITY)) == "Capacity");

  char* out = nullptr;
  CHECK(oversight_parse_feedback(nullptr, &out) == OVERSIGHT_INVALID_ARGUMENT);
  CHECK(out == nullptr);
  CHECK(last_error().at("code") == "InvalidArgument");
  oversight_string_free(nullptr);
}

TEST_CASE("feedback parsing") {
  char* out = nullptr;
  REQUIRE(oversight_parse_feedback("[A > C]- Conf[0.8]", &out) == OVERSIGHT_OK);
  const json j = json::parse(take(out));
  CHECK(j.at("kind") == "ranking");
  CHECK(j.at("payload") == json::array({"A", "C"}));
  CHECK(j.at("confidence") == 0.8);
}

TEST_CASE("contexts") {
  oversight_context* ctx = nullptr;
  CHECK(oversight_context_create(nullptr, "{\"turn_cap\": 0}", &ctx) == OVERSIGHT_CONFIG);
  CHECK(ctx == nullptr);
  CHECK(oversight_context_create(nullptr, "{not json", &ctx) == OVERSIGHT_INVALID_ARGUMENT);
  CHECK(oversight_context_create("/no/such/config.json", nullptr, &ctx) == OVERSIGHT_CONFIG);
  CHECK(oversight_context_create(nullptr, nullptr, nullptr) == OVERSIGHT_INVALID_ARGUMENT);

  json o = desk_overrides("/tmp/unused");
  o["bearer_token"] = "secret-token";
  o["roles"]["judge"] = {{"backend", "openai"}, {"base_url", "http://x/v1"}, {"api_key", "sk-hidden"}};
  Ctx c(o);
  char* out = nullptr;
  REQUIRE(oversight_context_config(c.p, &out) == OVERSIGHT_OK);
  const std::string text = take(out);
  CHECK(text.find("sk-hidden") == std::string::npos);
  CHECK(text.find("secret-token") == std::string::npos);
  const json cfg = json::parse(text);
  CHECK(cfg.at("storage_root") == "/tmp/unused");
  CHECK(cfg.at("roles").at("judge").at("api_key") == "***");
  CHECK(cfg.at("roles").at("interaction_policy").at("backend") == "desk");
}

TEST_CASE("a stepwise session through the C surface") {
  Scratch dir;
  Ctx c(desk_overrides(dir.path));
  char* out = nullptr;
  REQUIRE(oversight_session_create(c.p, R"({"query": "a template site"})", &out) == OVERSIGHT_OK);
  const std::string id = json::parse(take(out)).at("session_id");

  REQUIRE(oversight_session_next(c.p, id.c_str(), &out) == OVERSIGHT_OK);
  const json q = json::parse(take(out));
  REQUIRE(q.contains("question"));
  CHECK(oversight_session_next(c.p, id.c_str(), &out) == OVERSIGHT_AWAITING_ANSWER);
  CHECK(last_error().at("code") == "AwaitingAnswer");
  CHECK(oversight_session_answer(c.p, id.c_str(), R"({"node_path": ["Nope"], "answer": "[A]"})", &out) ==
        OVERSIGHT_NODE_MISMATCH);
  CHECK(oversight_session_status(c.p, "missing", &out) == OVERSIGHT_SESSION_NOT_FOUND);

  json step = q;
  for (int guard = 0; guard < 100 && !step.contains("all_complete"); ++guard) {
    if (step.contains("question")) {
      const json req = {{"node_path", step.at("node_path")}, {"answer", "[A]"}};
      REQUIRE(oversight_session_answer(c.p, id.c_str(), req.dump().c_str(), &out) == OVERSIGHT_OK);
      take(out);
    }
    REQUIRE(oversight_session_next(c.p, id.c_str(), &out) == OVERSIGHT_OK);
    step = json::parse(take(out));
  }
  REQUIRE(step.contains("all_complete"));
  REQUIRE(oversight_session_prd(c.p, id.c_str(), nullptr, &out) == OVERSIGHT_OK);
  CHECK(json::parse(take(out)).at("prd_text").get<std::string>().find("Template Catalog") != std::string::npos);
  REQUIRE(oversight_session_tree(c.p, id.c_str(), &out) == OVERSIGHT_OK);
  CHECK(json::parse(take(out)).at("status") == "done");
  REQUIRE(oversight_session_status(c.p, id.c_str(), &out) == OVERSIGHT_OK);
  CHECK(json::parse(take(out)).at("completed_nodes") == 5);
}

TEST_CASE("full runs, replay and evaluation") {
  Scratch dir;
  Ctx c(desk_overrides(dir.path / "store"));
  const json req = {{"intent", fixture("intents/case_a.md")},
                    {"oracle", fixture("oracle/five_leaf.yaml")},
                    {"rubrics", fixture("rubrics/five_leaf.json")}};
  char* out = nullptr;
  REQUIRE(oversight_run(c.p, req.dump().c_str(), &out) == OVERSIGHT_OK);
  const json run = json::parse(take(out));
  CHECK(run.at("overall") == 1.0);
  CHECK(run.at("storage_root") == (dir.path / "store").string());
  CHECK(fs::exists(dir.path / "store" / run.at("prd_path").get<std::string>()));

  CHECK(oversight_run(c.p, R"({"oracle": "x"})", &out) == OVERSIGHT_INVALID_ARGUMENT);

  const std::string target = (dir.path / "replay").string();
  REQUIRE(oversight_replay(c.p, "case_a", target.c_str(), &out) == OVERSIGHT_OK);
  const json rep = json::parse(take(out));
  CHECK(rep.at("exchanges_identical") == true);
  CHECK(rep.at("prd_identical") == true);

  std::ifstream in(dir.path / "store" / "sessions" / "case_a" / "prd.md");
  const std::string prd((std::istreambuf_iterator<char>(in)), {});
  std::ifstream rin(fixture("rubrics/five_leaf.json"));
  const json ev_req = {{"prd", prd}, {"rubrics", json::parse(rin)}};
  char* md = nullptr;
  REQUIRE(oversight_evaluate(c.p, ev_req.dump().c_str(), &out, &md) == OVERSIGHT_OK);
  CHECK(json::parse(take(out)).at("overall") == 1.0);
  CHECK_FALSE(take(md).empty());
}

TEST_CASE("rewards, benchmarks and comparisons") {
  Scratch dir;
  char* out = nullptr;
  REQUIRE(oversight_rewards(fixture("traces/worked.jsonl").c_str(), 1e-8, dir.path.string().c_str(), &out) ==
          OVERSIGHT_OK);
  const json r = json::parse(take(out));
  std::ifstream expected_in(fixture("traces/worked.expected.json"));
  const json expected = json::parse(expected_in);
  CHECK(std::fabs(r.at("whitening").at("mean").get<double>() - expected.at("whitening").at("mean").get<double>()) <
        1e-12);
  CHECK(std::fabs(r.at("whitening").at("std").get<double>() - expected.at("whitening").at("std").get<double>()) <
        1e-12);
  std::ifstream meta_in(dir.path / "advantages.json");
  const json meta = json::parse(meta_in);
  CHECK(meta.at("shape") == expected.at("shape"));
  CHECK(meta.at("eos_positions") == expected.at("eos_positions"));
  std::ifstream bin(dir.path / "advantages.bin", std::ios::binary);
  for (const auto& row : expected.at("advantages")) {
    for (const auto& v : row) {
      double x = 0;
      bin.read(reinterpret_cast<char*>(&x), sizeof x);
      CHECK(std::fabs(x - v.get<double>()) < 1e-9);
    }
  }
  CHECK(fs::exists(dir.path / "rewards.json"));
  CHECK(fs::exists(dir.path / "advantages.bin"));
  CHECK(oversight_rewards("/no/traces.jsonl", 1e-8, nullptr, &out) != OVERSIGHT_OK);

  const std::string bench_out = (dir.path / "bench").string();
  REQUIRE(oversight_benchmark(fixture("bench/desk_bench.json").c_str(), bench_out.c_str(), &out) == OVERSIGHT_OK);
  const json report = json::parse(take(out));
  CHECK(report.at("aggregate").at("ok_cases") == 2);

  const json pair = json::array({report, report});
  char* md = nullptr;
  REQUIRE(oversight_compare(pair.dump().c_str(), &out, &md) == OVERSIGHT_OK);
  CHECK(json::parse(take(out)).at("rows")[1].at("deltas").at("overall") == 0.0);
  take(md);
  CHECK(oversight_compare("{}", &out, nullptr) == OVERSIGHT_INVALID_ARGUMENT);
  json other = report;
  other["cases"][0]["intent"] = "elsewhere";
  CHECK(oversight_compare(json::array({report, other}).dump().c_str(), &out, nullptr) ==
        OVERSIGHT_INTENT_SET_MISMATCH);
}

TEST_CASE("the service starts and stops") {
  Scratch dir;
  Ctx c(desk_overrides(dir.path));
  int port = 0;
  REQUIRE(oversight_server_start(c.p, &port) == OVERSIGHT_OK);
  CHECK(port > 0);
  httplib::Client http("127.0.0.1", port);
  auto res = http.Get("/healthz");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(oversight_server_stop(c.p) == OVERSIGHT_OK);
  CHECK_FALSE(http.Get("/healthz"));
}
