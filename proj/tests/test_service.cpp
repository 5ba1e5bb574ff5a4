#include "oversight/service.hpp"

#include "doctest.h"

#include <httplib.h>

#include "oversight/driver.hpp"
#include "support.hpp"

using namespace oversight;
using nlohmann::json;
using testing_support::fixture;
using testing_support::slurp;
namespace fs = std::filesystem;

namespace {

AppConfig desk_config(const fs::path& storage) {
  AppConfig c;
  c.storage_root = storage;
  c.fixed_clock = true;
  c.listen_port = 0;
  return c;
}

json body_of(const HttpResult& r) { return json::parse(r.body.dump()); }

// Minimal JSON client over a running service.
struct Client {
  httplib::Client http;
  std::string token;

  explicit Client(int port) : http("127.0.0.1", port) {}

  std::pair<int, json> call(const std::string& method, const std::string& path, const json& body = json()) {
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    httplib::Result res = method == "GET" ? http.Get(path, headers)
                                          : http.Post(path, headers, body.is_null() ? "{}" : body.dump(),
                                                      "application/json");
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
};

}  // namespace

TEST_CASE("error codes map to statuses") {
  CHECK(http_status_for(ErrorCode::kInvalidArgument) == 400);
  CHECK(http_status_for(ErrorCode::kSessionNotFound) == 404);
  CHECK(http_status_for(ErrorCode::kAwaitingAnswer) == 409);
  CHECK(http_status_for(ErrorCode::kSessionNotAwaiting) == 409);
  CHECK(http_status_for(ErrorCode::kSessionIncomplete) == 409);
  CHECK(http_status_for(ErrorCode::kNodeMismatch) == 422);
  CHECK(http_status_for(ErrorCode::kCapacity) == 503);
  CHECK(http_status_for(ErrorCode::kTransportError) == 502);
  CHECK(http_status_for(ErrorCode::kInternal) == 500);
  const HttpResult r = error_result(Error(ErrorCode::kNodeMismatch, "m", "d"));
  CHECK(r.status == 422);
  CHECK(r.body.at("code") == "NodeMismatch");
  CHECK(r.body.at("message") == "m");
  CHECK(r.body.at("detail") == "d");
}

TEST_CASE("creating sessions") {
  testing_support::ScratchDir dir("svc-create");
  Service svc(desk_config(dir.path()), testing_support::prompts(), testing_support::desk_gateway());

  const HttpResult r = svc.create_session(R"({"query": "A site for templates", "client_token": "t-1"})");
  REQUIRE(r.status == 201);
  const std::string id = r.body.at("session_id");
  CHECK(r.body.at("version") == 0);
  CHECK(r.body.at("tree").at("funcs").size() == 5);

  const HttpResult again = svc.create_session(R"({"query": "A site for templates", "client_token": "t-1"})");
  CHECK(again.status == 200);
  CHECK(again.body.at("session_id") == id);
  CHECK(svc.list_sessions().body.at("sessions").size() == 1);

  CHECK(svc.create_session("").status == 400);
  CHECK(svc.create_session("[1]").status == 400);
  CHECK(svc.create_session("{not json").status == 400);
  CHECK(svc.create_session(R"({"query": "   "})").status == 400);
  CHECK(svc.create_session(R"({"query": 5})").status == 400);
  CHECK(svc.create_session(json{{"query", std::string(20000, 'x')}}.dump()).status == 400);
  CHECK(svc.create_session(R"({"query": "x"})").body.at("session_id") != id);

  // A fresh service over the same storage remembers the token.
  Service reopened(desk_config(dir.path()), testing_support::prompts(), testing_support::desk_gateway());
  CHECK(reopened.create_session(R"({"query": "x", "client_token": "t-1"})").body.at("session_id") == id);
}

TEST_CASE("out-of-order calls are rejected without changing state") {
  testing_support::ScratchDir dir("svc-409");
  Service svc(desk_config(dir.path()), testing_support::prompts(), testing_support::desk_gateway());
  const std::string id = svc.create_session(R"({"query": "q"})").body.at("session_id");
  const fs::path state = dir.path() / "sessions" / id / "state.json";

  CHECK(svc.answer(id, R"({"node_path": ["Product Overview", "Product Positioning"], "answer": "[A]"})").status == 409);
  const HttpResult q = svc.next(id);
  REQUIRE(q.status == 200);
  const json path = body_of(q).at("node_path");
  const std::string before = slurp(state);
  const json summary = body_of(svc.session_summary(id));

  const HttpResult twice = svc.next(id);
  CHECK(twice.status == 409);
  CHECK(twice.body.at("code") == "AwaitingAnswer");
  CHECK(svc.prd(id, "{}").status == 409);
  const HttpResult wrong = svc.answer(id, R"({"node_path": ["Core Functional Modules"], "answer": "[A]"})");
  CHECK(wrong.status == 422);
  CHECK(svc.answer(id, R"({"answer": "[A]"})").status == 400);
  CHECK(svc.answer(id, R"({"node_path": 3, "answer": "[A]"})").status == 400);
  CHECK(slurp(state) == before);
  CHECK(body_of(svc.session_summary(id)) == summary);
  CHECK(summary.at("status") == "awaiting_user");
  CHECK(summary.at("pending").at("node_path") == path);

  // The path may also be given as "A > B".
  std::string joined;
  for (const auto& p : path) joined += (joined.empty() ? "" : " > ") + p.get<std::string>();
  const HttpResult ok = svc.answer(id, json{{"node_path", joined}, {"answer", "[B]- Conf[0.5]"}}.dump());
  REQUIRE(ok.status == 200);
  CHECK(ok.body.at("parsed_feedback").at("kind") == "selection");
  const HttpResult replay = svc.answer(id, json{{"node_path", path}, {"answer", "[B]- Conf[0.5]"}}.dump());
  CHECK(replay.status == 200);
  CHECK(replay.body.at("replayed") == true);
}

TEST_CASE("unknown sessions are not found") {
  testing_support::ScratchDir dir("svc-404");
  Service svc(desk_config(dir.path()), testing_support::prompts(), testing_support::desk_gateway());
  for (const HttpResult& r : {svc.session_summary("nope"), svc.next("nope"), svc.tree("nope"),
                              svc.prd("nope", "{}"), svc.answer("nope", R"({"node_path": [], "answer": "x"})"),
                              svc.next("../etc")}) {
    CHECK(r.status == 404);
    CHECK(r.body.at("code") == "SessionNotFound");
  }
}

TEST_CASE("capacity counts unfinished sessions, including ones on disk") {
  testing_support::ScratchDir dir("svc-cap");
  AppConfig c = desk_config(dir.path());
  c.limits.max_sessions = 1;
  {
    Service svc(c, testing_support::prompts(), testing_support::desk_gateway());
    CHECK(svc.create_session(R"({"query": "one"})").status == 201);
    const HttpResult full = svc.create_session(R"({"query": "two"})");
    CHECK(full.status == 503);
    CHECK(full.body.at("code") == "Capacity");
  }
  Service reopened(c, testing_support::prompts(), testing_support::desk_gateway());
  CHECK(reopened.create_session(R"({"query": "three"})").status == 503);
}

TEST_CASE("documents on demand") {
  testing_support::ScratchDir dir("svc-prd");
  Service svc(desk_config(dir.path()), testing_support::prompts(), testing_support::desk_gateway());
  auto oracle = OracleUser::from_file(fixture("oracle/five_leaf.yaml"));
  const std::string id = svc.create_session(R"({"query": "q"})").body.at("session_id");
  CHECK(svc.prd(id, R"({"intermediate": true})").status == 409);
  for (;;) {
    const json step = body_of(svc.next(id));
    if (step.contains("node_complete")) break;
    REQUIRE(step.contains("question"));
    svc.answer(id, json{{"node_path", step.at("node_path")},
                        {"answer", oracle->reply({}, step.at("node_path").get<NodePath>(), step.at("question").get<std::string>(), {}, {})}}
                       .dump());
  }
  const HttpResult mid = svc.prd(id, R"({"intermediate": true})");
  REQUIRE(mid.status == 200);
  CHECK(mid.body.at("completed_nodes") == 1);
  CHECK(svc.prd(id, R"({"intermediate": true})").body.at("prd_text") == mid.body.at("prd_text"));
  CHECK(svc.prd(id, "{}").status == 409);
  CHECK(svc.prd(id, "nonsense").status == 400);
}

TEST_CASE("updater deletions show up as a new revision") {
  testing_support::ScratchDir dir("svc-news");
  AppConfig c = testing_support::config_with_storage("spanish_news.json", dir.path());
  Service svc(c, testing_support::prompts());
  auto oracle = OracleUser::from_file(fixture("oracle/spanish_news.yaml"));
  const std::string id = svc.create_session(R"({"query": "A Spanish-language news site"})").body.at("session_id");
  json step;
  for (;;) {
    step = body_of(svc.next(id));
    if (!step.contains("question")) break;
    svc.answer(id, json{{"node_path", step.at("node_path")},
                        {"answer", oracle->reply({}, {}, step.at("question").get<std::string>(), {}, {})}}
                       .dump());
  }
  CHECK(step.at("node_complete") == true);
  const json t = body_of(svc.tree(id));
  REQUIRE(t.at("revisions").size() == 2);
  CHECK(t.at("revisions")[1].at("cause") == "update");
  CHECK(t.at("version") == 1);
  CHECK_FALSE(t.at("tree").at("funcs").at("Product Overview").at("submodules").contains("Market Analysis"));
  CHECK(body_of(svc.next(id)).at("node_path") == json::array({"Product Overview", "Business Model"}));
}

TEST_CASE("a session over HTTP matches the in-process driver") {
  testing_support::ScratchDir dir("svc-http");
  AppConfig c = desk_config(dir.path() / "http");
  c.bearer_token = "sekret";
  Service svc(c, testing_support::prompts(), testing_support::desk_gateway());
  const int port = svc.start();
  Client client(port);

  CHECK(client.call("GET", "/healthz").first == 200);
  CHECK(client.call("GET", "/v1/sessions").first == 401);
  client.token = "wrong";
  CHECK(client.call("GET", "/v1/sessions").first == 401);
  client.token = "sekret";
  CHECK(client.call("GET", "/v1/sessions").first == 200);
  const auto missing = client.call("GET", "/v1/nothing/here");
  CHECK(missing.first == 404);
  CHECK(missing.second.at("code") == "NotFound");

  const IntentSpec intent = load_intent(fixture("intents/case_a.md"));
  auto oracle = OracleUser::from_file(fixture("oracle/five_leaf.yaml"));
  const auto [created, body] = client.call("POST", "/v1/sessions", {{"query", intent.query}});
  REQUIRE(created == 201);
  const std::string id = body.at("session_id");
  const std::string base = "/v1/sessions/" + id;
  for (int guard = 0; guard < 100; ++guard) {
    const auto [status, step] = client.call("GET", base + "/next");
    REQUIRE(status == 200);
    if (step.contains("all_complete")) break;
    if (step.contains("question")) {
      const std::string answer =
          oracle->reply(intent, step.at("node_path").get<NodePath>(), step.at("question").get<std::string>(), {}, {});
      CHECK(client.call("POST", base + "/answer", {{"node_path", step.at("node_path")}, {"answer", answer}}).first ==
            200);
    }
  }
  const auto [prd_status, prd] = client.call("POST", base + "/prd", {{"intermediate", false}});
  REQUIRE(prd_status == 200);
  const auto summary = client.call("GET", base).second;
  CHECK(summary.at("status") == "done");
  CHECK(summary.at("completed_nodes") == 5);
  svc.stop();

  SessionStore local(dir.path() / "local");
  auto gw = testing_support::desk_gateway();
  Engine engine(*gw, testing_support::prompts());
  auto user = OracleUser::from_file(fixture("oracle/five_leaf.yaml"));
  RunOptions options;
  options.intermediate_prds = false;
  {
    auto writer = local.open_transcript(id, true);
    run_session(engine, *user, intent, id, writer.get(), &local, options);
  }
  const fs::path remote = dir.path() / "http" / "sessions" / id;
  CHECK(prd.at("prd_text") == slurp(local.session_dir(id) / "prd.md"));
  for (const char* f : {"transcript.jsonl", "prd.md", "state.json", "tree.v0.json"}) {
    CHECK_MESSAGE(slurp(remote / f) == slurp(local.session_dir(id) / f), f);
  }
}

TEST_CASE("oversized bodies are refused over HTTP") {
  testing_support::ScratchDir dir("svc-big");
  AppConfig c = desk_config(dir.path());
  c.limits.max_body_bytes = 1024;
  Service svc(c, testing_support::prompts(), testing_support::desk_gateway());
  Client client(svc.start());
  const auto [status, body] = client.call("POST", "/v1/sessions", {{"query", std::string(4096, 'q')}});
  CHECK(status == 413);
  CHECK(body.at("code") == "PayloadTooLarge");
}
