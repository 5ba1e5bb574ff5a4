#include "oversight/engine.hpp"

#include "doctest.h"

#include <nlohmann/json.hpp>

#include "oversight/simulator.hpp"
#include "oversight/transcript.hpp"
#include "support.hpp"

using namespace oversight;
using nlohmann::json;
using testing_support::fixture;
using testing_support::slurp;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

// Drives a session to the end with the given user, folding in every node.
void drive(const Engine& engine, Session& s, UserSimulator& user, const IntentSpec& intent,
           TranscriptSink* sink = nullptr) {
  for (int guard = 0; guard < 500; ++guard) {
    const NextStep step = engine.next_question(s, sink);
    if (step.kind == NextStep::Kind::kAllComplete) return;
    if (step.kind == NextStep::Kind::kNodeComplete) {
      engine.complete_node(s, step.node_path, sink);
      continue;
    }
    const auto& ns = s.node_sessions.back();
    engine.submit_answer(s, step.node_path, user.reply(intent, step.node_path, step.text, ns.turns, s.context));
  }
  FAIL("session did not finish");
}

std::shared_ptr<Gateway> scripted(const json& rules) {
  auto backend = ScriptedBackend::from_json(json{{"strict", true}, {"rules", rules}});
  auto gw = std::make_shared<Gateway>();
  for (auto role : kAllRoles) gw->set_backend(role, backend);
  return gw;
}

json tree_init_rule(const std::string& response, int times = -1) {
  return {{"match", {{"template", "tree_init"}}}, {"response", response}, {"times", times}};
}

const NodePath kPositioning = {"Product Overview", "Product Positioning"};

}  // namespace

TEST_CASE("full loop over the five-leaf tree") {
  auto gw = testing_support::desk_gateway();
  const Engine engine(*gw, testing_support::prompts());
  auto oracle = OracleUser::from_file(fixture("oracle/five_leaf.yaml"));
  const IntentSpec intent = load_intent(fixture("intents/case_a.md"));

  MemoryTranscript tx;
  Session s = engine.initialize_session(intent.query, "t1", &tx);
  CHECK(s.tree().unprocessed_target_count() == 5);
  drive(engine, s, *oracle, intent, &tx);

  CHECK(s.tree().unprocessed_target_count() == 0);
  REQUIRE(s.context.size() == 5);
  CHECK(s.tree_history.size() == 6);
  for (std::size_t i = 1; i < s.tree_history.size(); ++i) CHECK(s.tree_history[i].cause == "no_change");

  const std::string prd = engine.generate_prd(s, false, &tx);
  for (const auto& entry : s.context) CHECK(prd.find(entry.summary) != std::string::npos);
  CHECK(s.status == SessionStatus::kDone);
  CHECK(s.prd == prd);

  // Visit order is the tree's pre-order.
  const RequirementTree fresh = parse_tree(slurp(fixture("trees/five_leaf.json")));
  const auto leaves = fresh.leaf_targets();
  for (std::size_t i = 0; i < leaves.size(); ++i) CHECK(s.context[i].node_path == leaves[i]->full_path());

  const SessionMetrics m = session_metrics(s);
  CHECK(m.completed_nodes == 5);
  CHECK(m.total_turns == 6);  // one re-ask after the DontKnow
  CHECK(m.dont_know == 1);
  CHECK(m.avg_turns_per_node == doctest::Approx(1.2));
}

TEST_CASE("later interviews carry the confirmed specifications") {
  auto gw = testing_support::desk_gateway();
  const Engine engine(*gw, testing_support::prompts());
  auto oracle = OracleUser::from_file(fixture("oracle/five_leaf.yaml"));
  const IntentSpec intent = load_intent(fixture("intents/case_a.md"));
  MemoryTranscript tx;
  Session s = engine.initialize_session(intent.query, "t2", &tx);
  drive(engine, s, *oracle, intent, &tx);

  int policy_calls_after_first = 0;
  for (const auto& ex : tx.exchanges()) {
    if (ex.request.model_role != ModelRole::kInteractionPolicy) continue;
    if (ex.request.slots.at("node.name") == "Product Positioning") {
      CHECK(ex.request.messages[1].content == intent.query);
    } else {
      ++policy_calls_after_first;
      CHECK(ex.request.messages[1].content.find(s.context[0].summary) != std::string::npos);
    }
  }
  CHECK(policy_calls_after_first > 0);
}

TEST_CASE("tree init gets one repair attempt") {
  const std::string tree = slurp(fixture("trees/five_leaf.json"));
  {
    auto gw = scripted(json::array({{{"match", {{"template", "tree_init"}}}, {"responses", {"not a tree", tree}}}}));
    const Engine engine(*gw, testing_support::prompts());
    MemoryTranscript tx;
    Session s = engine.initialize_session("build me a site", "r1", &tx);
    CHECK(tx.exchanges().size() == 2);
    CHECK(s.log.size() == 1);
    CHECK(tx.exchanges()[1].request.messages.size() == 4);
    CHECK(s.tree().roots.size() == 5);
  }
  {
    auto gw = scripted(json::array({tree_init_rule(R"({"funcs": {"Only": {}}})")}));
    const Engine engine(*gw, testing_support::prompts());
    CHECK(code_of([&] { engine.initialize_session("build me a site", "r2"); }) == ErrorCode::kTreeInitFailed);
  }
  auto gw = testing_support::desk_gateway();
  const Engine engine(*gw, testing_support::prompts());
  CHECK(code_of([&] { engine.initialize_session("   ", "r3"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("out-of-order calls fail without touching the session") {
  auto gw = testing_support::desk_gateway();
  const Engine engine(*gw, testing_support::prompts());
  Session s = engine.initialize_session("a template marketplace", "o1");

  CHECK(code_of([&] { engine.submit_answer(s, kPositioning, "[A]"); }) == ErrorCode::kSessionNotAwaiting);
  CHECK(code_of([&] { engine.generate_prd(s, true); }) == ErrorCode::kSessionIncomplete);
  CHECK(code_of([&] { engine.generate_prd(s, false); }) == ErrorCode::kSessionIncomplete);

  const NextStep q = engine.next_question(s);
  REQUIRE(q.kind == NextStep::Kind::kQuestion);
  CHECK(q.node_path == kPositioning);
  const json before = s;
  CHECK(code_of([&] { engine.next_question(s); }) == ErrorCode::kAwaitingAnswer);
  CHECK(code_of([&] { engine.submit_answer(s, {"Performance"}, "[A]"); }) == ErrorCode::kNodeMismatch);
  CHECK(code_of([&] { engine.generate_prd(s, false); }) == ErrorCode::kSessionIncomplete);
  CHECK(code_of([&] { engine.complete_node(s, kPositioning); }) == ErrorCode::kNodeMismatch);
  CHECK(json(s) == before);

  const Turn t = engine.submit_answer(s, kPositioning, "[A > B]- Conf[0.9]");
  CHECK(t.parsed.kind == FeedbackKind::kRanking);
  const NextStep done = engine.next_question(s);
  CHECK(done.kind == NextStep::Kind::kNodeComplete);
  CHECK(done.text.find("Feature Specification") != std::string::npos);
  CHECK(code_of([&] { engine.complete_node(s, {"Performance"}); }) == ErrorCode::kNodeMismatch);
  // next folds the finished node in by itself.
  const NextStep q2 = engine.next_question(s);
  CHECK(q2.kind == NextStep::Kind::kQuestion);
  CHECK(s.context.size() == 1);
  CHECK(engine.generate_prd(s, true).find(s.context[0].summary) != std::string::npos);
  CHECK(s.intermediate_prds.size() == 1);
  CHECK(s.intermediate_prds[0].completed_nodes == 1);
}

TEST_CASE("the turn cap nudges and then closes the node") {
  const std::string tree = slurp(fixture("trees/five_leaf.json"));
  auto gw = scripted(json::array({
      tree_init_rule(tree),
      {{"match", {{"template", "interaction_system"}}}, {"response", "Question: and what else?"}, {"times", -1}},
      {{"match", {{"template", "tree_update"}}}, {"response", "NO_CHANGES_NEEDED"}, {"times", -1}},
  }));
  const Engine engine(*gw, testing_support::prompts(), EngineOptions{2, 5});
  MemoryTranscript tx;
  Session s = engine.initialize_session("q", "cap", &tx);
  for (int i = 0; i < 2; ++i) {
    const NextStep q = engine.next_question(s, &tx);
    REQUIRE(q.kind == NextStep::Kind::kQuestion);
    engine.submit_answer(s, q.node_path, "[DontCare]");
  }
  const NextStep forced = engine.next_question(s, &tx);
  CHECK(forced.kind == NextStep::Kind::kNodeComplete);
  CHECK(forced.text == "Question: and what else?");
  CHECK(s.node_sessions.back().forced);
  const auto last = tx.exchanges().back();
  CHECK(last.request.messages.back().role == MessageRole::kSystem);
  CHECK(s.log.back().find("turn cap") != std::string::npos);
}

TEST_CASE("a rejected update keeps the plan and the processed flag") {
  const std::string tree = slurp(fixture("trees/five_leaf.json"));
  auto bad = json::parse(tree);
  bad["funcs"]["Renamed Root"] = bad["funcs"]["Business Rules"];
  bad["funcs"].erase("Business Rules");
  auto gw = scripted(json::array({
      tree_init_rule(tree),
      {{"match", {{"template", "interaction_system"}}},
       {"response", "## Positioning Feature Specification\nfine\n[End of Feature Discussion]"},
       {"times", -1}},
      {{"match", {{"template", "tree_update"}}}, {"response", bad.dump()}, {"times", -1}},
  }));
  const Engine engine(*gw, testing_support::prompts());
  Session s = engine.initialize_session("q", "rej");
  const NextStep done = engine.next_question(s);
  REQUIRE(done.kind == NextStep::Kind::kNodeComplete);
  CHECK(done.text == "## Positioning Feature Specification\nfine");
  engine.complete_node(s, done.node_path);
  REQUIRE(s.tree_history.size() == 2);
  const TreeRevision& rev = s.tree_history.back();
  CHECK(rev.cause == "rejected");
  REQUIRE(rev.error.has_value());
  CHECK(rev.error->find("RootSetChanged") != std::string::npos);
  CHECK(rev.tree.version == 1);
  CHECK(rev.tree.find(kPositioning)->is_processed);
  CHECK(rev.tree.find({"Business Rules"}) != nullptr);
}

TEST_CASE("updater deletions take effect for later traversal") {
  auto gw = std::make_shared<Gateway>();
  auto script = ScriptedBackend::from_file(fixture("scripts/spanish_news.json").string());
  for (auto role : kAllRoles) gw->set_backend(role, script);
  const Engine engine(*gw, testing_support::prompts());
  auto oracle = OracleUser::from_file(fixture("oracle/spanish_news.yaml"));
  IntentSpec intent{"news", "A Spanish-language news site", "", ""};

  Session s = engine.initialize_session(intent.query, "news");
  int questions = 0;
  NextStep step;
  while ((step = engine.next_question(s)).kind == NextStep::Kind::kQuestion) {
    ++questions;
    engine.submit_answer(s, step.node_path, oracle->reply(intent, step.node_path, step.text, {}, s.context));
  }
  CHECK(questions == 2);
  REQUIRE(step.kind == NextStep::Kind::kNodeComplete);
  engine.complete_node(s, step.node_path);
  REQUIRE(s.tree_history.size() == 2);
  CHECK(s.tree_history[1].cause == "update");
  CHECK(s.tree().find({"Product Overview", "Market Analysis"}) == nullptr);
  CHECK(next_unresolved(s.tree())->name == "Business Model");
  const auto& turns = s.node_sessions.front().turns;
  CHECK(turns[0].parsed.payload == std::vector<std::string>{"A", "C", "B"});
  CHECK(turns[1].parsed.kind == FeedbackKind::kSelection);
}

TEST_CASE("specification extraction") {
  bool heading = false;
  CHECK(extract_specification("chat\n## A Specification\nx\n## B Feature Specification\ny\n[End of Feature Discussion]",
                              &heading) == "## B Feature Specification\ny");
  CHECK(heading);
  CHECK(extract_specification("just text [End of Feature Discussion] trailing", &heading) == "just text");
  CHECK_FALSE(heading);
}

TEST_CASE("session state round-trips with sibling order intact") {
  auto gw = testing_support::desk_gateway();
  const Engine engine(*gw, testing_support::prompts());
  auto oracle = OracleUser::from_file(fixture("oracle/five_leaf.yaml"));
  const IntentSpec intent = load_intent(fixture("intents/case_b.md"));
  Session s = engine.initialize_session(intent.query, "rt");
  drive(engine, s, *oracle, intent);
  engine.generate_prd(s, false);

  const json j = s;
  const Session back = j.get<Session>();
  CHECK(json(back).dump() == j.dump());
  CHECK(serialize_tree(back.tree()) == serialize_tree(s.tree()));
  CHECK(back.tree().roots.front().name == "Product Overview");
}
