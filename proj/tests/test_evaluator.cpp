#include "oversight/evaluator.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "oversight/simulator.hpp"
#include "oversight/json_text.hpp"
#include "oversight/transcript.hpp"
#include "support.hpp"

using namespace oversight;
using nlohmann::json;
using testing_support::fixture;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

ModuleScores module(const std::string& name, const std::vector<double>& values) {
  ModuleScores m{name, {}};
  for (std::size_t i = 0; i < values.size(); ++i) m.scores.push_back({name + std::to_string(i), values[i], {}});
  return m;
}

Gateway judge_gateway(std::shared_ptr<ChatBackend> judge) {
  Gateway gw;
  gw.set_backend(ModelRole::kJudge, std::move(judge));
  return gw;
}

std::shared_ptr<ChatBackend> script(const json& rules) {
  return ScriptedBackend::from_json(json{{"strict", true}, {"rules", rules}});
}

}  // namespace

TEST_CASE("the 1, 1, 1, 0.5 case") {
  const AlignmentResult r = alignment_score({module("Core Functional Modules", {1, 1, 1, 0.5})});
  CHECK(r.overall == 0.875);
  CHECK(r.per_module[0].second == 0.875);
  CHECK(r.rubric_count == 4);
  CHECK(alignment_score({module("Core Functional Modules", {1, 1, 1, 0.5})}, true).overall == 0.75);
}

TEST_CASE("alignment matches brute-force recomputation") {
  std::mt19937 rng(31337);
  const double grid[] = {0.0, 0.5, 1.0};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<ModuleScores> mods;
    std::vector<std::vector<double>> raw;
    for (auto section : kPrdSections) {
      std::vector<double> v(rng() % 7);
      for (auto& x : v) x = grid[rng() % 3];
      raw.push_back(v);
      mods.push_back(module(std::string(section), v));
    }
    std::size_t total = 0;
    for (const auto& v : raw) total += v.size();
    if (total == 0) {
      CHECK(code_of([&] { alignment_score(mods); }) == ErrorCode::kEmptyRubricSet);
      continue;
    }
    for (bool strict : {false, true}) {
      // Flatten, then one pass for the pooled mean; per-module means separately.
      std::vector<double> flat;
      double macro_sum = 0;
      int macro_n = 0;
      for (const auto& v : raw) {
        double s = 0;
        for (double x : v) {
          const double y = strict ? (x == 1.0 ? 1.0 : 0.0) : x;
          flat.push_back(y);
          s += y;
        }
        if (!v.empty()) {
          macro_sum += s / v.size();
          ++macro_n;
        }
      }
      double pooled = 0;
      for (double y : flat) pooled += y;
      pooled /= flat.size();

      const AlignmentResult r = alignment_score(mods, strict);
      CHECK(std::fabs(r.overall - pooled) < 1e-12);
      CHECK(std::fabs(r.macro_average - macro_sum / macro_n) < 1e-12);
      for (std::size_t m = 0; m < raw.size(); ++m) {
        if (raw[m].empty()) {
          CHECK_FALSE(r.per_module[m].second.has_value());
          continue;
        }
        double s = 0;
        for (double x : raw[m]) s += strict ? (x == 1.0 ? 1.0 : 0.0) : x;
        CHECK(std::fabs(*r.per_module[m].second - s / raw[m].size()) < 1e-12);
      }
    }
  }
}

TEST_CASE("score coercion") {
  CHECK(coerce_score(0.0) == 0.0);
  CHECK(coerce_score(0.25) == 0.0);
  CHECK(coerce_score(0.26) == 0.5);
  CHECK(coerce_score(0.75) == 0.5);
  CHECK(coerce_score(0.76) == 1.0);
  CHECK(coerce_score(-4) == 0.0);
  CHECK(coerce_score(9) == 1.0);
  CHECK(coerce_score(std::nan("")) == 0.0);
}

TEST_CASE("judge agreement matches brute force") {
  std::mt19937 rng(4242);
  const double grid[] = {0.0, 0.5, 1.0};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t judges = 2 + rng() % 3;
    const std::size_t n = 1 + rng() % 40;
    std::vector<std::vector<double>> values(judges, std::vector<double>(n));
    for (auto& row : values) {
      for (auto& v : row) v = grid[rng() % 3];
    }
    // Each judge reports in its own shuffled order.
    std::vector<std::vector<RubricScore>> sets;
    for (const auto& row : values) {
      std::vector<RubricScore> set;
      for (std::size_t i = 0; i < n; ++i) set.push_back({"R" + std::to_string(i), row[i], {}});
      std::shuffle(set.begin(), set.end(), rng);
      sets.push_back(set);
    }
    const auto mat = judge_agreement(sets);
    for (std::size_t a = 0; a < judges; ++a) {
      CHECK(mat[a][a] == 1.0);
      for (std::size_t b = 0; b < judges; ++b) {
        int same = 0;
        for (std::size_t i = 0; i < n; ++i) same += values[a][i] == values[b][i];
        CHECK(mat[a][b] == static_cast<double>(same) / static_cast<double>(n));
      }
    }
  }
}

TEST_CASE("agreement on a fixed three-judge set") {
  // 8 rubrics; judges 1 and 2 differ on one, 1 and 3 on three.
  const std::vector<double> j1 = {1, 1, 0.5, 0, 1, 0, 0.5, 1};
  const std::vector<double> j2 = {1, 1, 0.5, 0, 1, 0, 0.5, 0.5};
  const std::vector<double> j3 = {1, 0, 0.5, 0.5, 1, 0, 1, 1};
  auto set = [](const std::vector<double>& v) {
    std::vector<RubricScore> s;
    for (std::size_t i = 0; i < v.size(); ++i) s.push_back({"M1.R" + std::to_string(i + 1), v[i], {}});
    return s;
  };
  const auto mat = judge_agreement({set(j1), set(j2), set(j3)});
  CHECK(mat[0][1] == 0.875);
  CHECK(mat[0][2] == 0.625);
  CHECK(mat[1][2] == 0.5);
  CHECK(mat[2][1] == 0.5);
}

TEST_CASE("agreement input errors") {
  const std::vector<RubricScore> a = {{"x", 1, {}}}, b = {{"y", 1, {}}}, dup = {{"x", 1, {}}, {"x", 0, {}}};
  CHECK(code_of([&] { judge_agreement({a}); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { judge_agreement({a, b}); }) == ErrorCode::kIdMismatch);
  CHECK(code_of([&] { judge_agreement({a, dup}); }) == ErrorCode::kIdMismatch);
  CHECK(code_of([&] { judge_agreement({{}, {}}); }) == ErrorCode::kEmptyRubricSet);
}

TEST_CASE("lenient judge json") {
  CHECK(parse_judge_json("```json\n{\"score\": 1}\n```")->at("score") == 1);
  CHECK(parse_judge_json("Sure! {\"score\": 0, \"reason\": \"none\"} Hope that helps.")->at("score") == 0);
  const auto repaired = parse_judge_json(R"({"reason": "the "fast" path", "score": 1})");
  REQUIRE(repaired.has_value());
  CHECK(repaired->at("reason") == "the \"fast\" path");
  CHECK_FALSE(parse_judge_json("no json here").has_value());
  CHECK_FALSE(parse_judge_json("[1, 2]").has_value());
}

TEST_CASE("rubric files") {
  const RubricTree t = load_rubric_file(fixture("rubrics/five_leaf.json"));
  CHECK(t.size() == 11);
  REQUIRE(t.modules.size() == 5);
  CHECK(t.modules[1].name == "Core Functional Modules");
  CHECK(t.modules[1].rubrics[0].id == "M2.R1");
  CHECK(t.modules[4].rubrics[2].id == "M5.R3");
  CHECK(parse_rubric_tree(rubric_tree_json(t)).size() == 11);
  CHECK(prd_section_index("non-functional requirements") == 2u);
  CHECK(rubric_requirement("[Business Rules] - [One-click import]") == "One-click import");
  CHECK_THROWS_AS(parse_rubric_tree(nlohmann::ordered_json::parse(R"({"rubrics_tree": [{"Marketing": {}}]})")),
                  Error);
}

TEST_CASE("containment judge end to end") {
  const RubricTree rubrics = load_rubric_file(fixture("rubrics/five_leaf.json"));
  Gateway gw = judge_gateway(std::make_shared<ContainmentJudge>());
  MemoryTranscript tx;
  const Evaluator ev(gw, testing_support::prompts(), &tx);
  const std::string prd =
      "## Product Overview\n- Template directory for non-technical site builders\n"
      "## Core Functional Modules\n- Live preview of every template\n- filter templates   by PAGE builder\n"
      "## Business Rules\n- nothing relevant\n";
  const EvaluationReport r = ev.evaluate(prd, rubrics);
  CHECK(r.alignment.rubric_count == 11);
  CHECK(r.alignment.overall == 3.0 / 11.0);
  CHECK(*r.alignment.per_module[0].second == 0.5);
  CHECK(*r.alignment.per_module[1].second == 2.0 / 3.0);
  CHECK(*r.alignment.per_module[4].second == 0.0);
  const auto j = report_json(r, rubrics);
  CHECK(j["scores"].size() == 11);
  CHECK(j["scores"][0]["text"] == rubrics.modules[0].rubrics[0].text);
  CHECK(report_markdown(r).find("| Overall |") != std::string::npos);

  EvaluatorOptions parallel;
  parallel.max_parallel = 4;
  const Evaluator ev2(gw, testing_support::prompts(), nullptr, parallel);
  const EvaluationReport r2 = ev2.evaluate(prd, rubrics);
  CHECK(r2.alignment.overall == r.alignment.overall);
  for (std::size_t m = 0; m < r.modules.size(); ++m) CHECK(r2.modules[m].scores == r.modules[m].scores);
}

TEST_CASE("odd judge replies degrade with warnings") {
  const std::vector<Rubric> rubrics = {{"M1.R1", "[Product Overview] - [alpha]"},
                                       {"M1.R2", "[Product Overview] - [beta]"},
                                       {"M1.R3", "[Product Overview] - [gamma]"}};
  auto judge = script(json::array({
      {{"match", {{"template", "eval_module"}}},
       {"responses", {"garbage", R"({"eval": {"[Product Overview] - [alpha]": 0.6,
                                             "M1.R2": {"score": 1, "reason": "ok"},
                                             "[Product Overview] - [delta]": 1}})"}}},
  }));
  Gateway gw = judge_gateway(judge);
  const Evaluator ev(gw, testing_support::prompts());
  std::vector<std::string> warnings;
  const auto scores = ev.score_module("text", rubrics, &warnings);
  REQUIRE(scores.size() == 3);
  CHECK(scores[0].value == 0.5);
  CHECK(scores[1].value == 1.0);
  CHECK(scores[1].judge_rationale == "ok");
  CHECK(scores[2].value == 0.0);
  // retry, coercion, unknown key, omission
  CHECK(warnings.size() == 4);
}

TEST_CASE("a judge that never answers in json fails after one retry") {
  Gateway gw = judge_gateway(script(json::array({{{"response", "no"}, {"times", -1}}})));
  const Evaluator ev(gw, testing_support::prompts());
  CHECK(code_of([&] { ev.score_module("x", {{"M1.R1", "a"}}); }) == ErrorCode::kJudgeParseError);
  CHECK(code_of([&] { ev.score_module("x", {}); }) == ErrorCode::kEmptyRubricSet);
}

TEST_CASE("progressive reward") {
  {
    Gateway gw = judge_gateway(script(json::array({{{"response", R"({"score": 1, "reason": "new"})"}}})));
    CHECK(Evaluator(gw, testing_support::prompts()).progressive_reward("s", {}, {"a"}) == 1);
  }
  {
    Gateway gw = judge_gateway(script(json::array({{{"response", R"({"score": 0})"}}})));
    CHECK(Evaluator(gw, testing_support::prompts()).progressive_reward("s", {"p"}, {"a"}) == 0);
  }
  {
    Gateway gw = judge_gateway(script(json::array({{{"responses", {"{score: one}", R"({"score": 1})"}}}})));
    std::vector<std::string> warnings;
    CHECK(Evaluator(gw, testing_support::prompts()).progressive_reward("s", {}, {"a"}, &warnings) == 1);
    CHECK(warnings.size() == 1);
  }
  {
    Gateway gw = judge_gateway(script(json::array({{{"response", R"({"score": 0.5})"}, {"times", -1}}})));
    CHECK(code_of([&] { Evaluator(gw, testing_support::prompts()).progressive_reward("s", {}, {"a"}); }) ==
          ErrorCode::kJudgeParseError);
  }
  // Containment: credit only for target points not already covered.
  Gateway gw = judge_gateway(std::make_shared<ContainmentJudge>());
  const Evaluator ev(gw, testing_support::prompts());
  CHECK(ev.progressive_reward("- Live preview", {}, {"[Core] - [Live preview]"}) == 1);
  CHECK(ev.progressive_reward("- Live preview", {"- Live preview"}, {"[Core] - [Live preview]"}) == 0);
}

TEST_CASE("rubric generation places every bullet") {
  Gateway gw = judge_gateway(std::make_shared<ContainmentJudge>());
  const Evaluator ev(gw, testing_support::prompts());
  const IntentSpec intent = load_intent(fixture("intents/case_a.md"));
  std::vector<std::string> warnings;
  const RubricTree t = ev.generate_rubrics(intent.prd_content, &warnings);
  std::size_t bullets = 0;
  for (const auto& line : text::split_lines(intent.prd_content)) {
    const std::string s = text::trim(line);
    bullets += (s.rfind("- ", 0) == 0 || s.rfind("* ", 0) == 0) ? 1 : 0;
  }
  CHECK(t.size() == bullets);
  CHECK(t.modules.size() == 5);
  CHECK(t.modules[0].rubrics.size() > 0);
  CHECK(code_of([&] { ev.generate_rubrics("  "); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("unplaceable rubrics go through the classifier") {
  auto judge = script(json::array({
      {{"match", {{"template", "rubrics_gen"}}},
       {"response", R"({"rubrics": ["[Payments] - [Refunds within 14 days]", "[Look] - [Dark mode]", "  "]})"}},
      {{"match", {{"template", "rubric_classify"}}},
       {"response", R"({"[Payments] - [Refunds within 14 days]": "Business Rules"})"}},
  }));
  Gateway gw = judge_gateway(judge);
  std::vector<std::string> warnings;
  const RubricTree t = Evaluator(gw, testing_support::prompts()).generate_rubrics("# doc", &warnings);
  CHECK(t.size() == 2);
  CHECK(t.modules[4].rubrics.size() == 1);
  CHECK(t.modules[1].rubrics.size() == 1);
  CHECK(warnings.size() == 1);
}
