#include "oversight/driver.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "oversight/desk_backends.hpp"
#include "oversight/json_text.hpp"

namespace oversight {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::string fixed3(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

std::optional<double> opt_number(const ojson& j, const std::string& key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

ojson error_json(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return {{"code", error_code_name(err->code())}, {"message", err->what()}, {"detail", err->detail()}};
  }
  return {{"code", "Internal"}, {"message", e.what()}, {"detail", ""}};
}

ojson metrics_json(const SessionMetrics& m) {
  return {{"total_turns", m.total_turns},
          {"completed_nodes", m.completed_nodes},
          {"avg_turns_per_node", m.avg_turns_per_node ? ojson(*m.avg_turns_per_node) : ojson(nullptr)},
          {"turns_per_node", m.turns_per_node},
          {"dont_care", m.dont_care},
          {"dont_know", m.dont_know}};
}

}  // namespace

ojson run_case(const CaseSpec& spec, const Gateway& gateway, const PromptLibrary& prompts,
               const SessionStore& store, const EngineOptions& engine_options, bool fixed_clock) {
  const IntentSpec intent = load_intent(spec.intent);
  const std::string id = spec.session_id.empty() ? intent.name : spec.session_id;
  if (!valid_session_id(id)) throw Error(ErrorCode::kInvalidArgument, "unusable session id: " + id);
  if (store.exists(id) || fs::exists(store.session_dir(id))) fs::remove_all(store.session_dir(id));

  std::vector<std::string> warnings;
  Engine engine(gateway, prompts, engine_options);
  auto transcript = store.open_transcript(id, fixed_clock);

  std::shared_ptr<UserSimulator> user;
  if (spec.simulator == "oracle") {
    if (spec.oracle.empty()) throw Error(ErrorCode::kConfig, "oracle simulator needs a rules file");
    user = OracleUser::from_file(spec.oracle);
  } else if (spec.simulator == "model") {
    user = std::make_shared<ModelUser>(gateway, prompts, transcript.get());
  } else {
    throw Error(ErrorCode::kConfig, "unknown simulator: " + spec.simulator);
  }

  RunOptions run_options;
  run_options.intermediate_prds = spec.intermediate;
  Session session = run_session(engine, *user, intent, id, transcript.get(), &store, run_options);
  const fs::path dir = store.session_dir(id);

  ojson out = {{"intent", intent.name},
               {"status", "ok"},
               {"session_id", session.id},
               // Relative to the storage root so reports do not depend on where they were written.
               {"dir", (fs::path("sessions") / id).generic_string()},
               {"prd_path", (fs::path("sessions") / id / "prd.md").generic_string()}};
  out["metrics"] = metrics_json(session_metrics(session));

  if (spec.evaluate) {
    Evaluator evaluator(gateway, prompts, transcript.get(), EvaluatorOptions{spec.strict_indicator, 1});
    RubricTree rubrics = spec.rubrics.empty() ? evaluator.generate_rubrics(intent.prd_content, &warnings)
                                              : load_rubric_file(spec.rubrics);
    write_file_atomic(dir / "rubrics.json", rubric_tree_json(rubrics).dump(2) + "\n");

    ojson checkpoints = ojson::array();
    for (const auto& doc : session.intermediate_prds) {
      const EvaluationReport r = evaluator.evaluate(doc.text, rubrics);
      checkpoints.push_back({{"completed_nodes", doc.completed_nodes}, {"overall", r.alignment.overall}});
    }
    const EvaluationReport final_report = evaluator.evaluate(*session.prd, rubrics);
    for (const auto& w : final_report.warnings) warnings.push_back(w);
    write_file_atomic(dir / "eval.json", report_json(final_report, rubrics).dump(2) + "\n");
    write_file_atomic(dir / "eval.md", report_markdown(final_report));

    ojson per_module = ojson::object();
    for (const auto& [name, v] : final_report.alignment.per_module) per_module[name] = v ? ojson(*v) : ojson(nullptr);
    out["rubric_count"] = final_report.alignment.rubric_count;
    out["overall"] = final_report.alignment.overall;
    out["macro_average"] = final_report.alignment.macro_average;
    out["per_module"] = std::move(per_module);
    out["checkpoints"] = std::move(checkpoints);

    if (spec.rewards) {
      std::vector<std::string> points;
      for (const auto& m : rubrics.modules) {
        for (const auto& r : m.rubrics) points.push_back(rubric_requirement(r.text));
      }
      const auto traces = session_traces(session, evaluator, points, final_report.alignment.overall, &warnings);
      std::string lines;
      for (const auto& t : traces) lines += trace_json(t).dump() + "\n";
      write_file_atomic(dir / "traces.jsonl", lines);
      if (traces.empty()) {
        warnings.push_back("rewards: no sequence has user turns");
      } else {
        const RewardReport rr = compute_rewards(traces);
        write_file_atomic(dir / "rewards.json", rewards_json(rr).dump(2) + "\n");
        write_advantages(rr.advantages, dir / "advantages.bin");
        out["reward_aggregate"] = rr.combined.front().aggregate;
      }
    }
  }
  for (const auto& line : session.log) warnings.push_back(line);
  out["warnings"] = warnings;
  return out;
}

Session run_session(const Engine& engine, UserSimulator& user, const IntentSpec& intent, const std::string& id,
                    TranscriptSink* sink, const SessionStore* store, RunOptions options) {
  Session s = engine.initialize_session(intent.query, id, sink);
  if (store) store->save(s);
  const auto cadence = static_cast<std::size_t>(engine.options().prd_cadence);
  for (int step = 0; step < options.max_steps; ++step) {
    const NextStep next = engine.next_question(s, sink);
    switch (next.kind) {
      case NextStep::Kind::kQuestion: {
        const std::string answer =
            user.reply(intent, next.node_path, next.text, s.node_sessions.back().turns, s.context);
        engine.submit_answer(s, next.node_path, answer);
        break;
      }
      case NextStep::Kind::kNodeComplete:
        engine.complete_node(s, next.node_path, sink);
        if (options.intermediate_prds && s.context.size() % cadence == 0) engine.generate_prd(s, true, sink);
        break;
      case NextStep::Kind::kAllComplete:
        engine.generate_prd(s, false, sink);
        if (store) store->save(s);
        return s;
    }
    if (store) store->save(s);
  }
  throw Error(ErrorCode::kInternal, "session " + id + " exceeded " + std::to_string(options.max_steps) + " steps");
}

std::vector<TraceSequence> session_traces(const Session& session, const Evaluator& evaluator,
                                          const std::vector<std::string>& target_points, double outcome,
                                          std::vector<std::string>* warnings) {
  std::vector<TraceSequence> out;
  std::vector<std::string> prior;
  int index = 0;
  for (const auto& ns : session.node_sessions) {
    if (!ns.end_detected || !ns.preference_summary) continue;
    const std::string& summary = *ns.preference_summary;
    if (ns.turns.empty()) {
      if (warnings) warnings->push_back("rewards: node " + format_path(ns.node_path) + " had no user turns; skipped");
      prior.push_back(summary);
      continue;
    }
    TraceSequence t;
    t.query_id = session.id;
    t.seq_index = index++;
    std::size_t words = word_count(summary);
    for (const auto& turn : ns.turns) {
      t.user_turn_feedback.push_back(turn.parsed.kind);
      words += word_count(turn.question) + word_count(turn.answer_raw);
    }
    t.token_count = static_cast<int>(std::max<std::size_t>(words, 1));
    t.eos_position = t.token_count - 1;
    t.progressive = evaluator.progressive_reward(summary, prior, target_points, warnings);
    t.outcome = outcome;
    out.push_back(std::move(t));
    prior.push_back(summary);
  }
  return out;
}

RecordedUser RecordedUser::from_session(const Session& session) {
  std::vector<std::string> answers;
  for (const auto& ns : session.node_sessions) {
    for (const auto& t : ns.turns) answers.push_back(t.answer_raw);
  }
  return RecordedUser(std::move(answers));
}

std::string RecordedUser::reply(const IntentSpec&, const NodePath& node_path, std::string_view,
                                const std::vector<Turn>&, const std::vector<PreferenceEntry>&) {
  if (next_ >= answers_.size()) {
    throw Error(ErrorCode::kScriptExhausted, "no recorded answer left for " + format_path(node_path));
  }
  return answers_[next_++];
}

ReplayResult replay_session(const SessionStore& source, const std::string& id, const SessionStore& target,
                            const PromptLibrary& prompts, int turn_cap) {
  const Session original = source.load(id);
  const fs::path transcript = source.transcript_path(id);
  auto backend = ReplayBackend::from_file(transcript.string(), true);
  Gateway gateway;
  for (auto role : kAllRoles) gateway.set_backend(role, backend);

  RunOptions options;
  options.intermediate_prds = !original.intermediate_prds.empty();
  const int cadence = options.intermediate_prds ? original.intermediate_prds.front().completed_nodes : 5;
  Engine engine(gateway, prompts, EngineOptions{turn_cap, cadence});
  RecordedUser user = RecordedUser::from_session(original);
  IntentSpec intent;
  intent.name = id;
  intent.query = original.origin_query;

  if (target.exists(id)) fs::remove_all(target.session_dir(id));
  ReplayResult out;
  {
    auto writer = target.open_transcript(id, true);
    out.session = run_session(engine, user, intent, id, writer.get(), &target, options);
  }
  // Only the exchanges the loop itself makes are compared; evaluation calls
  // recorded after the run are not replayed.
  const auto src_records = read_transcript(transcript);
  const auto new_records = read_transcript(target.transcript_path(id));
  auto same = [](const nlohmann::json& a, const nlohmann::json& b) {
    for (const char* key : {"seq", "model_role", "request_messages", "response", "template_id"}) {
      if (a.value(key, nlohmann::json()) != b.value(key, nlohmann::json())) return false;
    }
    return true;
  };
  out.exchanges_identical = new_records.size() <= src_records.size() &&
                            std::equal(new_records.begin(), new_records.end(), src_records.begin(), same);
  out.prd_identical = original.prd && out.session.prd && *original.prd == *out.session.prd;
  return out;
}

BenchConfig load_bench_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read bench config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "bench config is not valid JSON", e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p; };
  BenchConfig c;
  try {
    c.method = doc.value("method", c.method);
    c.seed = doc.value("seed", c.seed);
    c.cadence = doc.value("cadence", c.cadence);
    c.workers = doc.value("workers", c.workers);
    c.strict_indicator = doc.value("strict_indicator", c.strict_indicator);
    c.rewards = doc.value("rewards", c.rewards);
    c.simulator = doc.value("simulator", c.simulator);
    if (doc.contains("oracle")) c.oracle = resolve(doc.at("oracle").get<std::string>());
    if (doc.contains("config")) {
      const auto& cfg = doc.at("config");
      c.app = cfg.is_string() ? load_config(resolve(cfg.get<std::string>())) : config_from_json(cfg, base);
    }
    for (const auto& item : doc.at("cases")) {
      BenchCase bc;
      if (item.is_string()) {
        bc.intent = resolve(item.get<std::string>());
      } else {
        bc.intent = resolve(item.at("intent").get<std::string>());
        if (item.contains("rubrics")) bc.rubrics = resolve(item.at("rubrics").get<std::string>());
        if (item.contains("oracle")) bc.oracle = resolve(item.at("oracle").get<std::string>());
      }
      c.cases.push_back(std::move(bc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "invalid bench config", e.what());
  }
  if (c.cadence <= 0 || c.workers <= 0) throw Error(ErrorCode::kConfig, "cadence and workers must be positive");
  if (c.cases.empty()) throw Error(ErrorCode::kConfig, "bench config lists no cases");
  return c;
}

ojson run_benchmark(const BenchConfig& config, const PromptLibrary& prompts, const fs::path& out_dir) {
  SessionStore store(out_dir);
  std::vector<ojson> results(config.cases.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.cases.size(); i = next++) {
      const BenchCase& bc = config.cases[i];
      CaseSpec spec;
      spec.intent = bc.intent;
      spec.rubrics = bc.rubrics;
      spec.oracle = bc.oracle.empty() ? config.oracle : bc.oracle;
      spec.simulator = config.simulator;
      spec.strict_indicator = config.strict_indicator;
      spec.rewards = config.rewards;
      try {
        auto gateway = build_gateway(config.app);  // per case: scripted rule counters stay independent
        results[i] = run_case(spec, *gateway, prompts, store,
                              EngineOptions{config.app.limits.turn_cap, config.cadence}, config.app.fixed_clock);
      } catch (const std::exception& e) {
        std::string name = bc.intent.stem().string();
        try {
          name = load_intent(bc.intent).name;
        } catch (const std::exception&) {
        }
        results[i] = {{"intent", name}, {"status", "failed"}, {"error", error_json(e)}, {"warnings", ojson::array()}};
      }
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), config.cases.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Aggregation is single-threaded and follows case order.
  std::size_t ok = 0;
  double overall = 0.0, macro = 0.0, turns = 0.0, avg_tpn = 0.0;
  std::size_t tpn_n = 0;
  std::vector<std::pair<double, std::size_t>> mod(kPrdSections.size(), {0.0, 0});
  for (const auto& r : results) {
    if (r.at("status") != "ok") continue;
    ++ok;
    overall += r.at("overall").get<double>();
    macro += r.at("macro_average").get<double>();
    turns += r.at("metrics").at("total_turns").get<double>();
    if (auto v = opt_number(r.at("metrics"), "avg_turns_per_node")) {
      avg_tpn += *v;
      ++tpn_n;
    }
    for (std::size_t m = 0; m < kPrdSections.size(); ++m) {
      if (auto v = opt_number(r.at("per_module"), std::string(kPrdSections[m]))) {
        mod[m].first += *v;
        ++mod[m].second;
      }
    }
  }
  ojson per_module = ojson::object();
  for (std::size_t m = 0; m < kPrdSections.size(); ++m) {
    per_module[std::string(kPrdSections[m])] =
        mod[m].second ? ojson(mod[m].first / static_cast<double>(mod[m].second)) : ojson(nullptr);
  }
  const auto mean = [&](double sum, std::size_t n) { return n ? ojson(sum / static_cast<double>(n)) : ojson(nullptr); };

  ojson report = {
      {"header", {{"method", config.method},
                  {"seed", config.seed},
                  {"cadence", config.cadence},
                  {"workers", config.workers},
                  {"simulator", config.simulator},
                  {"strict_indicator", config.strict_indicator},
                  {"case_count", config.cases.size()}}},
      {"cases", results},
      {"aggregate", {{"ok_cases", ok},
                     {"failed_cases", results.size() - ok},
                     {"overall_mean", mean(overall, ok)},
                     {"macro_average_mean", mean(macro, ok)},
                     {"per_module_mean", std::move(per_module)},
                     {"total_turns_mean", mean(turns, ok)},
                     {"avg_turns_per_node_mean", mean(avg_tpn, tpn_n)}}}};

  write_file_atomic(out_dir / "report.json", report.dump(2) + "\n");
  write_file_atomic(out_dir / "report.md", benchmark_markdown(report));
  if (ok == 0) {
    throw Error(ErrorCode::kInternal, "every benchmark case failed", (out_dir / "report.json").string());
  }
  return report;
}

std::string benchmark_markdown(const ojson& report) {
  std::ostringstream md;
  const auto& h = report.at("header");
  md << "# Benchmark: " << h.at("method").get<std::string>() << "\n\n";
  md << "seed " << h.at("seed").get<std::uint64_t>() << ", cadence " << h.at("cadence").get<int>()
     << ", simulator " << h.at("simulator").get<std::string>() << "\n\n";
  md << "| Case | Status |";
  for (auto s : kPrdSections) md << ' ' << s << " |";
  md << " Overall | Turns/node |\n|---|---|";
  for (std::size_t i = 0; i < kPrdSections.size(); ++i) md << "---|";
  md << "---|---|\n";
  for (const auto& c : report.at("cases")) {
    md << "| " << c.at("intent").get<std::string>() << " | " << c.at("status").get<std::string>() << " |";
    const bool ok = c.at("status") == "ok";
    for (auto s : kPrdSections) md << ' ' << (ok ? fixed3(opt_number(c.at("per_module"), std::string(s))) : "-") << " |";
    md << ' ' << (ok ? fixed3(opt_number(c, "overall")) : "-") << " | "
       << (ok ? fixed3(opt_number(c.at("metrics"), "avg_turns_per_node")) : "-") << " |\n";
  }
  const auto& a = report.at("aggregate");
  md << "| **Mean** | " << a.at("ok_cases").get<std::size_t>() << " ok |";
  for (auto s : kPrdSections) md << ' ' << fixed3(opt_number(a.at("per_module_mean"), std::string(s))) << " |";
  md << ' ' << fixed3(opt_number(a, "overall_mean")) << " | " << fixed3(opt_number(a, "avg_turns_per_node_mean"))
     << " |\n";

  bool any_curve = false;
  for (const auto& c : report.at("cases")) {
    if (c.at("status") != "ok" || c.at("checkpoints").empty()) continue;
    if (!any_curve) md << "\n## Alignment by completed nodes\n\n";
    any_curve = true;
    md << "- " << c.at("intent").get<std::string>() << ":";
    for (const auto& cp : c.at("checkpoints")) {
      md << " k=" << cp.at("completed_nodes").get<int>() << ' ' << fixed3(cp.at("overall").get<double>());
    }
    md << '\n';
  }
  return md.str();
}

ojson compare_methods(const std::vector<ojson>& reports) {
  if (reports.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to compare");
  auto intents = [](const ojson& r) {
    std::set<std::string> s;
    for (const auto& c : r.at("cases")) s.insert(c.at("intent").get<std::string>());
    return s;
  };
  const auto base_set = intents(reports.front());
  for (const auto& r : reports) {
    if (intents(r) != base_set) {
      throw Error(ErrorCode::kIntentSetMismatch,
                  "report for " + r.at("header").at("method").get<std::string>() + " covers different intents");
    }
  }
  std::vector<std::string> columns;
  for (auto s : kPrdSections) columns.emplace_back(s);
  columns.emplace_back("overall");
  auto value = [&](const ojson& r, const std::string& col) {
    const auto& a = r.at("aggregate");
    return col == "overall" ? opt_number(a, "overall_mean") : opt_number(a.at("per_module_mean"), col);
  };

  ojson rows = ojson::array();
  ojson best = ojson::object();
  for (const auto& col : columns) {
    std::optional<double> top;
    for (const auto& r : reports) {
      if (auto v = value(r, col); v && (!top || *v > *top)) top = v;
    }
    ojson names = ojson::array();
    for (const auto& r : reports) {
      if (auto v = value(r, col); v && top && *v == *top) names.push_back(r.at("header").at("method"));
    }
    best[col] = std::move(names);
  }
  for (const auto& r : reports) {
    ojson values = ojson::object(), deltas = ojson::object();
    for (const auto& col : columns) {
      const auto v = value(r, col);
      const auto b = value(reports.front(), col);
      values[col] = v ? ojson(*v) : ojson(nullptr);
      deltas[col] = v && b ? ojson(*v - *b) : ojson(nullptr);
    }
    rows.push_back({{"method", r.at("header").at("method")}, {"values", std::move(values)}, {"deltas", std::move(deltas)}});
  }
  return {{"baseline", reports.front().at("header").at("method")},
          {"columns", columns},
          {"rows", std::move(rows)},
          {"best", std::move(best)}};
}

std::string comparison_markdown(const ojson& cmp) {
  std::ostringstream md;
  md << "| Method |";
  for (const auto& c : cmp.at("columns")) md << ' ' << c.get<std::string>() << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < cmp.at("columns").size(); ++i) md << "---|";
  md << '\n';
  for (const auto& row : cmp.at("rows")) {
    const std::string method = row.at("method").get<std::string>();
    md << "| " << method << " |";
    for (const auto& c : cmp.at("columns")) {
      const std::string col = c.get<std::string>();
      const auto v = opt_number(row.at("values"), col);
      const auto d = opt_number(row.at("deltas"), col);
      bool is_best = false;
      for (const auto& b : cmp.at("best").at(col)) is_best = is_best || b == method;
      std::string cell = fixed3(v);
      if (is_best) cell = "**" + cell + "**";
      if (d && method != cmp.at("baseline")) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " (%+.3f)", *d);
        cell += buf;
      }
      md << ' ' << cell << " |";
    }
    md << '\n';
  }
  return md.str();
}

}  // namespace oversight
