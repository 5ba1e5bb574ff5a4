#pragma once

// Batch harness: drive sessions against simulated users, score checkpoints,
// aggregate per-case artifacts into reports and compare methods.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oversight/config.hpp"
#include "oversight/engine.hpp"
#include "oversight/evaluator.hpp"
#include "oversight/rewards.hpp"
#include "oversight/session_store.hpp"
#include "oversight/simulator.hpp"

namespace oversight {

struct RunOptions {
  bool intermediate_prds = true;  // one every engine.options().prd_cadence nodes
  int max_steps = 100000;         // guards against a policy that never ends
};

/// initialize -> (next -> answer)* -> final PRD.  Each finished node is folded
/// in immediately.  Saves after every transition when a store is given.
Session run_session(const Engine& engine, UserSimulator& user, const IntentSpec& intent, const std::string& id,
                    TranscriptSink* sink = nullptr, const SessionStore* store = nullptr, RunOptions options = {});

/// One trace per node session: its user-turn feedback, PR from the judge and
/// the query's OR.  token_count is a whitespace word count of the node
/// dialogue, standing in for a tokenizer.
std::vector<TraceSequence> session_traces(const Session& session, const Evaluator& evaluator,
                                          const std::vector<std::string>& target_points, double outcome,
                                          std::vector<std::string>* warnings = nullptr);

/// Answers from a fixed list in order; throws ScriptExhausted when it runs dry.
class RecordedUser : public UserSimulator {
 public:
  explicit RecordedUser(std::vector<std::string> answers) : answers_(std::move(answers)) {}
  /// Every recorded answer of a session, in turn order.
  static RecordedUser from_session(const Session& session);
  std::string reply(const IntentSpec& intent, const NodePath& node_path, std::string_view question,
                    const std::vector<Turn>& history, const std::vector<PreferenceEntry>& confirmed) override;

 private:
  std::vector<std::string> answers_;
  std::size_t next_ = 0;
};

struct ReplayResult {
  Session session;
  bool exchanges_identical = false;  // same requests and responses as the source, in order
  bool prd_identical = false;
};

/// Re-executes stored session `id` into `target`: every model role is served
/// from the source transcript (requests verified) and every answer from the
/// recorded turns.  Intermediate documents are regenerated at the cadence the
/// source used.
ReplayResult replay_session(const SessionStore& source, const std::string& id, const SessionStore& target,
                            const PromptLibrary& prompts, int turn_cap = 12);

struct CaseSpec {
  std::filesystem::path intent;
  std::filesystem::path rubrics;  // empty: generated from the intent's reference PRD
  std::filesystem::path oracle;
  std::string simulator = "oracle";  // oracle | model
  std::string session_id;            // empty: the intent name
  bool intermediate = true;
  bool evaluate = true;
  bool strict_indicator = false;
  bool rewards = false;
};

/// Runs one intent end to end and writes its artifacts (session files,
/// rubrics.json, eval.{json,md}, optionally traces.jsonl, rewards.json and
/// advantages.{bin,json}) into the session directory, replacing an earlier
/// run of the same id.  Returns the case summary; throws on failure.
nlohmann::ordered_json run_case(const CaseSpec& spec, const Gateway& gateway, const PromptLibrary& prompts,
                                const SessionStore& store, const EngineOptions& engine_options,
                                bool fixed_clock);

struct BenchCase {
  std::filesystem::path intent;
  std::filesystem::path rubrics;  // empty: generated from the intent's reference PRD
  std::filesystem::path oracle;   // oracle rules; falls back to BenchConfig::oracle
};

struct BenchConfig {
  std::string method = "default";
  std::uint64_t seed = 0;
  int cadence = 5;
  int workers = 1;
  bool strict_indicator = false;
  bool rewards = false;
  std::string simulator = "oracle";  // oracle | model
  std::filesystem::path oracle;
  std::vector<BenchCase> cases;
  AppConfig app;
};

/// {"method", "seed", "cadence", "workers", "strict_indicator", "rewards", "simulator",
///  "oracle", "config": path | {...app config...}, "cases": [{"intent", "rubrics"?, "oracle"?}]}
BenchConfig load_bench_config(const std::filesystem::path& path);

/// Writes sessions/{name}/... and report.{json,md} under out_dir and returns the
/// report.  Throws only when every case failed.
nlohmann::ordered_json run_benchmark(const BenchConfig& config, const PromptLibrary& prompts,
                                     const std::filesystem::path& out_dir);
std::string benchmark_markdown(const nlohmann::ordered_json& report);

/// Deltas of every report against the first; best value per column marked.
/// Throws IntentSetMismatch unless all reports cover the same intents.
nlohmann::ordered_json compare_methods(const std::vector<nlohmann::ordered_json>& reports);
std::string comparison_markdown(const nlohmann::ordered_json& comparison);

}  // namespace oversight
