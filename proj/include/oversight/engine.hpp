#pragma once

// The elicitation loop: initialize a tree from the query, interview the user
// leaf by leaf, fold each node's specification into the preference context,
// let the updater revise the plan, and finally synthesize the PRD.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "oversight/feedback.hpp"
#include "oversight/gateway.hpp"
#include "oversight/prompts.hpp"
#include "oversight/tree.hpp"

namespace oversight {

inline constexpr std::string_view kEndMarker = "[End of Feature Discussion]";

struct Turn {
  std::string question;
  std::string answer_raw;
  UserFeedback parsed;
};

struct NodeSession {
  NodePath node_path;
  std::vector<Turn> turns;
  std::optional<std::string> pending_question;
  std::optional<std::string> preference_summary;
  bool end_detected = false;
  bool forced = false;  // closed by the turn cap rather than the policy
};

struct PreferenceEntry {
  NodePath node_path;
  std::string summary;
  int tree_version = 0;
};

struct TreeRevision {
  RequirementTree tree;
  std::string cause;  // init | update | no_change | rejected
  NodePath after_node;
  std::optional<std::string> error;
  std::vector<std::string> warnings;
};

struct IntermediatePrd {
  int completed_nodes = 0;
  std::string text;
};

enum class SessionStatus { kRunning, kAwaitingUser, kGenerating, kDone, kFailed };

std::string_view session_status_name(SessionStatus s) noexcept;
SessionStatus session_status_from_name(std::string_view name);

struct Session {
  std::string id;
  std::string origin_query;
  std::vector<TreeRevision> tree_history;  // never empty once initialized
  std::vector<PreferenceEntry> context;
  std::vector<NodeSession> node_sessions;
  SessionStatus status = SessionStatus::kRunning;
  std::optional<std::string> prd;
  std::vector<IntermediatePrd> intermediate_prds;
  std::vector<std::string> log;

  const RequirementTree& tree() const { return tree_history.back().tree; }
  /// Node session whose specification arrived but is not yet folded in.
  const NodeSession* pending_completion() const;
};

struct SessionMetrics {
  int total_turns = 0;
  int completed_nodes = 0;
  std::optional<double> avg_turns_per_node;  // absent with zero completed nodes
  std::vector<int> turns_per_node;
  int dont_care = 0;
  int dont_know = 0;
};

/// Counts user turns only.
SessionMetrics session_metrics(const Session& session);

struct NextStep {
  enum class Kind { kQuestion, kNodeComplete, kAllComplete };
  Kind kind = Kind::kAllComplete;
  NodePath node_path;
  std::string text;  // question, or the node summary on completion
};

struct EngineOptions {
  int turn_cap = 12;     // assistant questions per node before the nudge
  int prd_cadence = 5;   // intermediate PRD every N completed nodes
};

/// Spec block from the last "## ...Specification" heading up to the end
/// marker.  Without such a heading the whole text before the marker is
/// returned and `heading_found` is cleared.
std::string extract_specification(std::string_view assistant_text, bool* heading_found = nullptr);

class Engine {
 public:
  Engine(const Gateway& gateway, const PromptLibrary& prompts, EngineOptions options = {});

  /// One tree_init exchange plus at most one repair exchange.
  Session initialize_session(std::string_view query, std::string id,
                             TranscriptSink* sink = nullptr) const;

  /// Folds in a finished node first if needed, then advances one assistant step.
  NextStep next_question(Session& session, TranscriptSink* sink = nullptr) const;

  Turn submit_answer(Session& session, const NodePath& node_path, std::string_view answer_raw) const;

  /// Appends the node's preference, marks it processed and runs the updater.
  void complete_node(Session& session, const NodePath& node_path,
                     TranscriptSink* sink = nullptr) const;

  /// Final documents require every target processed; intermediate ones need
  /// one completed node and use only the summaries so far.
  std::string generate_prd(Session& session, bool intermediate, TranscriptSink* sink = nullptr) const;

  const EngineOptions& options() const noexcept { return options_; }

  // Slot bodies shared with tests and with the desk-scale backends.
  static std::string combined_specs(const std::vector<PreferenceEntry>& context);
  static std::string accumulated_context(const std::vector<PreferenceEntry>& context);
  static std::string remaining_node_info(const RequirementTree& tree);

 private:
  std::vector<ChatMessage> node_messages(const Session& session, const TreeNode& node,
                                         const NodeSession& ns, SlotMap& slots) const;

  const Gateway& gateway_;
  const PromptLibrary& prompts_;
  EngineOptions options_;
};

void to_json(nlohmann::json& j, const Session& s);
void from_json(const nlohmann::json& j, Session& s);

}  // namespace oversight
