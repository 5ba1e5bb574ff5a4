#include "oversight/engine.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "oversight/json_text.hpp"

namespace oversight {
namespace {

constexpr std::string_view kCapNudge =
    "The question budget for this feature is used up. Do not ask further questions. "
    "Output the final feature specification now in the required format and end with "
    "\"[End of Feature Discussion]\".";

std::string repair_request(const Error& e) {
  return "Your previous output could not be used as the interview plan (" + std::string(e.what()) +
         "). Output only the corrected JSON plan with exactly five top-level modules, in the "
         "structured format described above.";
}

bool is_heading2(std::string_view line) { return line.size() > 3 && line.substr(0, 3) == "## "; }

}  // namespace

std::string_view session_status_name(SessionStatus s) noexcept {
  switch (s) {
    case SessionStatus::kRunning: return "running";
    case SessionStatus::kAwaitingUser: return "awaiting_user";
    case SessionStatus::kGenerating: return "generating";
    case SessionStatus::kDone: return "done";
    case SessionStatus::kFailed: return "failed";
  }
  return "running";
}

SessionStatus session_status_from_name(std::string_view name) {
  for (auto s : {SessionStatus::kRunning, SessionStatus::kAwaitingUser, SessionStatus::kGenerating,
                 SessionStatus::kDone, SessionStatus::kFailed}) {
    if (session_status_name(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown session status: " + std::string(name));
}

const NodeSession* Session::pending_completion() const {
  // Every ended node session yields exactly one context entry, in order.
  const auto ended = std::count_if(node_sessions.begin(), node_sessions.end(),
                                   [](const NodeSession& n) { return n.end_detected; });
  if (static_cast<std::size_t>(ended) > context.size()) return &node_sessions.back();
  return nullptr;
}

SessionMetrics session_metrics(const Session& session) {
  SessionMetrics m;
  for (const auto& ns : session.node_sessions) {
    const int turns = static_cast<int>(ns.turns.size());
    m.total_turns += turns;
    for (const auto& t : ns.turns) {
      if (t.parsed.kind == FeedbackKind::kDontCare) ++m.dont_care;
      if (t.parsed.kind == FeedbackKind::kDontKnow) ++m.dont_know;
    }
    if (ns.end_detected) {
      ++m.completed_nodes;
      m.turns_per_node.push_back(turns);
    }
  }
  if (m.completed_nodes > 0) {
    m.avg_turns_per_node = static_cast<double>(m.total_turns) / m.completed_nodes;
  }
  return m;
}

std::string extract_specification(std::string_view text, bool* heading_found) {
  const auto marker = text.find(kEndMarker);
  const std::string_view before = text.substr(0, marker);

  // Walk lines, remembering the offset of the last level-2 heading that
  // names a specification.
  std::optional<std::size_t> start;
  std::size_t pos = 0;
  while (pos < before.size()) {
    auto eol = before.find('\n', pos);
    if (eol == std::string_view::npos) eol = before.size();
    std::string_view line = before.substr(pos, eol - pos);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (is_heading2(line) && text::contains_ci(line, "specification")) start = pos;
    pos = eol + 1;
  }
  if (heading_found) *heading_found = start.has_value();
  return text::trim(start ? before.substr(*start) : before);
}

Engine::Engine(const Gateway& gateway, const PromptLibrary& prompts, EngineOptions options)
    : gateway_(gateway), prompts_(prompts), options_(options) {
  if (options_.turn_cap <= 0 || options_.prd_cadence <= 0) {
    throw Error(ErrorCode::kConfig, "turn_cap and prd_cadence must be positive");
  }
}

Session Engine::initialize_session(std::string_view query, std::string id, TranscriptSink* sink) const {
  const std::string q = text::trim(query);
  if (q.empty()) throw Error(ErrorCode::kInvalidArgument, "query must be nonempty");

  ChatRequest req;
  req.model_role = ModelRole::kTreeUpdater;
  req.template_id = PromptId::kTreeInit;
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kTreeInit, {})},
                  {MessageRole::kUser, q}};

  Session s;
  s.id = std::move(id);
  s.origin_query = q;

  std::optional<RequirementTree> tree;
  std::string last_error;
  for (int attempt = 0; attempt < 2 && !tree; ++attempt) {
    const ChatExchange ex = gateway_.complete(req, sink);
    try {
      tree = parse_tree(ex.response, ParseMode::kStrict);
    } catch (const Error& e) {
      last_error = std::string(error_code_name(e.code())) + ": " + e.what();
      s.log.push_back("tree_init attempt " + std::to_string(attempt + 1) + " rejected: " + last_error);
      req.messages.push_back({MessageRole::kAssistant, ex.response});
      req.messages.push_back({MessageRole::kUser, repair_request(e)});
    }
  }
  if (!tree) throw Error(ErrorCode::kTreeInitFailed, "tree initialization failed", last_error);

  tree->version = 0;
  tree->origin_query = q;
  s.tree_history.push_back({std::move(*tree), "init", {}, std::nullopt, {}});
  s.status = SessionStatus::kRunning;
  return s;
}

std::vector<ChatMessage> Engine::node_messages(const Session& session, const TreeNode& node,
                                               const NodeSession& ns, SlotMap& slots) const {
  slots = {{"node.name", node.name},
           {"node.description", node.description},
           {"context_path", format_path(node.full_path())},
           {"feature_goals", render_feature_goals(node.features)},
           {"original_query", session.origin_query}};

  std::string kickoff = session.origin_query;
  if (!session.context.empty()) {
    kickoff += "\n\n# Confirmed Specifications of Earlier Features\n\n" + combined_specs(session.context);
  }
  std::vector<ChatMessage> msgs = {
      {MessageRole::kSystem, prompts_.render(PromptId::kInteractionSystem, slots)},
      {MessageRole::kUser, std::move(kickoff)}};
  for (const auto& t : ns.turns) {
    msgs.push_back({MessageRole::kAssistant, t.question});
    msgs.push_back({MessageRole::kUser, t.answer_raw});
  }
  return msgs;
}

NextStep Engine::next_question(Session& session, TranscriptSink* sink) const {
  if (session.tree_history.empty()) throw Error(ErrorCode::kInvalidArgument, "session not initialized");
  if (session.status == SessionStatus::kAwaitingUser) {
    throw Error(ErrorCode::kAwaitingAnswer, "session is awaiting an answer");
  }
  if (const NodeSession* done = session.pending_completion()) {
    complete_node(session, done->node_path, sink);
  }
  const auto target = next_unresolved(session.tree());
  if (!target) {
    if (session.status == SessionStatus::kRunning) session.status = SessionStatus::kGenerating;
    return {NextStep::Kind::kAllComplete, {}, {}};
  }
  const NodePath path = target->full_path();

  if (session.node_sessions.empty() || session.node_sessions.back().node_path != path ||
      session.node_sessions.back().end_detected) {
    NodeSession ns;
    ns.node_path = path;
    session.node_sessions.push_back(std::move(ns));
  }
  NodeSession& ns = session.node_sessions.back();

  ChatRequest req;
  req.model_role = ModelRole::kInteractionPolicy;
  req.template_id = PromptId::kInteractionSystem;
  req.messages = node_messages(session, *target, ns, req.slots);
  const bool capped = static_cast<int>(ns.turns.size()) >= options_.turn_cap;
  if (capped) req.messages.push_back({MessageRole::kSystem, std::string(kCapNudge)});

  const ChatExchange ex = gateway_.complete(std::move(req), sink);

  if (ex.response.find(kEndMarker) != std::string::npos) {
    bool heading = false;
    ns.preference_summary = extract_specification(ex.response, &heading);
    if (!heading) {
      session.log.push_back("MarkerWithoutSpec at " + format_path(path) +
                            ": no specification heading before the end marker; using raw text");
    }
    ns.end_detected = true;
    return {NextStep::Kind::kNodeComplete, path, *ns.preference_summary};
  }
  if (capped) {
    ns.preference_summary = text::trim(ex.response);
    ns.end_detected = true;
    ns.forced = true;
    session.log.push_back("turn cap reached at " + format_path(path) +
                          ": no end marker after the nudge; closing the node with the raw reply");
    return {NextStep::Kind::kNodeComplete, path, *ns.preference_summary};
  }
  ns.pending_question = ex.response;
  session.status = SessionStatus::kAwaitingUser;
  return {NextStep::Kind::kQuestion, path, ex.response};
}

Turn Engine::submit_answer(Session& session, const NodePath& node_path, std::string_view answer_raw) const {
  if (session.status != SessionStatus::kAwaitingUser || session.node_sessions.empty() ||
      !session.node_sessions.back().pending_question) {
    throw Error(ErrorCode::kSessionNotAwaiting, "session is not awaiting an answer");
  }
  NodeSession& ns = session.node_sessions.back();
  if (ns.node_path != node_path) {
    throw Error(ErrorCode::kNodeMismatch, "answer targets " + format_path(node_path) +
                                              " but the open question is on " + format_path(ns.node_path));
  }
  Turn turn{*ns.pending_question, std::string(answer_raw), parse_feedback(answer_raw)};
  ns.turns.push_back(turn);
  ns.pending_question.reset();
  session.status = SessionStatus::kRunning;
  return turn;
}

void Engine::complete_node(Session& session, const NodePath& node_path, TranscriptSink* sink) const {
  const NodeSession* done = session.pending_completion();
  if (!done) throw Error(ErrorCode::kNodeMismatch, "no finished node awaits completion");
  if (done->node_path != node_path) {
    throw Error(ErrorCode::kNodeMismatch, "finished node is " + format_path(done->node_path) +
                                              ", not " + format_path(node_path));
  }
  const RequirementTree& current = session.tree();
  const TreeNode* node = current.find(node_path);
  if (!node) throw Error(ErrorCode::kNodeMismatch, "node vanished: " + format_path(node_path));

  session.context.push_back({node_path, *done->preference_summary, current.version});
  RequirementTree marked = mark_processed(current, node_path);

  ChatRequest req;
  req.model_role = ModelRole::kTreeUpdater;
  req.template_id = PromptId::kTreeUpdate;
  req.slots = {{"original_query", session.origin_query},
               {"completed_node.name", node->name},
               {"completed_node.path", format_path(node_path)},
               {"completed_node.description", node->description},
               {"accumulated_context", accumulated_context(session.context)},
               {"current_plan", serialize_tree(marked)},
               {"remaining_node_info", remaining_node_info(marked)}};
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kTreeUpdate, req.slots)}};

  TreeRevision rev;
  rev.after_node = node_path;
  try {
    const ChatExchange ex = gateway_.complete(std::move(req), sink);
    UpdateOutcome out = apply_update(marked, ex.response);
    rev.warnings = std::move(out.warnings);
    if (out.accepted()) {
      rev.cause = out.no_change ? "no_change" : "update";
      rev.tree = std::move(out.tree);
    } else {
      rev.error = std::string(error_code_name(out.error->code())) + ": " + out.error->what();
    }
  } catch (const Error& e) {
    rev.error = std::string(error_code_name(e.code())) + ": " + e.what();
  }
  if (rev.error) {
    // Keep the processed flag even though the revision itself was refused.
    rev.cause = "rejected";
    marked.version += 1;
    rev.tree = std::move(marked);
    session.log.push_back("tree update after " + format_path(node_path) + " rejected: " + *rev.error);
  }
  for (const auto& w : rev.warnings) session.log.push_back("tree update: " + w);
  session.tree_history.push_back(std::move(rev));
  if (session.status == SessionStatus::kAwaitingUser) session.status = SessionStatus::kRunning;
}

std::string Engine::generate_prd(Session& session, bool intermediate, TranscriptSink* sink) const {
  if (session.tree_history.empty()) throw Error(ErrorCode::kInvalidArgument, "session not initialized");
  if (intermediate) {
    if (session.context.empty()) {
      throw Error(ErrorCode::kSessionIncomplete, "intermediate PRD needs at least one completed node");
    }
  } else if (session.pending_completion() || session.tree().unprocessed_target_count() != 0 ||
             session.status == SessionStatus::kAwaitingUser) {
    throw Error(ErrorCode::kSessionIncomplete, "final PRD requested before all nodes are complete");
  }

  ChatRequest req;
  req.model_role = ModelRole::kDocGenerator;
  req.template_id = PromptId::kDocGenerator;
  req.slots = {{"original_query", session.origin_query},
               {"module_context", "# Feature Module Structure\n```json\n" +
                                      serialize_tree(session.tree()) + "\n```"},
               {"combined_specs", combined_specs(session.context)}};
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kDocGenerator, req.slots)}};

  const auto prior = session.status;
  if (!intermediate) session.status = SessionStatus::kGenerating;
  std::string text;
  try {
    text = gateway_.complete(std::move(req), sink).response;
  } catch (...) {
    session.status = prior;
    throw;
  }
  if (intermediate) {
    session.intermediate_prds.push_back({static_cast<int>(session.context.size()), text});
  } else {
    session.prd = text;
    session.status = SessionStatus::kDone;
  }
  return text;
}

std::string Engine::combined_specs(const std::vector<PreferenceEntry>& context) {
  std::vector<std::string> parts;
  for (const auto& e : context) parts.push_back(e.summary);
  return text::join(parts, "\n\n");
}

std::string Engine::accumulated_context(const std::vector<PreferenceEntry>& context) {
  std::string out = "## Accumulated User Preferences";
  for (const auto& e : context) out += "\n\n### " + format_path(e.node_path) + "\n" + e.summary;
  return out;
}

std::string Engine::remaining_node_info(const RequirementTree& tree) {
  std::vector<std::string> lines;
  for (const TreeNode* n : tree.leaf_targets()) {
    if (n->is_processed) continue;
    lines.push_back("- " + format_path(n->full_path()) + ": " + n->description);
  }
  return lines.empty() ? "- (none)" : text::join(lines, "\n");
}

// --- persistence ------------------------------------------------------------

namespace {

nlohmann::json path_json(const NodePath& p) { return nlohmann::json(p); }

nlohmann::json turn_json(const Turn& t) {
  return {{"question", t.question}, {"answer_raw", t.answer_raw}, {"parsed", t.parsed}};
}

}  // namespace

void to_json(nlohmann::json& j, const Session& s) {
  j = nlohmann::json::object();
  j["id"] = s.id;
  j["origin_query"] = s.origin_query;
  j["status"] = session_status_name(s.status);
  auto& hist = j["tree_history"] = nlohmann::json::array();
  for (const auto& r : s.tree_history) {
    hist.push_back({{"version", r.tree.version},
                    {"cause", r.cause},
                    {"after_node", path_json(r.after_node)},
                    {"error", r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr)},
                    {"warnings", r.warnings},
                    // Kept as text: sibling order is significant and the
                    // object type used here sorts keys.
                    {"tree_json", serialize_tree(r.tree, -1)}});
  }
  auto& ctx = j["context"] = nlohmann::json::array();
  for (const auto& e : s.context) {
    ctx.push_back({{"node_path", path_json(e.node_path)},
                   {"summary", e.summary},
                   {"tree_version", e.tree_version}});
  }
  auto& nss = j["node_sessions"] = nlohmann::json::array();
  for (const auto& ns : s.node_sessions) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : ns.turns) turns.push_back(turn_json(t));
    nss.push_back({{"node_path", path_json(ns.node_path)},
                   {"turns", std::move(turns)},
                   {"pending_question", ns.pending_question ? nlohmann::json(*ns.pending_question)
                                                            : nlohmann::json(nullptr)},
                   {"preference_summary", ns.preference_summary
                                              ? nlohmann::json(*ns.preference_summary)
                                              : nlohmann::json(nullptr)},
                   {"end_detected", ns.end_detected},
                   {"forced", ns.forced}});
  }
  j["prd"] = s.prd ? nlohmann::json(*s.prd) : nlohmann::json(nullptr);
  auto& inter = j["intermediate_prds"] = nlohmann::json::array();
  for (const auto& p : s.intermediate_prds) {
    inter.push_back({{"completed_nodes", p.completed_nodes}, {"text", p.text}});
  }
  j["log"] = s.log;
}

void from_json(const nlohmann::json& j, Session& s) {
  auto opt_str = [](const nlohmann::json& v) -> std::optional<std::string> {
    if (v.is_null()) return std::nullopt;
    return v.get<std::string>();
  };
  s = Session{};
  s.id = j.at("id").get<std::string>();
  s.origin_query = j.at("origin_query").get<std::string>();
  s.status = session_status_from_name(j.at("status").get<std::string>());
  for (const auto& r : j.at("tree_history")) {
    TreeRevision rev;
    rev.tree = parse_tree(r.at("tree_json").get<std::string>(), ParseMode::kLenient);
    rev.tree.version = r.at("version").get<int>();
    rev.tree.origin_query = s.origin_query;
    rev.cause = r.at("cause").get<std::string>();
    rev.after_node = r.at("after_node").get<NodePath>();
    rev.error = opt_str(r.at("error"));
    rev.warnings = r.at("warnings").get<std::vector<std::string>>();
    s.tree_history.push_back(std::move(rev));
  }
  for (const auto& e : j.at("context")) {
    s.context.push_back({e.at("node_path").get<NodePath>(), e.at("summary").get<std::string>(),
                         e.at("tree_version").get<int>()});
  }
  for (const auto& n : j.at("node_sessions")) {
    NodeSession ns;
    ns.node_path = n.at("node_path").get<NodePath>();
    for (const auto& t : n.at("turns")) {
      ns.turns.push_back({t.at("question").get<std::string>(), t.at("answer_raw").get<std::string>(),
                          t.at("parsed").get<UserFeedback>()});
    }
    ns.pending_question = opt_str(n.at("pending_question"));
    ns.preference_summary = opt_str(n.at("preference_summary"));
    ns.end_detected = n.at("end_detected").get<bool>();
    ns.forced = n.value("forced", false);
    s.node_sessions.push_back(std::move(ns));
  }
  s.prd = opt_str(j.at("prd"));
  for (const auto& p : j.at("intermediate_prds")) {
    s.intermediate_prds.push_back({p.at("completed_nodes").get<int>(), p.at("text").get<std::string>()});
  }
  s.log = j.value("log", std::vector<std::string>{});
}

}  // namespace oversight
