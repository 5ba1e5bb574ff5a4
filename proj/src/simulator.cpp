#include "oversight/simulator.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "oversight/json_text.hpp"

namespace oversight {

IntentSpec parse_intent(std::string_view markdown, std::string name) {
  IntentSpec spec;
  spec.name = std::move(name);
  std::string body(markdown);
  if (body.rfind("---", 0) == 0) {
    const auto end = body.find("\n---", 3);
    if (end == std::string::npos) throw Error(ErrorCode::kConfig, "unterminated front matter");
    try {
      const YAML::Node meta = YAML::Load(body.substr(3, end - 3));
      if (meta["query"]) spec.query = text::trim(meta["query"].as<std::string>());
      if (meta["name"] && spec.name.empty()) spec.name = meta["name"].as<std::string>();
      if (meta["persona"]) spec.persona_constraints = meta["persona"].as<std::string>();
    } catch (const YAML::Exception& e) {
      throw Error(ErrorCode::kConfig, std::string("bad intent front matter: ") + e.what());
    }
    const auto nl = body.find('\n', end + 1);
    body = nl == std::string::npos ? std::string() : body.substr(nl + 1);
  }
  spec.prd_content = text::trim(body);
  if (spec.prd_content.empty()) throw Error(ErrorCode::kInvalidArgument, "intent has no PRD content");
  if (spec.query.empty()) throw Error(ErrorCode::kInvalidArgument, "intent has no query");
  return spec;
}

IntentSpec load_intent(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open intent " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_intent(ss.str(), path.stem().string());
}

// --- oracle --------------------------------------------------------------------

namespace {

bool mentions_any(std::string_view text, const std::vector<std::string>& keywords) {
  for (const auto& k : keywords) {
    if (text::contains_ci(text, k)) return true;
  }
  return false;
}

std::vector<std::string> string_list(const YAML::Node& n) {
  std::vector<std::string> out;
  if (!n) return out;
  if (n.IsScalar()) return {n.as<std::string>()};
  for (const auto& v : n) out.push_back(v.as<std::string>());
  return out;
}

OracleRule rule_from_yaml(const YAML::Node& n) {
  OracleRule r;
  r.trigger_keywords = string_list(n["trigger_keywords"]);
  r.care_scope = string_list(n["care_scope"]);
  const YAML::Node resp = n["response"];
  if (!resp) throw Error(ErrorCode::kConfig, "oracle rule without response");
  if (resp.IsScalar()) {
    // Shorthand: the answer string itself, e.g. "[A > C]".
    r.response = parse_feedback(resp.as<std::string>());
  } else {
    r.response.kind = feedback_kind_from_name(resp["kind"].as<std::string>());
    r.response.payload = string_list(resp["payload"]);
  }
  const bool refusal =
      r.response.kind == FeedbackKind::kDontCare || r.response.kind == FeedbackKind::kDontKnow;
  if (refusal) {
    r.response.payload.clear();
    r.response.confidence.reset();
  } else {
    r.response.confidence = n["confidence"] ? n["confidence"].as<double>() : 0.9;
    if (*r.response.confidence < 0.0 || *r.response.confidence > 1.0) {
      throw Error(ErrorCode::kConfig, "oracle confidence outside [0,1]");
    }
  }
  return r;
}

}  // namespace

OracleUser::OracleUser(std::vector<OracleRule> rules, std::vector<std::string> care_scope,
                       FeedbackStyle style)
    : rules_(std::move(rules)), care_scope_(std::move(care_scope)), style_(style) {
  const bool has_default = std::any_of(rules_.begin(), rules_.end(), [](const OracleRule& r) {
    return r.trigger_keywords.empty();
  });
  if (!has_default) throw Error(ErrorCode::kConfig, "oracle rules need a default rule (no triggers)");
}

std::shared_ptr<OracleUser> OracleUser::from_text(std::string_view source) {
  try {
    // JSON is a YAML subset, so one loader serves both.
    const YAML::Node doc = YAML::Load(std::string(source));
    const YAML::Node rules_node = doc.IsSequence() ? doc : doc["rules"];
    if (!rules_node || !rules_node.IsSequence()) throw Error(ErrorCode::kConfig, "oracle file has no rules list");
    std::vector<OracleRule> rules;
    for (const auto& n : rules_node) rules.push_back(rule_from_yaml(n));
    std::vector<std::string> scope;
    FeedbackStyle style = FeedbackStyle::kAnswerLine;
    if (doc.IsMap()) {
      scope = string_list(doc["care_scope"]);
      if (doc["style"]) {
        const auto name = doc["style"].as<std::string>();
        if (name == "compact") {
          style = FeedbackStyle::kCompact;
        } else if (name != "answer_line") {
          throw Error(ErrorCode::kConfig, "unknown oracle style: " + name);
        }
      }
    }
    return std::make_shared<OracleUser>(std::move(rules), std::move(scope), style);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kConfig, std::string("bad oracle rules: ") + e.what());
  }
}

std::shared_ptr<OracleUser> OracleUser::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open oracle rules " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

UserFeedback OracleUser::decide(std::string_view question) const {
  UserFeedback dont_care{FeedbackKind::kDontCare, {}, std::nullopt};
  if (!care_scope_.empty() && !mentions_any(question, care_scope_)) return dont_care;
  for (const auto& r : rules_) {
    if (!r.trigger_keywords.empty() && !mentions_any(question, r.trigger_keywords)) continue;
    if (!r.care_scope.empty() && !mentions_any(question, r.care_scope)) return dont_care;
    return r.response;
  }
  return dont_care;  // unreachable: the constructor demands a default rule
}

std::string OracleUser::reply(const IntentSpec&, const NodePath&, std::string_view question,
                              const std::vector<Turn>&, const std::vector<PreferenceEntry>&) {
  if (text::trim(question).empty()) throw Error(ErrorCode::kInvalidArgument, "empty question");
  return render_feedback(decide(question), style_);
}

// --- model-backed user ---------------------------------------------------------

ModelUser::ModelUser(const Gateway& gateway, const PromptLibrary& prompts, TranscriptSink* sink)
    : gateway_(gateway), prompts_(prompts), sink_(sink) {}

std::string ModelUser::reply(const IntentSpec& intent, const NodePath& node_path,
                             std::string_view question, const std::vector<Turn>& history,
                             const std::vector<PreferenceEntry>& confirmed) {
  if (text::trim(question).empty()) throw Error(ErrorCode::kInvalidArgument, "empty question");
  ChatRequest req;
  req.model_role = ModelRole::kUserSim;
  req.template_id = PromptId::kUserSim;
  req.slots = {{"prd_content", intent.prd_content},
               {"node.name", node_path.empty() ? std::string() : node_path.back()},
               {"context_path", format_path(node_path)}};
  std::string system = prompts_.render(PromptId::kUserSim, req.slots);
  if (!intent.persona_constraints.empty()) system += "\n\n" + intent.persona_constraints;
  req.messages.push_back({MessageRole::kSystem, std::move(system)});

  // The product manager's questions arrive as user messages; our earlier
  // answers are the assistant side.  Specifications confirmed on earlier
  // nodes lead the first question so the answers stay consistent.
  std::string first_prefix;
  if (!confirmed.empty()) {
    first_prefix = "Previously confirmed specifications:\n\n" + Engine::combined_specs(confirmed) + "\n\n";
  }
  bool first = true;
  for (const auto& t : history) {
    req.messages.push_back({MessageRole::kUser, (first ? first_prefix : std::string()) + t.question});
    req.messages.push_back({MessageRole::kAssistant, t.answer_raw});
    first = false;
  }
  req.messages.push_back({MessageRole::kUser, (first ? first_prefix : std::string()) + std::string(question)});
  return gateway_.complete(std::move(req), sink_).response;
}

Agreement measure_agreement(const std::vector<UserFeedback>& a, const std::vector<UserFeedback>& b,
                            bool include_free_text) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, "agreement needs equally long reply lists");
  }
  Agreement out;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool free = a[i].kind == FeedbackKind::kFreeText || b[i].kind == FeedbackKind::kFreeText;
    if (free && !include_free_text) {
      ++out.excluded_free_text;
      continue;
    }
    ++out.compared;
    if (a[i].kind == b[i].kind && a[i].payload == b[i].payload) ++same;
  }
  out.value = out.compared ? static_cast<double>(same) / static_cast<double>(out.compared)
                           : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace oversight
