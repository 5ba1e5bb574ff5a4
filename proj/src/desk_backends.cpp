#include "oversight/desk_backends.hpp"

#include <regex>

#include <nlohmann/json.hpp>

#include "oversight/engine.hpp"
#include "oversight/feedback.hpp"
#include "oversight/json_text.hpp"

namespace oversight {
namespace {

const std::string& slot(const ChatRequest& r, const std::string& name) {
  static const std::string empty;
  auto it = r.slots.find(name);
  return it == r.slots.end() ? empty : it->second;
}

// "- a\n- b" back into {"a", "b"}.
std::vector<std::string> bullet_items(std::string_view body) {
  std::vector<std::string> items;
  for (const auto& line : text::split_lines(body)) {
    std::string t = text::trim(line);
    if (t.rfind("- ", 0) == 0) items.push_back(text::trim(std::string_view(t).substr(2)));
  }
  return items;
}

std::string ask(const std::string& node, const std::vector<std::string>& options, bool plain) {
  std::string q = plain ? std::string(FeatureEchoPolicy::kReaskPrefix) + " " : std::string();
  q += "Question: Which of these should \"" + node +
       "\" include? Rank the ones you want, most important first, or reply [DontCare].\n";
  for (std::size_t i = 0; i < options.size(); ++i) {
    q += "\n" + option_label(i) + ". " + options[i];
  }
  return q;
}

std::string specification(const std::string& node, const std::string& description,
                          const std::vector<std::string>& chosen) {
  std::string out = "## " + node + " Feature Specification\n\n### Overview (required)\n" +
                    description + "\n\n### Core Subfeatures (required)\n";
  if (chosen.empty()) out += "- No specific subfeatures confirmed by the user\n";
  for (const auto& c : chosen) out += "- " + c + "\n";
  out += "\n" + std::string(kEndMarker);
  return out;
}

BackendReply policy_turn(const ChatRequest& r) {
  const std::string& node = slot(r, "node.name");
  const std::vector<std::string> options = bullet_items(slot(r, "feature_goals"));

  std::vector<const ChatMessage*> asked;
  const ChatMessage* last_user = nullptr;
  bool nudged = false;
  for (const auto& m : r.messages) {
    if (m.role == MessageRole::kAssistant) asked.push_back(&m);
    if (m.role == MessageRole::kUser) last_user = &m;
  }
  if (!r.messages.empty() && r.messages.back().role == MessageRole::kSystem && r.messages.size() > 1) {
    nudged = true;
  }
  if (asked.empty()) return {ask(node, options, false), {}};

  const UserFeedback fb = parse_feedback(last_user ? last_user->content : "");
  const bool already_reasked = asked.back()->content.rfind(FeatureEchoPolicy::kReaskPrefix, 0) == 0;
  if (fb.kind == FeedbackKind::kDontKnow && !already_reasked && !nudged) {
    return {ask(node, options, true), {}};
  }
  std::vector<std::string> chosen;
  if (fb.kind == FeedbackKind::kSelection || fb.kind == FeedbackKind::kRanking) {
    for (const auto& label : fb.payload) {
      for (std::size_t i = 0; i < options.size(); ++i) {
        if (option_label(i) == label) chosen.push_back(options[i]);
      }
    }
  }
  return {specification(node, slot(r, "node.description"), chosen), {}};
}

}  // namespace

std::string option_label(std::size_t index) {
  if (index < 26) return std::string(1, static_cast<char>('A' + index));
  return std::to_string(index + 1);
}

FeatureEchoPolicy::FeatureEchoPolicy(std::string init_tree_json) : init_tree_(std::move(init_tree_json)) {}

BackendReply FeatureEchoPolicy::complete(const ChatRequest& r) {
  if (!r.template_id) throw Error(ErrorCode::kScriptExhausted, "echo policy needs a template id");
  switch (*r.template_id) {
    case PromptId::kTreeInit: return {init_tree_, {}};
    case PromptId::kTreeUpdate: return {std::string(kNoChangesSentinel), {}};
    case PromptId::kDocGenerator: return {slot(r, "combined_specs"), {}};
    case PromptId::kInteractionSystem: return policy_turn(r);
    default: break;
  }
  throw Error(ErrorCode::kScriptExhausted,
              "echo policy cannot answer " + std::string(prompt_id_name(*r.template_id)));
}

std::string rubric_requirement(std::string_view rubric_text) {
  static const std::regex re(R"(^\s*\[([^\]]*)\]\s*-\s*\[?(.*?)\]?\s*$)");
  const std::string s(rubric_text);
  std::smatch m;
  if (std::regex_match(s, m, re)) return text::trim(m[2].str());
  return text::trim(s);
}

namespace {

std::string judge_split(const ChatRequest& r) {
  std::vector<std::string> modules;
  for (const auto& line : text::split_lines(slot(r, "modules_info"))) {
    std::string t = text::trim(line);
    if (t.rfind("- ", 0) == 0) t = text::trim(std::string_view(t).substr(2));
    if (!t.empty()) modules.push_back(t);
  }
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& m : modules) out[m] = "";

  // Sections under a heading naming a module go there; everything else is
  // ambiguous and goes everywhere.
  auto flush = [&](const std::string& owner, const std::string& body) {
    if (text::trim(body).empty()) return;
    for (const auto& m : modules) {
      if (!owner.empty() && owner != m) continue;
      auto& v = out[m];
      std::string s = v.get<std::string>();
      v = s.empty() ? body : s + "\n" + body;
    }
  };
  std::string owner, body;
  for (const auto& line : text::split_lines(slot(r, "md_content"))) {
    const std::string t = text::trim(line);
    if (t.rfind('#', 0) == 0) {
      std::string match;
      for (const auto& m : modules) {
        if (text::contains_ci(t, m)) match = m;
      }
      const bool top = t.rfind("## ", 0) == 0 || t.rfind("# ", 0) == 0;
      if (!match.empty() || top) {
        flush(owner, body);
        owner = match;
        body.clear();
      }
    }
    body += line + "\n";
  }
  flush(owner, body);
  return out.dump(2);
}

std::string judge_module(const ChatRequest& r) {
  const std::string doc = text::normalize_ws(slot(r, "prd_doc"));
  nlohmann::ordered_json eval = nlohmann::ordered_json::object();
  double sum = 0;
  const auto rubrics = bullet_items(slot(r, "rubrics"));
  for (const auto& rubric : rubrics) {
    const std::string need = text::normalize_ws(rubric_requirement(rubric));
    const int v = !need.empty() && doc.find(need) != std::string::npos ? 1 : 0;
    eval[rubric] = v;
    sum += v;
  }
  return nlohmann::ordered_json{{"eval", eval},
                                {"score", rubrics.empty() ? 0.0 : sum / static_cast<double>(rubrics.size())}}
      .dump(2);
}

std::string judge_progress(const ChatRequest& r) {
  const std::string node = text::normalize_ws(slot(r, "node_document"));
  const std::string history = text::normalize_ws(slot(r, "history_summary"));
  int score = 0;
  for (const auto& f : bullet_items(slot(r, "features_text"))) {
    const std::string need = text::normalize_ws(rubric_requirement(f));
    if (need.empty()) continue;
    if (node.find(need) != std::string::npos && history.find(need) == std::string::npos) score = 1;
  }
  return nlohmann::ordered_json{{"score", score},
                                {"reason", score ? "new target point covered" : "no new target point"}}
      .dump(2);
}

std::string judge_rubrics(const ChatRequest& r) {
  std::vector<std::string> rubrics;
  std::string domain = "General";
  for (const auto& line : text::split_lines(slot(r, "prd_doc"))) {
    const std::string t = text::trim(line);
    if (t.rfind('#', 0) == 0) {
      domain = text::trim(t.substr(t.find_first_not_of('#')));
      continue;
    }
    if (t.rfind("- ", 0) == 0 || t.rfind("* ", 0) == 0) {
      rubrics.push_back("[" + domain + "] - [" + text::trim(std::string_view(t).substr(2)) + "]");
    }
  }
  return nlohmann::ordered_json{{"rubrics", rubrics}}.dump(2);
}

std::string judge_classify(const ChatRequest& r) {
  std::vector<std::string> modules;
  for (const auto& line : bullet_items(slot(r, "modules_info"))) modules.push_back(line);
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& rubric : bullet_items(slot(r, "rubrics"))) {
    std::string pick = modules.size() > 1 ? modules[1] : (modules.empty() ? "" : modules[0]);
    for (const auto& m : modules) {
      if (text::contains_ci(rubric, m)) pick = m;
    }
    out[rubric] = pick;
  }
  return out.dump(2);
}

}  // namespace

BackendReply ContainmentJudge::complete(const ChatRequest& r) {
  if (!r.template_id) throw Error(ErrorCode::kScriptExhausted, "containment judge needs a template id");
  switch (*r.template_id) {
    case PromptId::kEvalSplit: return {judge_split(r), {}};
    case PromptId::kEvalModule: return {judge_module(r), {}};
    case PromptId::kProgressiveReward: return {judge_progress(r), {}};
    case PromptId::kRubricsGen: return {judge_rubrics(r), {}};
    case PromptId::kRubricClassify: return {judge_classify(r), {}};
    default: break;
  }
  throw Error(ErrorCode::kScriptExhausted,
              "containment judge cannot answer " + std::string(prompt_id_name(*r.template_id)));
}

}  // namespace oversight
