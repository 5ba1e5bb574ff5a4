#include "oversight/feedback.hpp"

#include <cctype>
#include <cstdlib>
#include <regex>

#include <nlohmann/json.hpp>

#include "oversight/error.hpp"
#include "oversight/json_text.hpp"

namespace oversight {
namespace {

const std::regex& confidence_re() {
  static const std::regex re(
      R"((?:conf(?:idence)?)\s*[:=]?\s*\[?\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\]?)",
      std::regex::icase | std::regex::ECMAScript);
  return re;
}

const std::regex& answer_prefix_re() {
  static const std::regex re(R"(^answer\s*:?\s*)", std::regex::icase | std::regex::ECMAScript);
  return re;
}

bool is_label(std::string_view s) {
  if (s.size() == 1) return std::isalnum(static_cast<unsigned char>(s[0])) != 0;
  if (s.size() == 2) {
    return std::isdigit(static_cast<unsigned char>(s[0])) &&
           std::isdigit(static_cast<unsigned char>(s[1]));
  }
  return false;
}

std::string canonical_label(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string strip_trailing_separators(std::string s) {
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.back())) || s.back() == '-' ||
                        s.back() == ',' || s.back() == ';' || s.back() == '|')) {
    s.pop_back();
  }
  return text::trim(s);
}

std::string unbracket(const std::string& s, bool& bracketed) {
  bracketed = false;
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']' &&
      s.find(']') == s.size() - 1) {
    bracketed = true;
    return text::trim(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

std::string alnum_lower(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

}  // namespace

std::string_view feedback_kind_name(FeedbackKind kind) noexcept {
  switch (kind) {
    case FeedbackKind::kSelection: return "selection";
    case FeedbackKind::kRanking: return "ranking";
    case FeedbackKind::kFreeText: return "free_text";
    case FeedbackKind::kDontCare: return "dont_care";
    case FeedbackKind::kDontKnow: return "dont_know";
  }
  return "free_text";
}

FeedbackKind feedback_kind_from_name(std::string_view name) {
  for (auto k : {FeedbackKind::kSelection, FeedbackKind::kRanking, FeedbackKind::kFreeText,
                 FeedbackKind::kDontCare, FeedbackKind::kDontKnow}) {
    if (feedback_kind_name(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown feedback kind: " + std::string(name));
}

UserFeedback parse_feedback(std::string_view answer_raw) {
  UserFeedback fb;
  std::string body = text::trim(answer_raw);

  std::smatch m;
  if (std::regex_search(body, m, confidence_re())) {
    const std::string num = m[1].str();
    char* end = nullptr;
    const double v = std::strtod(num.c_str(), &end);
    if (end && *end == '\0' && v >= 0.0 && v <= 1.0) {
      fb.confidence = v;
      body = text::trim(m.prefix().str() + " " + m.suffix().str());
    }
  }
  body = std::regex_replace(body, answer_prefix_re(), "", std::regex_constants::format_first_only);
  body = strip_trailing_separators(body);

  bool bracketed = false;
  const std::string inner = unbracket(body, bracketed);

  const std::string token = alnum_lower(inner);
  if (token == "dontcare" || token == "dontknow") {
    fb.kind = token == "dontcare" ? FeedbackKind::kDontCare : FeedbackKind::kDontKnow;
    fb.confidence.reset();
    return fb;
  }

  if (inner.find('>') != std::string::npos) {
    std::vector<std::string> labels;
    bool all_labels = true;
    std::size_t start = 0;
    while (true) {
      const auto pos = inner.find('>', start);
      bool part_bracketed = false;
      auto part = unbracket(text::trim(std::string_view(inner).substr(
                                start, pos == std::string::npos ? std::string::npos : pos - start)),
                            part_bracketed);
      if (!is_label(part)) {
        all_labels = false;
        break;
      }
      labels.push_back(canonical_label(part));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (all_labels && labels.size() >= 2) {
      fb.kind = FeedbackKind::kRanking;
      fb.payload = std::move(labels);
      return fb;
    }
  }

  if (is_label(inner)) {
    fb.kind = FeedbackKind::kSelection;
    fb.payload = {canonical_label(inner)};
    return fb;
  }

  fb.kind = FeedbackKind::kFreeText;
  fb.payload = {inner};
  return fb;
}

std::string render_feedback(const UserFeedback& fb, FeedbackStyle style) {
  std::string answer;
  switch (fb.kind) {
    case FeedbackKind::kDontCare: return "[DontCare]";
    case FeedbackKind::kDontKnow: return "[DontKnow]";
    case FeedbackKind::kSelection:
    case FeedbackKind::kRanking: answer = text::join(fb.payload, " > "); break;
    case FeedbackKind::kFreeText: answer = fb.payload.empty() ? "" : fb.payload.front(); break;
  }
  if (style == FeedbackStyle::kCompact) {
    std::string out = "[" + answer + "]";
    if (fb.confidence) out += "- Conf[" + text::format_double(*fb.confidence) + "]";
    return out;
  }
  std::string out = "Answer: [" + answer + "]";
  if (fb.confidence) out += " - Confidence: [" + text::format_double(*fb.confidence) + "]";
  return out;
}

void to_json(nlohmann::json& j, const UserFeedback& fb) {
  j = nlohmann::json{{"kind", feedback_kind_name(fb.kind)}, {"payload", fb.payload}};
  j["confidence"] = fb.confidence ? nlohmann::json(*fb.confidence) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, UserFeedback& fb) {
  fb.kind = feedback_kind_from_name(j.at("kind").get<std::string>());
  fb.payload = j.value("payload", std::vector<std::string>{});
  if (j.contains("confidence") && !j.at("confidence").is_null()) {
    fb.confidence = j.at("confidence").get<double>();
  } else {
    fb.confidence.reset();
  }
}

}  // namespace oversight
