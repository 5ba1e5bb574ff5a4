#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace oversight {

enum class FeedbackKind { kSelection, kRanking, kFreeText, kDontCare, kDontKnow };

std::string_view feedback_kind_name(FeedbackKind kind) noexcept;
FeedbackKind feedback_kind_from_name(std::string_view name);

/// A parsed user answer.  Refusals carry no payload; selections carry one
/// label; rankings carry labels best-first; free text carries the raw answer.
struct UserFeedback {
  FeedbackKind kind = FeedbackKind::kFreeText;
  std::vector<std::string> payload;
  std::optional<double> confidence;

  bool operator==(const UserFeedback&) const = default;
};

/// Total function over arbitrary text.  Recognised forms include
///   [A > C > B]- Conf[0.8]
///   Answer: [B] - Confidence: [0.6]
///   [DontCare]   dontknow
/// Anything else becomes free text.
UserFeedback parse_feedback(std::string_view answer_raw);

enum class FeedbackStyle {
  kAnswerLine,  // Answer: [A > B] - Confidence: [0.8]
  kCompact,     // [A > B]- Conf[0.8]
};

/// Inverse of parse_feedback for well-formed feedback.
std::string render_feedback(const UserFeedback& fb, FeedbackStyle style = FeedbackStyle::kAnswerLine);

void to_json(nlohmann::json& j, const UserFeedback& fb);
void from_json(const nlohmann::json& j, UserFeedback& fb);

}  // namespace oversight
