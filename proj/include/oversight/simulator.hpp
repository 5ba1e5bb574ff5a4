#pragma once

// Simulated users.  The model-backed user role-plays a non-expert holding a
// reference PRD; the oracle user answers from an ordered rule list and is
// fully deterministic.

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "oversight/engine.hpp"
#include "oversight/feedback.hpp"
#include "oversight/gateway.hpp"
#include "oversight/prompts.hpp"

namespace oversight {

struct IntentSpec {
  std::string name;
  std::string query;
  std::string prd_content;
  std::string persona_constraints;
};

/// Markdown with a YAML front matter block carrying at least `query:`.
IntentSpec load_intent(const std::filesystem::path& path);
IntentSpec parse_intent(std::string_view markdown, std::string name = {});

class UserSimulator {
 public:
  virtual ~UserSimulator() = default;
  /// history holds the finished turns of the current node, oldest first.
  virtual std::string reply(const IntentSpec& intent, const NodePath& node_path,
                            std::string_view question, const std::vector<Turn>& history,
                            const std::vector<PreferenceEntry>& confirmed) = 0;
};

struct OracleRule {
  std::vector<std::string> trigger_keywords;  // any one matches; empty = default rule
  UserFeedback response;                      // confidence defaults to 0.9
  std::vector<std::string> care_scope;        // empty = everything in scope
};

class OracleUser : public UserSimulator {
 public:
  /// `care_scope` applies to every question before the rules are consulted.
  OracleUser(std::vector<OracleRule> rules, std::vector<std::string> care_scope = {},
             FeedbackStyle style = FeedbackStyle::kAnswerLine);
  /// YAML or JSON: {care_scope?: [...], style?: answer_line|compact, rules:
  /// [{trigger_keywords, response:{kind,payload}, confidence?, care_scope?}]}.
  /// A bare list of rules is accepted too.
  static std::shared_ptr<OracleUser> from_file(const std::filesystem::path& path);
  static std::shared_ptr<OracleUser> from_text(std::string_view yaml_or_json);

  std::string reply(const IntentSpec& intent, const NodePath& node_path, std::string_view question,
                    const std::vector<Turn>& history,
                    const std::vector<PreferenceEntry>& confirmed) override;
  /// The rule answer before rendering.
  UserFeedback decide(std::string_view question) const;

 private:
  std::vector<OracleRule> rules_;
  std::vector<std::string> care_scope_;
  FeedbackStyle style_;
};

class ModelUser : public UserSimulator {
 public:
  ModelUser(const Gateway& gateway, const PromptLibrary& prompts, TranscriptSink* sink = nullptr);
  std::string reply(const IntentSpec& intent, const NodePath& node_path, std::string_view question,
                    const std::vector<Turn>& history,
                    const std::vector<PreferenceEntry>& confirmed) override;

 private:
  const Gateway& gateway_;
  const PromptLibrary& prompts_;
  TranscriptSink* sink_;
};

struct Agreement {
  double value = 0.0;       // NaN when nothing was compared
  std::size_t compared = 0;
  std::size_t excluded_free_text = 0;
};

/// Positional exact match on kind and payload; confidence is ignored.
/// Positions where either side is free text are skipped unless included.
Agreement measure_agreement(const std::vector<UserFeedback>& a, const std::vector<UserFeedback>& b,
                            bool include_free_text = false);

}  // namespace oversight
