#pragma once

// Deterministic stand-ins for the model roles, good enough to drive the whole
// loop at desk scale without a hosted model.
//
// FeatureEchoPolicy covers the policy, updater and generator roles:
//   - tree_init returns a fixed tree;
//   - a node interview asks one ranking question over the node's features
//     and then emits a specification listing exactly the chosen features;
//   - a DontKnow answer gets one re-ask in plainer words;
//   - the updater always answers NO_CHANGES_NEEDED;
//   - the generator echoes the combined node specifications.
//
// ContainmentJudge covers the judge role: a rubric is satisfied when its
// requirement text occurs in the document (case and spacing ignored).

#include <string>

#include "oversight/gateway.hpp"

namespace oversight {

class FeatureEchoPolicy : public ChatBackend {
 public:
  explicit FeatureEchoPolicy(std::string init_tree_json);
  BackendReply complete(const ChatRequest& request) override;

  static constexpr std::string_view kReaskPrefix = "Let me put it more simply.";

 private:
  std::string init_tree_;
};

class ContainmentJudge : public ChatBackend {
 public:
  BackendReply complete(const ChatRequest& request) override;
};

/// "[Domain] - [requirement]" -> "requirement"; other text is returned trimmed.
std::string rubric_requirement(std::string_view rubric_text);

/// Option label for the i-th choice: A..Z, then 27, 28 ...
std::string option_label(std::size_t index);

}  // namespace oversight
