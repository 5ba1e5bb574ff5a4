#pragma once

// Prompt templates loaded from prompts/*.txt and verified against
// prompts/manifest.json (sha256 + declared slots).
//
// Slot syntax: {name} is substituted, {{ and }} are literal braces.  Slot
// names may contain dots (node.name).  Rendering demands the slot map keys
// equal the template's slot set exactly.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace oversight {

enum class PromptId {
  kInteractionSystem,
  kTreeInit,
  kTreeUpdate,
  kDocGenerator,
  kUserSim,
  kEvalSplit,
  kEvalModule,
  kProgressiveReward,
  kRubricsGen,
  kRubricClassify,
};

std::string_view prompt_id_name(PromptId id) noexcept;
PromptId prompt_id_from_name(std::string_view name);

using SlotMap = std::map<std::string, std::string>;

struct PromptTemplate {
  PromptId id;
  std::string body;
  std::set<std::string> required_slots;

  std::string render(const SlotMap& slots) const;
};

/// Parses the slot set of a template body; throws TemplateIntegrity on stray braces.
std::set<std::string> template_slots(std::string_view body);

std::string sha256_hex(std::string_view data);

class PromptLibrary {
 public:
  /// Loads every template listed in dir/manifest.json and verifies hashes.
  static PromptLibrary load(const std::filesystem::path& dir);
  /// Directory from OVERSIGHT_PROMPTS_DIR, else the build-time default.
  static const PromptLibrary& shared();
  static std::filesystem::path default_dir();

  const PromptTemplate& get(PromptId id) const;
  std::string render(PromptId id, const SlotMap& slots) const { return get(id).render(slots); }

 private:
  std::map<PromptId, PromptTemplate> templates_;
};

/// Body of the feature-goal list in the interaction prompt; falls back to a
/// generic line when the node has no features.
std::string render_feature_goals(const std::vector<std::string>& features);

}  // namespace oversight
