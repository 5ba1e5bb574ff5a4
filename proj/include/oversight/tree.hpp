#pragma once

// Requirement tree: the evolving interaction plan.  Trees are values; every
// operation returns a new tree and never mutates its input.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oversight/error.hpp"

namespace oversight {

/// Full path of a node from its root, root name first.
using NodePath = std::vector<std::string>;

std::string format_path(const NodePath& path);

enum class NodeType { kCoreModule, kSubModule };

struct TreeNode {
  std::string name;
  std::string description;
  NodeType node_type = NodeType::kSubModule;
  std::vector<std::string> features;
  bool is_processed = false;
  std::vector<TreeNode> submodules;  // sibling order is significant
  NodePath path;                     // ancestors only; derived on parse

  bool is_leaf() const noexcept { return submodules.empty(); }
  NodePath full_path() const;
  const TreeNode* child(std::string_view child_name) const noexcept;

  bool operator==(const TreeNode&) const = default;
};

/// The five PRD sections every tree is rooted in, in canonical order.
inline constexpr std::array<std::string_view, 5> kPrdSections = {
    "Product Overview", "Core Functional Modules", "Non-functional Requirements",
    "User Experience Design", "Business Rules"};

struct RequirementTree {
  std::vector<TreeNode> roots;
  int version = 0;
  std::string origin_query;

  const TreeNode* find(const NodePath& path) const noexcept;
  /// Interaction targets (leaves) in depth-first pre-order.
  std::vector<const TreeNode*> leaf_targets() const;
  std::size_t unprocessed_target_count() const;

  /// Compares node content only; version and query are revision metadata.
  bool structurally_equal(const RequirementTree& other) const { return roots == other.roots; }
};

enum class ParseMode { kStrict, kLenient };

/// Accepts {"funcs": {...}}, {"Requirement Tree": {...}} or a bare module map,
/// optionally wrapped in prose or code fences.
RequirementTree parse_tree(std::string_view json_text, ParseMode mode = ParseMode::kStrict,
                           std::vector<std::string>* warnings = nullptr);

/// Stable output: {"funcs": {...}} with fixed key order per node; features are
/// always emitted, submodules only when non-empty.
std::string serialize_tree(const RequirementTree& tree, int indent = 2);

/// First unprocessed leaf in pre-order (root order, then insertion order).
std::optional<TreeNode> next_unresolved(const RequirementTree& tree);

/// Marks a leaf processed and re-derives ancestor flags. Version is unchanged.
RequirementTree mark_processed(const RequirementTree& tree, const NodePath& leaf);

inline constexpr std::string_view kNoChangesSentinel = "NO_CHANGES_NEEDED";

struct UpdateOutcome {
  RequirementTree tree;            // new tree, or the input tree when rejected
  bool no_change = false;          // sentinel accepted
  std::optional<Error> error;      // set iff the update was rejected
  std::vector<std::string> warnings;

  bool accepted() const noexcept { return !error.has_value(); }
};

/// Applies an updater response. Accepted updates (including the sentinel)
/// bump the version by one; rejected ones return the input tree unchanged.
UpdateOutcome apply_update(const RequirementTree& tree, std::string_view update_text);

bool same_root_name(std::string_view a, std::string_view b);

}  // namespace oversight
