#include "oversight/tree.hpp"

#include <functional>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "oversight/json_text.hpp"

namespace oversight {
namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::kMalformedTree, "malformed requirement tree: " + what);
}

ojson parse_with_duplicate_check(const std::string& body) {
  // One entry per open container; arrays hold no keys.
  std::vector<std::optional<std::set<std::string>>> scopes;
  std::optional<std::string> duplicate;
  ojson::parser_callback_t cb = [&](int, ojson::parse_event_t event, ojson& parsed) {
    switch (event) {
      case ojson::parse_event_t::object_start:
        scopes.emplace_back(std::set<std::string>{});
        break;
      case ojson::parse_event_t::array_start:
        scopes.emplace_back(std::nullopt);
        break;
      case ojson::parse_event_t::object_end:
      case ojson::parse_event_t::array_end:
        if (!scopes.empty()) scopes.pop_back();
        break;
      case ojson::parse_event_t::key:
        if (!scopes.empty() && scopes.back()) {
          auto key = parsed.get<std::string>();
          if (!scopes.back()->insert(key).second && !duplicate) duplicate = key;
        }
        break;
      case ojson::parse_event_t::value:
        break;
    }
    return true;
  };
  ojson doc;
  try {
    doc = ojson::parse(body, cb);
  } catch (const ojson::parse_error& e) {
    malformed(e.what());
  }
  if (duplicate) {
    throw Error(ErrorCode::kDuplicateSibling, "duplicate key in tree JSON: " + *duplicate,
                *duplicate);
  }
  return doc;
}

TreeNode parse_node(const std::string& name, const ojson& value, const NodePath& ancestors) {
  if (!value.is_object()) malformed("node '" + name + "' is not an object");
  TreeNode node;
  node.name = name;
  node.path = ancestors;
  node.node_type = ancestors.empty() ? NodeType::kCoreModule : NodeType::kSubModule;
  if (auto it = value.find("description"); it != value.end()) {
    if (!it->is_string()) malformed("description of '" + name + "' is not a string");
    node.description = it->get<std::string>();
  }
  if (auto it = value.find("features"); it != value.end() && !it->is_null()) {
    if (!it->is_array()) malformed("features of '" + name + "' is not a list");
    for (const auto& f : *it) {
      if (!f.is_string()) malformed("feature under '" + name + "' is not a string");
      node.features.push_back(f.get<std::string>());
    }
  }
  if (auto it = value.find("is_processed"); it != value.end()) {
    if (!it->is_boolean()) malformed("is_processed of '" + name + "' is not a boolean");
    node.is_processed = it->get<bool>();
  }
  if (auto it = value.find("submodules"); it != value.end() && !it->is_null()) {
    if (!it->is_object()) malformed("submodules of '" + name + "' is not an object");
    NodePath child_ancestors = ancestors;
    child_ancestors.push_back(name);
    for (const auto& [child_name, child] : it->items()) {
      node.submodules.push_back(parse_node(child_name, child, child_ancestors));
    }
  }
  return node;
}

const ojson& unwrap_module_map(const ojson& doc) {
  static const std::array<std::string_view, 5> kWrappers = {
      "funcs", "Requirement Tree", "Requirement Tree:", "requirement_tree", "tree"};
  if (!doc.is_object()) malformed("top level is not an object");
  if (doc.size() == 1) {
    const auto& [key, value] = *doc.items().begin();
    for (auto w : kWrappers) {
      if (key == w) {
        if (!value.is_object()) malformed("'" + key + "' is not an object");
        return value;
      }
    }
  }
  return doc;
}

ojson node_to_json(const TreeNode& node) {
  ojson out = ojson::object();
  out["description"] = node.description;
  out["node_type"] = node.node_type == NodeType::kCoreModule ? "core_module" : "sub_module";
  out["features"] = node.features;
  out["is_processed"] = node.is_processed;
  if (!node.submodules.empty()) {
    ojson subs = ojson::object();
    for (const auto& child : node.submodules) subs[child.name] = node_to_json(child);
    out["submodules"] = std::move(subs);
  }
  return out;
}

void collect_leaves(const TreeNode& node, std::vector<const TreeNode*>& out) {
  if (node.is_leaf()) {
    out.push_back(&node);
    return;
  }
  for (const auto& child : node.submodules) collect_leaves(child, out);
}

// Internal nodes are processed iff every child is.
bool derive_processed(TreeNode& node) {
  if (node.is_leaf()) return node.is_processed;
  bool all = true;
  for (auto& child : node.submodules) all = derive_processed(child) && all;
  node.is_processed = all;
  return all;
}

template <typename Level>
auto find_in(Level& level, const NodePath& path, bool roots) -> decltype(&level.front()) {
  decltype(&level.front()) cur = nullptr;
  Level* siblings = &level;
  for (std::size_t i = 0; i < path.size(); ++i) {
    cur = nullptr;
    for (auto& n : *siblings) {
      const bool match = (roots && i == 0) ? same_root_name(n.name, path[i]) : n.name == path[i];
      if (match) {
        cur = &n;
        break;
      }
    }
    if (!cur) return nullptr;
    siblings = &cur->submodules;
  }
  return cur;
}

void collect_processed(const TreeNode& node, std::vector<const TreeNode*>& out) {
  if (node.is_processed) out.push_back(&node);
  for (const auto& c : node.submodules) collect_processed(c, out);
}

std::multiset<std::string> child_names(const TreeNode& n) {
  std::multiset<std::string> names;
  for (const auto& c : n.submodules) names.insert(c.name);
  return names;
}

}  // namespace

std::string format_path(const NodePath& path) { return text::join(path, " > "); }

NodePath TreeNode::full_path() const {
  NodePath p = path;
  p.push_back(name);
  return p;
}

const TreeNode* TreeNode::child(std::string_view child_name) const noexcept {
  for (const auto& c : submodules) {
    if (c.name == child_name) return &c;
  }
  return nullptr;
}

bool same_root_name(std::string_view a, std::string_view b) {
  return text::normalize_ws(a) == text::normalize_ws(b);
}

const TreeNode* RequirementTree::find(const NodePath& path) const noexcept {
  if (path.empty()) return nullptr;
  return find_in(roots, path, true);
}

std::vector<const TreeNode*> RequirementTree::leaf_targets() const {
  std::vector<const TreeNode*> out;
  for (const auto& r : roots) collect_leaves(r, out);
  return out;
}

std::size_t RequirementTree::unprocessed_target_count() const {
  std::size_t n = 0;
  for (const auto* leaf : leaf_targets()) n += leaf->is_processed ? 0 : 1;
  return n;
}

RequirementTree parse_tree(std::string_view json_text, ParseMode mode,
                           std::vector<std::string>* warnings) {
  const std::string unfenced = text::strip_code_fences(json_text);
  auto object = text::extract_json_object(unfenced);
  if (!object) malformed("no JSON object found");
  const ojson doc = parse_with_duplicate_check(*object);
  const ojson& modules = unwrap_module_map(doc);

  RequirementTree tree;
  for (const auto& [name, value] : modules.items()) {
    tree.roots.push_back(parse_node(name, value, {}));
  }
  if (tree.roots.size() != kPrdSections.size()) {
    const std::string msg = "expected 5 root modules, found " + std::to_string(tree.roots.size());
    if (mode == ParseMode::kStrict || tree.roots.empty()) {
      throw Error(ErrorCode::kWrongRootCount, msg);
    }
    if (warnings) warnings->push_back(msg);
  }
  for (auto& r : tree.roots) derive_processed(r);
  return tree;
}

std::string serialize_tree(const RequirementTree& tree, int indent) {
  ojson modules = ojson::object();
  for (const auto& r : tree.roots) modules[r.name] = node_to_json(r);
  ojson doc = ojson::object();
  doc["funcs"] = std::move(modules);
  return doc.dump(indent);
}

std::optional<TreeNode> next_unresolved(const RequirementTree& tree) {
  for (const auto* leaf : tree.leaf_targets()) {
    if (!leaf->is_processed) return *leaf;
  }
  return std::nullopt;
}

RequirementTree mark_processed(const RequirementTree& tree, const NodePath& leaf) {
  RequirementTree out = tree;
  TreeNode* node = find_in(out.roots, leaf, true);
  if (!node) throw Error(ErrorCode::kNodeMismatch, "no such node: " + format_path(leaf));
  if (!node->is_leaf()) {
    throw Error(ErrorCode::kNodeMismatch, "not an interaction target: " + format_path(leaf));
  }
  node->is_processed = true;
  for (auto& r : out.roots) derive_processed(r);
  return out;
}

UpdateOutcome apply_update(const RequirementTree& tree, std::string_view update_text) {
  UpdateOutcome outcome{tree, false, std::nullopt, {}};
  auto reject = [&](Error e) {
    outcome.tree = tree;
    outcome.error = std::move(e);
    return outcome;
  };

  const std::string body = text::strip_code_fences(update_text);
  const auto object = text::extract_json_object(body);
  if (!object) {
    if (body.find(kNoChangesSentinel) != std::string::npos) {
      outcome.no_change = true;
      outcome.tree.version = tree.version + 1;
      return outcome;
    }
    return reject(Error(ErrorCode::kMalformedTree, "update is neither JSON nor the sentinel"));
  }

  RequirementTree next;
  try {
    next = parse_tree(*object, ParseMode::kLenient, &outcome.warnings);
  } catch (const Error& e) {
    return reject(e);
  }

  // (a) root set unchanged, compared case/whitespace-insensitively.
  std::multiset<std::string> old_roots, new_roots;
  for (const auto& r : tree.roots) old_roots.insert(text::normalize_ws(r.name));
  for (const auto& r : next.roots) new_roots.insert(text::normalize_ws(r.name));
  if (old_roots != new_roots) {
    return reject(Error(ErrorCode::kRootSetChanged, "update changes the top-level modules"));
  }
  for (auto& r : next.roots) {
    for (const auto& o : tree.roots) {
      if (same_root_name(r.name, o.name)) r.name = o.name;
    }
  }
  // Re-derive paths after root renaming.
  std::function<void(TreeNode&, const NodePath&)> repath = [&](TreeNode& n, const NodePath& anc) {
    n.path = anc;
    NodePath child_anc = anc;
    child_anc.push_back(n.name);
    for (auto& c : n.submodules) repath(c, child_anc);
  };
  for (auto& r : next.roots) repath(r, {});

  // (b) processed nodes keep name, description, features and children.
  std::vector<const TreeNode*> processed;
  for (const auto& r : tree.roots) collect_processed(r, processed);
  for (const auto* old_node : processed) {
    const TreeNode* fresh = next.find(old_node->full_path());
    if (!fresh || fresh->description != old_node->description ||
        fresh->features != old_node->features || child_names(*fresh) != child_names(*old_node)) {
      return reject(Error(ErrorCode::kProcessedNodeMutated,
                          "update modifies completed module " +
                              format_path(old_node->full_path()),
                          format_path(old_node->full_path())));
    }
  }

  // Leaf progress comes from the engine, never from the updater's flags.
  std::function<void(TreeNode&)> reset = [&](TreeNode& n) {
    if (n.is_leaf()) {
      const TreeNode* prior = tree.find(n.full_path());
      const bool was = prior && prior->is_leaf() && prior->is_processed;
      if (n.is_processed && !was) {
        outcome.warnings.push_back("ignored is_processed=true on " + format_path(n.full_path()));
      }
      n.is_processed = was;
    }
    for (auto& c : n.submodules) reset(c);
  };
  for (auto& r : next.roots) {
    reset(r);
    derive_processed(r);
  }

  next.version = tree.version + 1;
  next.origin_query = tree.origin_query;
  outcome.tree = std::move(next);
  return outcome;
}

}  // namespace oversight
