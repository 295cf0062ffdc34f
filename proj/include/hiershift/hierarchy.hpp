#pragma once
// Rooted class hierarchy: superclasses, classes and subpopulation leaves.
//
// Nodes are stored in depth-first preorder over the canonical child order.
// Every level gets a contiguous zero-based index per node in that same order,
// which is what the per-level classifier heads use as targets.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hiershift/error.hpp"

namespace hiershift {

struct NodeIndex {
  std::uint32_t value = 0;
  auto operator<=>(const NodeIndex&) const = default;
};

/// One node as written by a user or produced by a transformation, before validation.
struct NodeSpec {
  std::string id;
  std::string name;
  std::optional<std::string> parent;
};

/// Per-level class indices of one sample, levels 1..class_level.
struct LabelPath {
  std::vector<std::size_t> indices;
  bool operator==(const LabelPath&) const = default;
};

class Hierarchy {
 public:
  struct Node {
    std::string id;
    std::string name;
    std::optional<NodeIndex> parent;
    std::vector<NodeIndex> children;
    int level = 0;
    std::size_t level_index = 0;
    bool operator==(const Node&) const = default;
  };

  /// Validates and builds a hierarchy. Children keep the order in which they
  /// appear in `specs`.
  static Hierarchy from_nodes(const std::vector<NodeSpec>& specs);

  std::size_t size() const { return nodes_.size(); }
  NodeIndex root() const { return NodeIndex{0}; }
  int depth() const { return depth_; }
  int class_level() const { return depth_ - 1; }

  const Node& node(NodeIndex n) const { return nodes_.at(n.value); }
  const std::string& id(NodeIndex n) const { return node(n).id; }
  const std::string& name(NodeIndex n) const { return node(n).name; }
  int level(NodeIndex n) const { return node(n).level; }
  std::optional<NodeIndex> parent(NodeIndex n) const { return node(n).parent; }
  std::span<const NodeIndex> children(NodeIndex n) const { return node(n).children; }
  bool is_leaf(NodeIndex n) const { return node(n).children.empty(); }
  /// Index of `n` among the nodes at its level.
  std::size_t level_index(NodeIndex n) const { return node(n).level_index; }

  std::optional<NodeIndex> find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }
  NodeIndex at(std::string_view id) const {
    auto n = find(id);
    if (!n) throw DataError("unknown node id '" + std::string(id) + "'");
    return *n;
  }

  std::span<const NodeIndex> nodes_at_level(int level) const { return by_level_.at(static_cast<std::size_t>(level)); }
  std::span<const NodeIndex> classes() const { return nodes_at_level(class_level()); }
  std::span<const NodeIndex> leaves() const { return nodes_at_level(depth_); }
  std::size_t count_at_level(int level) const { return nodes_at_level(level).size(); }

  /// Ancestor of `n` at `level` (n itself when level == level(n)).
  NodeIndex ancestor_at(NodeIndex n, int level) const {
    if (level < 0 || level > this->level(n)) throw DataError("ancestor level out of range for node '" + id(n) + "'");
    while (this->level(n) > level) n = *parent(n);
    return n;
  }

  /// Class node at `index` of the class level.
  NodeIndex class_node(std::size_t index) const { return classes()[index]; }

  /// Specs in preorder; feeding them back to from_nodes reproduces this hierarchy.
  std::vector<NodeSpec> to_specs() const;

  bool operator==(const Hierarchy& other) const { return nodes_ == other.nodes_; }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeIndex> by_id_;
  std::vector<std::vector<NodeIndex>> by_level_;
  int depth_ = 0;
};

inline Hierarchy Hierarchy::from_nodes(const std::vector<NodeSpec>& specs) {
  if (specs.empty()) throw DataError("hierarchy has no nodes");

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].id.empty()) throw DataError("node with empty id (name '" + specs[i].name + "')");
    if (!position.emplace(specs[i].id, i).second) throw DataError("duplicate node id '" + specs[i].id + "'");
  }

  std::vector<std::size_t> roots;
  std::vector<std::vector<std::size_t>> kids(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!specs[i].parent) {
      roots.push_back(i);
      continue;
    }
    auto it = position.find(*specs[i].parent);
    if (it == position.end())
      throw DataError("node '" + specs[i].id + "': unknown parent '" + *specs[i].parent + "'");
    if (it->second == i) throw DataError("cycle detected: node '" + specs[i].id + "' is its own parent");
    kids[it->second].push_back(i);
  }
  if (roots.empty()) throw DataError("cycle detected: no root node (every node has a parent)");
  if (roots.size() > 1)
    throw DataError("multiple roots: '" + specs[roots[0]].id + "' and '" + specs[roots[1]].id + "'");

  // Preorder traversal; children are pushed in reverse so they pop in order.
  Hierarchy h;
  std::vector<std::size_t> new_index(specs.size(), SIZE_MAX);
  std::vector<std::pair<std::size_t, int>> stack{{roots[0], 0}};
  while (!stack.empty()) {
    auto [i, level] = stack.back();
    stack.pop_back();
    new_index[i] = h.nodes_.size();
    Node n;
    n.id = specs[i].id;
    n.name = specs[i].name;
    n.level = level;
    h.nodes_.push_back(std::move(n));
    for (auto k = kids[i].rbegin(); k != kids[i].rend(); ++k) stack.emplace_back(*k, level + 1);
  }
  if (h.nodes_.size() != specs.size()) {
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (new_index[i] == SIZE_MAX) throw DataError("cycle detected: node '" + specs[i].id + "' is unreachable from the root");
  }

  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& n = h.nodes_[new_index[i]];
    if (specs[i].parent) n.parent = NodeIndex{static_cast<std::uint32_t>(new_index[position.at(*specs[i].parent)])};
    for (std::size_t k : kids[i]) n.children.push_back(NodeIndex{static_cast<std::uint32_t>(new_index[k])});
  }

  int depth = 0;
  for (const auto& n : h.nodes_) depth = std::max(depth, n.level);
  if (depth < 2) throw DataError("hierarchy needs at least a class level and a leaf level (depth >= 2)");
  for (const auto& n : h.nodes_) {
    if (n.children.empty() && n.level != depth)
      throw DataError("leaf '" + n.id + "' at level " + std::to_string(n.level) + " but hierarchy depth is " +
                      std::to_string(depth) + " (leaves must share one level)");
  }
  h.depth_ = depth;
  h.by_level_.assign(static_cast<std::size_t>(depth) + 1, {});
  for (std::uint32_t i = 0; i < h.nodes_.size(); ++i) {
    auto& lvl = h.by_level_[static_cast<std::size_t>(h.nodes_[i].level)];
    h.nodes_[i].level_index = lvl.size();
    lvl.push_back(NodeIndex{i});
    h.by_id_.emplace(h.nodes_[i].id, NodeIndex{i});
  }
  return h;
}

inline std::vector<NodeSpec> Hierarchy::to_specs() const {
  std::vector<NodeSpec> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    NodeSpec s{n.id, n.name, std::nullopt};
    if (n.parent) s.parent = nodes_[n.parent->value].id;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text format: one node per line, two spaces of indentation per level,
// `name [#id]`. The id defaults to the name.

inline Hierarchy parse_hierarchy(std::string_view text) {
  std::vector<NodeSpec> specs;
  std::vector<std::string> open;  // id of the most recent node per level
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty()) continue;

    std::size_t indent = 0;
    while (indent < line.size() && line[indent] == ' ') ++indent;
    if (line.find('\t') != std::string_view::npos) throw ParseError(line_no, "tab characters are not allowed");
    if (indent % 2 != 0) throw ParseError(line_no, "indentation must be a multiple of two spaces");
    std::size_t level = indent / 2;
    std::string_view body = line.substr(indent);

    std::string name(body);
    std::string id;
    if (auto sp = body.find_last_of(' '); body.front() == '#' || (sp != std::string_view::npos && body[sp + 1] == '#')) {
      std::size_t hash = body.front() == '#' ? 0 : sp + 1;
      id = std::string(body.substr(hash + 1));
      name = std::string(body.substr(0, hash));
      while (!name.empty() && name.back() == ' ') name.pop_back();
      if (id.empty()) throw ParseError(line_no, "empty id after '#'");
    }
    if (name.empty()) throw ParseError(line_no, "missing node name");
    if (id.empty()) id = name;

    if (specs.empty() && level != 0) throw ParseError(line_no, "first node must be the root (no indentation)");
    if (!specs.empty() && level == 0)
      throw ParseError(line_no, "multiple roots: '" + specs.front().id + "' and '" + id + "'");
    if (level > open.size()) throw ParseError(line_no, "node '" + id + "' is indented more than one level below its parent");

    NodeSpec spec{id, name, std::nullopt};
    if (level > 0) spec.parent = open[level - 1];
    open.resize(level);
    open.push_back(id);
    specs.push_back(std::move(spec));
  }
  if (specs.empty()) throw ParseError(line_no, "empty hierarchy file");
  return Hierarchy::from_nodes(specs);
}

inline std::string serialize_hierarchy(const Hierarchy& h) {
  std::ostringstream out;
  for (std::uint32_t i = 0; i < h.size(); ++i) {
    NodeIndex n{i};
    out << std::string(static_cast<std::size_t>(h.level(n)) * 2, ' ') << h.name(n);
    if (h.id(n) != h.name(n)) out << " #" << h.id(n);
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Queries

inline LabelPath label_path(const Hierarchy& h, NodeIndex leaf) {
  if (!h.is_leaf(leaf)) throw DataError("node '" + h.id(leaf) + "' is not a leaf");
  LabelPath p;
  p.indices.resize(static_cast<std::size_t>(h.class_level()));
  NodeIndex n = *h.parent(leaf);
  for (int l = h.class_level(); l >= 1; --l) {
    p.indices[static_cast<std::size_t>(l - 1)] = h.level_index(n);
    if (l > 1) n = *h.parent(n);
  }
  return p;
}

inline LabelPath label_path(const Hierarchy& h, std::string_view leaf_id) { return label_path(h, h.at(leaf_id)); }

inline NodeIndex lca(const Hierarchy& h, NodeIndex a, NodeIndex b) {
  while (h.level(a) > h.level(b)) a = *h.parent(a);
  while (h.level(b) > h.level(a)) b = *h.parent(b);
  while (a != b) {
    a = *h.parent(a);
    b = *h.parent(b);
  }
  return a;
}

inline NodeIndex lca(const Hierarchy& h, std::string_view a, std::string_view b) { return lca(h, h.at(a), h.at(b)); }

/// Number of edges on the tree path between `a` and `b`.
inline int graph_distance(const Hierarchy& h, NodeIndex a, NodeIndex b) {
  return h.level(a) + h.level(b) - 2 * h.level(lca(h, a, b));
}

inline int graph_distance(const Hierarchy& h, std::string_view a, std::string_view b) {
  return graph_distance(h, h.at(a), h.at(b));
}

/// Replaces the band of levels [from_level, to_level] with the single level of
/// to_level nodes, re-parented to their ancestor at from_level - 1.
inline Hierarchy collapse_levels(const Hierarchy& h, int from_level, int to_level) {
  if (from_level < 1 || from_level >= to_level || to_level > h.class_level() - 1)
    throw ConfigError("collapse range [" + std::to_string(from_level) + ", " + std::to_string(to_level) +
                      "] invalid: need 1 <= from < to <= " + std::to_string(h.class_level() - 1));
  std::vector<NodeSpec> specs;
  for (std::uint32_t i = 0; i < h.size(); ++i) {
    NodeIndex n{i};
    int l = h.level(n);
    if (l >= from_level && l < to_level) continue;
    NodeSpec s{h.id(n), h.name(n), std::nullopt};
    if (l == to_level)
      s.parent = h.id(h.ancestor_at(n, from_level - 1));
    else if (auto p = h.parent(n))
      s.parent = h.id(*p);
    specs.push_back(std::move(s));
  }
  return Hierarchy::from_nodes(specs);
}

/// True when both hierarchies have the same class-level node ids in the same order.
inline bool same_classes(const Hierarchy& a, const Hierarchy& b) {
  if (a.classes().size() != b.classes().size()) return false;
  for (std::size_t i = 0; i < a.classes().size(); ++i)
    if (a.id(a.classes()[i]) != b.id(b.classes()[i])) return false;
  return true;
}

}  // namespace hiershift
