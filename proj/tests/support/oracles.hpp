#pragma once
// Independent reference implementations used by the tests. None of these
// touch the library's own lca/distance code paths.

#include <cstdint>
#include <deque>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hiershift/hierarchy.hpp"

namespace oracle {

/// Random tree with all leaves at `depth`; at most `max_nodes` nodes.
inline std::vector<hiershift::NodeSpec> random_tree(std::mt19937_64& rng, int depth, std::size_t max_nodes) {
  std::vector<hiershift::NodeSpec> specs{{"n0", "n0", std::nullopt}};
  std::vector<std::string> frontier{"n0"};
  for (int level = 1; level <= depth; ++level) {
    std::vector<std::string> next;
    const std::size_t remaining_levels = static_cast<std::size_t>(depth - level + 1);
    for (const auto& parent : frontier) {
      // Leave room for at least one child per open branch on every later level.
      const std::size_t budget = max_nodes - specs.size();
      const std::size_t reserve = (frontier.size() + next.size()) * remaining_levels;
      std::size_t kids = 1 + rng() % 3;
      if (budget < reserve + kids) kids = 1;
      for (std::size_t k = 0; k < kids; ++k) {
        std::string id = "n" + std::to_string(specs.size());
        specs.push_back({id, id, parent});
        next.push_back(id);
      }
    }
    frontier = std::move(next);
  }
  return specs;
}

/// Undirected adjacency lists from parent links.
inline std::vector<std::vector<std::size_t>> adjacency(const hiershift::Hierarchy& h) {
  std::vector<std::vector<std::size_t>> adj(h.size());
  for (std::uint32_t i = 0; i < h.size(); ++i) {
    auto p = h.parent(hiershift::NodeIndex{i});
    if (!p) continue;
    adj[i].push_back(p->value);
    adj[p->value].push_back(i);
  }
  return adj;
}

/// Breadth-first distances from `src` to every node.
inline std::vector<int> bfs(const std::vector<std::vector<std::size_t>>& adj, std::size_t src) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<std::size_t> q{src};
  dist[src] = 0;
  while (!q.empty()) {
    auto u = q.front();
    q.pop_front();
    for (auto v : adj[u])
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
  }
  return dist;
}

/// Deepest common element of the two root-ward ancestor sets.
inline hiershift::NodeIndex lca_by_ancestor_sets(const hiershift::Hierarchy& h, hiershift::NodeIndex a, hiershift::NodeIndex b) {
  std::set<std::uint32_t> up;
  for (std::optional<hiershift::NodeIndex> n = a; n; n = h.parent(*n)) up.insert(n->value);
  for (std::optional<hiershift::NodeIndex> n = b; n; n = h.parent(*n))
    if (up.count(n->value)) return *n;
  return h.root();
}

/// Per-level indices by walking parents from the leaf and ranking each node
/// among its level in depth-first order.
inline std::vector<std::size_t> path_by_parent_walk(const hiershift::Hierarchy& h, hiershift::NodeIndex leaf) {
  std::vector<std::size_t> out(static_cast<std::size_t>(h.level(leaf)));
  for (std::optional<hiershift::NodeIndex> n = leaf; n && h.level(*n) > 0; n = h.parent(*n)) {
    const auto& same = h.nodes_at_level(h.level(*n));
    std::size_t rank = 0;
    while (same[rank] != *n) ++rank;
    out[static_cast<std::size_t>(h.level(*n) - 1)] = rank;
  }
  return out;
}

}  // namespace oracle
