#include <gtest/gtest.h>

#include <random>

#include "../support/oracles.hpp"
#include "hiershift/datagen.hpp"
#include "hiershift/hierarchy.hpp"

using namespace hiershift;

namespace {

Hierarchy fixture(const std::string& name) {
  return parse_hierarchy(detail::read_file(std::string(HS_FIXTURES_DIR) + "/" + name + ".hier"));
}

}  // namespace

TEST(Fixtures, Shapes) {
  const auto custom = fixture("custom");
  EXPECT_EQ(custom.depth(), 3);
  EXPECT_EQ(custom.count_at_level(1), 5u);
  EXPECT_EQ(custom.classes().size(), 10u);
  EXPECT_EQ(custom.leaves().size(), 30u);

  const auto living = fixture("living17");
  EXPECT_EQ(living.depth(), 4);
  EXPECT_EQ(living.classes().size(), 17u);
  EXPECT_EQ(living.leaves().size(), 34u);

  const auto nonliving = fixture("nonliving26");
  EXPECT_EQ(nonliving.depth(), 5);
  EXPECT_EQ(nonliving.classes().size(), 26u);

  const auto entity = fixture("entity30");
  EXPECT_EQ(entity.depth(), 5);
  EXPECT_EQ(entity.classes().size(), 30u);
}

TEST(LabelPath, FrogAndLeftmostLeaf) {
  const auto h = fixture("custom");
  EXPECT_EQ(label_path(h, "bullfrog").indices, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(label_path(h, h.leaves().front()).indices, (std::vector<std::size_t>{0, 0}));
  EXPECT_THROW(label_path(h, "frog"), DataError);
  EXPECT_THROW(label_path(h, "no_such_node"), DataError);
}

TEST(LabelPath, MatchesParentWalk) {
  for (const char* name : {"custom", "living17", "nonliving26", "entity30"}) {
    const auto h = fixture(name);
    for (NodeIndex leaf : h.leaves())
      EXPECT_EQ(label_path(h, leaf).indices, oracle::path_by_parent_walk(h, *h.parent(leaf))) << name << " " << h.id(leaf);
  }
}

TEST(Distance, CustomExamples) {
  const auto h = fixture("custom");
  EXPECT_EQ(graph_distance(h, "felidae", "canis"), 2);
  EXPECT_EQ(graph_distance(h, "felidae", "salamander"), 4);
  EXPECT_EQ(graph_distance(h, "frog", "frog"), 0);
  EXPECT_EQ(h.id(lca(h, "tiger", "beagle")), "mammal");
}

TEST(Distance, WorstCaseClassPairs) {
  for (auto [name, expected] : {std::pair{"living17", 6}, std::pair{"nonliving26", 8}}) {
    const auto h = fixture(name);
    int worst = 0;
    for (NodeIndex a : h.classes())
      for (NodeIndex b : h.classes()) worst = std::max(worst, graph_distance(h, a, b));
    EXPECT_EQ(worst, expected) << name;
  }
}

TEST(Distance, MatchesOraclesOnRandomTrees) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int depth = 2 + static_cast<int>(rng() % 5);
    const auto h = Hierarchy::from_nodes(oracle::random_tree(rng, depth, 120));
    const auto adj = oracle::adjacency(h);
    for (std::uint32_t a = 0; a < h.size(); ++a) {
      const auto dist = oracle::bfs(adj, a);
      for (std::uint32_t b = 0; b < h.size(); ++b) {
        ASSERT_EQ(graph_distance(h, NodeIndex{a}, NodeIndex{b}), dist[b]);
        ASSERT_EQ(lca(h, NodeIndex{a}, NodeIndex{b}), oracle::lca_by_ancestor_sets(h, NodeIndex{a}, NodeIndex{b}));
      }
    }
  }
}

TEST(Distance, MetricProperties) {
  const auto h = fixture("living17");
  const auto nodes = h.size();
  for (std::uint32_t a = 0; a < nodes; ++a)
    for (std::uint32_t b = 0; b < nodes; ++b) {
      const int ab = graph_distance(h, NodeIndex{a}, NodeIndex{b});
      EXPECT_EQ(ab, graph_distance(h, NodeIndex{b}, NodeIndex{a}));
      EXPECT_EQ(ab == 0, a == b);
      for (std::uint32_t c = 0; c < nodes; c += 7)
        EXPECT_LE(ab, graph_distance(h, NodeIndex{a}, NodeIndex{c}) + graph_distance(h, NodeIndex{c}, NodeIndex{b}));
    }
}

TEST(Collapse, ShapeAndDistances) {
  const auto h = fixture("nonliving26");
  const auto c = collapse_levels(h, 1, 2);
  EXPECT_EQ(c.depth(), 4);
  EXPECT_TRUE(same_classes(h, c));
  EXPECT_EQ(c.leaves().size(), h.leaves().size());
  for (NodeIndex a : h.classes())
    for (NodeIndex b : h.classes())
      EXPECT_LE(graph_distance(c, h.id(a), h.id(b)), graph_distance(h, a, b));
  for (NodeIndex n : c.nodes_at_level(1)) EXPECT_EQ(h.level(h.at(c.id(n))), 2);
}

TEST(Collapse, RejectsBadRanges) {
  const auto h = fixture("nonliving26");
  EXPECT_THROW(collapse_levels(h, 2, 2), ConfigError);
  EXPECT_THROW(collapse_levels(h, 0, 2), ConfigError);
  EXPECT_THROW(collapse_levels(h, 1, 4), ConfigError);
  EXPECT_THROW(collapse_levels(fixture("custom"), 1, 2), ConfigError);
}

TEST(Serialize, RoundTrips) {
  for (const char* name : {"custom", "living17", "nonliving26", "entity30"}) {
    const auto h = fixture(name);
    EXPECT_EQ(parse_hierarchy(serialize_hierarchy(h)), h) << name;
    EXPECT_EQ(Hierarchy::from_nodes(h.to_specs()), h) << name;
  }
  EXPECT_EQ(serialize_hierarchy(parse_hierarchy("root\n  a\n    x\n")), "root\n  a\n    x\n");
}

TEST(Parse, Errors) {
  auto bad = [](std::string_view text) { EXPECT_THROW(parse_hierarchy(text), DataError) << text; };
  bad("");
  bad("root\n");                       // depth < 2
  bad("root\n  a\n    x\n  b\n");      // leaves at unequal levels
  bad("root\n\ta\n");                  // tab indentation
  bad("root\n   a\n");                 // odd indentation
  bad("root\n  a\n      x\n");         // indentation jump
  bad("  root\n");                     // indented first line
  bad("root\n  a\n    x\nother\n");    // second root
  bad("root\n  a #dup\n    x #dup\n"); // duplicate id
}

TEST(FromNodes, Errors) {
  using S = std::vector<NodeSpec>;
  auto bad = [](const S& s) { EXPECT_THROW(Hierarchy::from_nodes(s), DataError); };
  bad({});
  bad({{"r", "r", std::nullopt}, {"a", "a", "missing"}});
  bad({{"r", "r", std::nullopt}, {"a", "a", "r"}, {"x", "x", "x"}});
  bad({{"r", "r", std::nullopt}, {"a", "a", "b"}, {"b", "b", "a"}, {"c", "c", "r"}, {"d", "d", "c"}});
  bad({{"r", "r", std::nullopt}, {"s", "s", std::nullopt}});
  bad({{"", "r", std::nullopt}});
}
