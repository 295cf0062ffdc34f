#include <gtest/gtest.h>

#include <cmath>

#include "hiershift/conditional.hpp"
#include "hiershift/datagen.hpp"
#include "hiershift/eval.hpp"

using namespace hiershift;

namespace {

Hierarchy fixture(const std::string& name) {
  return parse_hierarchy(detail::read_file(std::string(HS_FIXTURES_DIR) + "/" + name + ".hier"));
}

ValidityMatrix gate(std::vector<std::uint8_t> bits, int from, int to) { return {std::move(bits), from, to}; }

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  RandomStream rng(seed);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

TrainData seen_data(const Hierarchy& h, std::uint64_t seed, std::size_t per_leaf = 40) {
  const std::size_t leaves = h.children(h.classes().front()).size();
  auto hp = std::make_shared<const Hierarchy>(h);
  GenParams p;
  p.samples_per_leaf = per_leaf;
  p.seed = seed;
  const auto d = generate_synthetic(hp, p);
  return TrainData::from(materialize(d, make_split(h, leaves - 1, 1, seed), Domain::kSeen), h.class_level());
}

TrainConfig quick(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.learning_rate = 0.01;
  c.epochs = 30;
  return c;
}

}  // namespace

TEST(Validity, MatchesRowLoop) {
  const Tensor z = random_matrix(50, 6, 1);
  std::vector<std::size_t> y;
  RandomStream rng(2);
  for (int i = 0; i < 50; ++i) y.push_back(rng.below(6));
  const auto v = validity_from_logits(z, y, 2);
  EXPECT_EQ(v.from_level, 2);
  EXPECT_EQ(v.to_level, 3);
  for (std::size_t r = 0; r < 50; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 6; ++c)
      if (z(r, c) > z(r, best)) best = c;
    EXPECT_EQ(v.bits[r], best == y[r] ? 1 : 0);
  }
}

TEST(Validity, ComposeExamples) {
  const ValidityMatrix parts[] = {gate({1, 0, 1, 1}, 1, 2), gate({1, 1, 0, 1}, 2, 3)};
  const auto c = compose_validity(parts);
  EXPECT_EQ(c.bits, (std::vector<std::uint8_t>{1, 0, 0, 1}));
  EXPECT_EQ(c.from_level, 1);
  EXPECT_EQ(c.to_level, 3);

  const ValidityMatrix with_ones[] = {gate({1, 0, 1, 1}, 1, 2), gate({1, 1, 1, 1}, 2, 3)};
  EXPECT_EQ(compose_validity(with_ones).bits, (std::vector<std::uint8_t>{1, 0, 1, 1}));
  const ValidityMatrix with_zeros[] = {gate({1, 0, 1, 1}, 1, 2), gate({0, 0, 0, 0}, 2, 3)};
  EXPECT_EQ(compose_validity(with_zeros).popcount(), 0u);

  const ValidityMatrix gap[] = {gate({1, 1}, 1, 2), gate({1, 1}, 3, 4)};
  EXPECT_THROW(compose_validity(gap), NumericError);
  const ValidityMatrix lengths[] = {gate({1, 1}, 1, 2), gate({1}, 2, 3)};
  EXPECT_THROW(compose_validity(lengths), NumericError);
}

TEST(ConditionalLoss, Cases) {
  const Tensor z = random_matrix(4, 3, 5);
  const std::size_t y[] = {0, 2, 1, 1};
  Tape t;
  const Tensor per = t.value(t.softmax_cross_entropy(t.constant(z), y));

  EXPECT_DOUBLE_EQ(conditional_loss(z, y, ValidityMatrix::all_ones(4, 1)), (per[0] + per[1] + per[2] + per[3]) / 4);
  EXPECT_DOUBLE_EQ(conditional_loss(z, y, gate({0, 1, 0, 1}, 1, 2)), (per[1] + per[3]) / 2);
  EXPECT_EQ(conditional_loss(z, y, gate({0, 0, 0, 0}, 1, 2)), 0.0);
  EXPECT_THROW(conditional_loss(z, y, gate({1, 1}, 1, 2)), NumericError);
}

// Rows outside the gate can hold anything, even non-finite values.
TEST(ConditionalLoss, MaskedRowsAreIgnored) {
  Tensor z = random_matrix(3, 3, 6);
  const std::size_t y[] = {0, 1, 2};
  const auto v = gate({1, 0, 1}, 1, 2);
  const double base = conditional_loss(z, y, v);
  z(1, 0) = 1e300;
  z(1, 2) = -7;
  EXPECT_EQ(conditional_loss(z, y, v), base);
}

TEST(Training, ValidCountsShrinkWithDepth) {
  const auto h = fixture("living17");
  const auto data = seen_data(h, 1, 10);
  auto net = build_network(h, TrainMode::kConditional, NetConfig{}, 1);
  auto cfg = quick(TrainMode::kConditional);
  auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
  for (int e = 0; e < 3; ++e) {
    const auto s = train_epoch(net, data, cfg, opt, e);
    ASSERT_EQ(s.valid.size(), 3u);
    EXPECT_EQ(s.valid[0], s.samples);
    EXPECT_LE(s.valid[1], s.valid[0]);
    EXPECT_LE(s.valid[2], s.valid[1]);
  }
}

TEST(Training, ConditionalConverges) {
  const auto h = fixture("custom");
  const auto data = seen_data(h, 3);
  auto net = build_network(h, TrainMode::kConditional, NetConfig{}, 3);
  auto cfg = quick(TrainMode::kConditional);
  auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
  for (int e = 0; e < cfg.epochs; ++e) train_epoch(net, data, cfg, opt, e);
  const auto pred = predict(net, data.features);
  EXPECT_GT(accuracy(pred, data.targets.at(2)), 0.95);
}

TEST(Training, FlatLossDecreases) {
  const auto h = fixture("custom");
  const auto data = seen_data(h, 4);
  auto net = build_network(h, TrainMode::kFlat, NetConfig{}, 4);
  auto cfg = quick(TrainMode::kFlat);
  auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
  const double first = train_epoch(net, data, cfg, opt, 0).loss[0];
  double last = first;
  for (int e = 1; e < 5; ++e) last = train_epoch(net, data, cfg, opt, e).loss[0];
  EXPECT_LT(last, first);
  auto multi = build_network(h, TrainMode::kConditional, NetConfig{}, 4);
  EXPECT_THROW(train_epoch_flat(multi, data, cfg, opt, 0), ConfigError);
}

// With all weight on the first head, the other heads never move.
TEST(Training, BranchWeightsFreezeOtherHeads) {
  const auto h = fixture("living17");
  const auto data = seen_data(h, 5, 10);
  auto net = build_network(h, TrainMode::kBranchWeighted, NetConfig{}, 5);
  const auto before = net;
  auto cfg = quick(TrainMode::kBranchWeighted);
  cfg.branch_schedule = {{0, {1.0, 0.0, 0.0}}};
  auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
  for (int e = 0; e < 2; ++e) train_epoch(net, data, cfg, opt, e);
  EXPECT_FALSE(net.heads()[0].weight == before.heads()[0].weight);
  EXPECT_TRUE(net.heads()[1].weight == before.heads()[1].weight);
  EXPECT_TRUE(net.heads()[2].weight == before.heads()[2].weight);
  EXPECT_TRUE(net.blocks()[3].weight == before.blocks()[3].weight);
}

TEST(Training, BranchScheduleSwitchesAtBoundary) {
  const auto h = fixture("custom");
  const auto data = seen_data(h, 6, 5);
  auto net = build_network(h, TrainMode::kBranchWeighted, NetConfig{}, 6);
  auto cfg = quick(TrainMode::kBranchWeighted);
  cfg.branch_schedule = {{0, {0.9, 0.1}}, {2, {0.3, 0.7}}};
  auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
  EXPECT_EQ(train_epoch(net, data, cfg, opt, 1).weights, (std::vector<double>{0.9, 0.1}));
  EXPECT_EQ(train_epoch(net, data, cfg, opt, 2).weights, (std::vector<double>{0.3, 0.7}));

  cfg.branch_schedule = {{1, {0.5, 0.5}}};
  EXPECT_THROW(train_epoch(net, data, cfg, opt, 0), ConfigError);
  cfg.branch_schedule = {{0, {1.0}}};
  EXPECT_THROW(train_epoch(net, data, cfg, opt, 0), ConfigError);
}

TEST(Training, DefaultBranchSchedule) {
  const auto s = default_branch_schedule(30, 3);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].start_epoch, 0);
  EXPECT_EQ(s[1].start_epoch, 10);
  EXPECT_EQ(s[2].start_epoch, 20);
  EXPECT_EQ(s[0].weights, (std::vector<double>{0.8, 0.1, 0.1}));
  EXPECT_EQ(s[2].weights, (std::vector<double>{0.1, 0.2, 0.7}));
  for (std::size_t heads : {1u, 2u, 4u})
    for (const auto& p : default_branch_schedule(30, heads)) {
      ASSERT_EQ(p.weights.size(), heads);
      double sum = 0;
      for (double w : p.weights) sum += w;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Training, Deterministic) {
  const auto h = fixture("custom");
  const auto data = seen_data(h, 7, 10);
  auto run = [&] {
    auto net = build_network(h, TrainMode::kConditional, NetConfig{}, 7);
    auto cfg = quick(TrainMode::kConditional);
    auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
    for (int e = 0; e < 3; ++e) train_epoch(net, data, cfg, opt, e);
    return net;
  };
  EXPECT_TRUE(run().same_parameters(run()));
}

TEST(Training, DivergenceIsNumericError) {
  const auto h = fixture("custom");
  const auto data = seen_data(h, 8, 20);
  auto net = build_network(h, TrainMode::kFlat, NetConfig{}, 8);
  auto cfg = quick(TrainMode::kFlat);
  cfg.learning_rate = 50.0;
  auto opt = OptimState::make(cfg.learning_rate, cfg.momentum, cfg.drop_factor, cfg.drop_every);
  EXPECT_THROW(
      for (int e = 0; e < 5; ++e) train_epoch(net, data, cfg, opt, e), NumericError);
}

TEST(Predict, UsesClassHeadOnly) {
  auto net = MultiHeadNet::build(NetConfig{4, 3, 2, {}}, {{1, 2}, {2, 3}}, 0);
  for (double& v : net.heads()[1].weight.values()) v = 0;
  net.heads()[1].bias[2] = 1.0;
  for (double& v : net.heads()[0].bias.values()) v = 100;
  const auto p = predict(net, random_matrix(5, 4, 1));
  for (auto c : p) EXPECT_EQ(c, 2u);
}
