#pragma once
// Conditional multi-head training.
//
// Head l is trained only on samples that every shallower head classified
// correctly in the same forward pass. The gate is a per-batch validity mask
// multiplied into the head's loss; masks are computed from argmax decisions
// and carry no gradient. Flat and branch-weighted baselines share the loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiershift/datagen.hpp"
#include "hiershift/error.hpp"
#include "hiershift/hierarchy.hpp"
#include "hiershift/network.hpp"
#include "hiershift/optim.hpp"
#include "hiershift/rng.hpp"
#include "hiershift/tape.hpp"

namespace hiershift {

/// Per-sample gate for the transition from `from_level` to `to_level`: bit b is
/// set iff sample b was correctly classified at every head in [from_level, to_level).
struct ValidityMatrix {
  std::vector<std::uint8_t> bits;
  int from_level = 1;
  int to_level = 1;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

  /// Gate with no conditions, used for the first head.
  static ValidityMatrix all_ones(std::size_t batch, int level) { return {std::vector<std::uint8_t>(batch, 1), level, level}; }

  bool operator==(const ValidityMatrix&) const = default;
};

/// Correctness of the head at `level`, i.e. the gate V_{level -> level+1}.
inline ValidityMatrix validity_from_logits(const Tensor& logits, std::span<const std::size_t> targets, int level) {
  if (logits.rows() != targets.size())
    throw NumericError("validity: " + std::to_string(logits.rows()) + " logit rows vs " + std::to_string(targets.size()) +
                       " targets");
  ValidityMatrix v{std::vector<std::uint8_t>(targets.size()), level, level + 1};
  for (std::size_t b = 0; b < targets.size(); ++b) v.bits[b] = argmax_row(logits.row(b)) == targets[b] ? 1 : 0;
  return v;
}

/// Elementwise product of gates over contiguous level ranges.
inline ValidityMatrix compose_validity(std::span<const ValidityMatrix> parts) {
  if (parts.empty()) throw NumericError("compose_validity: no parts");
  ValidityMatrix out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const ValidityMatrix& p = parts[i];
    if (p.size() != out.size()) throw NumericError("compose_validity: batch length mismatch");
    if (p.from_level != out.to_level)
      throw NumericError("compose_validity: level ranges not contiguous (" + std::to_string(out.to_level) + " then " +
                         std::to_string(p.from_level) + ")");
    for (std::size_t b = 0; b < out.size(); ++b) out.bits[b] = out.bits[b] & p.bits[b];
    out.to_level = p.to_level;
  }
  return out;
}

/// Cross-entropy averaged over samples with the gate set; a constant 0 when
/// the gate is empty.
inline Var conditional_loss(Tape& tape, Var logits, std::span<const std::size_t> targets, const ValidityMatrix& v) {
  if (v.size() != targets.size()) throw NumericError("conditional_loss: mask length does not match batch");
  return tape.masked_mean(tape.softmax_cross_entropy(logits, targets), v.bits);
}

inline double conditional_loss(const Tensor& logits, std::span<const std::size_t> targets, const ValidityMatrix& v) {
  Tape tape;
  return tape.value(conditional_loss(tape, tape.view(logits), targets, v))[0];
}

// ---------------------------------------------------------------------------
// Training configuration

enum class TrainMode { kConditional, kFlat, kBranchWeighted };

inline std::string_view mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kConditional: return "conditional";
    case TrainMode::kFlat: return "flat";
    case TrainMode::kBranchWeighted: return "branch";
  }
  return "?";
}

inline TrainMode parse_mode(std::string_view s) {
  if (s == "conditional") return TrainMode::kConditional;
  if (s == "flat") return TrainMode::kFlat;
  if (s == "branch" || s == "branch_weighted") return TrainMode::kBranchWeighted;
  throw ConfigError("unknown training mode '" + std::string(s) + "' (conditional|flat|branch)");
}

/// Weights over heads (shallowest first) from `start_epoch` until the next phase.
struct BranchPhase {
  int start_epoch = 0;
  std::vector<double> weights;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double drop_factor = 10.0;
  int drop_every = 10;
  TrainMode mode = TrainMode::kConditional;
  std::vector<BranchPhase> branch_schedule;
  std::uint64_t seed = 0;
};

/// Three phases over thirds of training that move weight from the coarse head
/// to the fine head. For three heads: (.8,.1,.1), (.2,.6,.2), (.1,.2,.7); other
/// head counts resample these profiles linearly and renormalize.
inline std::vector<BranchPhase> default_branch_schedule(int epochs, std::size_t heads) {
  static constexpr double kProfile[3][3] = {{0.8, 0.1, 0.1}, {0.2, 0.6, 0.2}, {0.1, 0.2, 0.7}};
  std::vector<BranchPhase> out;
  for (int phase = 0; phase < 3; ++phase) {
    BranchPhase p;
    p.start_epoch = epochs * phase / 3;
    if (heads == 3) {
      p.weights.assign(kProfile[phase], kProfile[phase] + 3);
    } else if (heads == 1) {
      p.weights = {1.0};
    } else {
      double total = 0.0;
      for (std::size_t h = 0; h < heads; ++h) {
        const double x = 2.0 * static_cast<double>(h) / static_cast<double>(heads - 1);
        const auto lo = static_cast<std::size_t>(std::min(1.0, std::floor(x)));
        const double t = x - static_cast<double>(lo);
        p.weights.push_back(kProfile[phase][lo] * (1.0 - t) + kProfile[phase][lo + 1] * t);
        total += p.weights.back();
      }
      for (double& w : p.weights) w /= total;
    }
    if (!out.empty() && out.back().start_epoch == p.start_epoch) out.back() = p;
    else out.push_back(std::move(p));
  }
  return out;
}

inline const std::vector<double>& branch_weights_at(const std::vector<BranchPhase>& schedule, int epoch) {
  const BranchPhase* found = nullptr;
  for (const auto& p : schedule)
    if (p.start_epoch <= epoch && (!found || p.start_epoch >= found->start_epoch)) found = &p;
  if (!found) throw ConfigError("branch schedule has no weights for epoch " + std::to_string(epoch));
  return found->weights;
}

/// Class-level supervision for training: features plus one target vector per head level.
struct TrainData {
  Tensor features;
  std::map<int, std::vector<std::size_t>> targets;  // level -> per-sample index

  std::size_t size() const { return features.rows(); }

  static TrainData from(const Materialized& m, int class_level) {
    TrainData d;
    d.features = m.features;
    for (int l = 1; l <= class_level; ++l) {
      auto& t = d.targets[l];
      t.reserve(m.paths.size());
      for (const auto& p : m.paths) t.push_back(p.indices.at(static_cast<std::size_t>(l - 1)));
    }
    return d;
  }
};

struct EpochStats {
  int epoch = 0;
  TrainMode mode = TrainMode::kConditional;
  double learning_rate = 0.0;
  std::vector<int> levels;
  std::vector<double> loss;            // mean over batches of each head's objective term
  std::vector<std::size_t> valid;      // samples that passed each head's gate
  std::vector<double> valid_fraction;  // valid / samples seen
  std::vector<double> weights;         // branch weights in effect (branch mode only)
  std::size_t samples = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["mode"] = std::string(mode_name(mode));
    j["learning_rate"] = learning_rate;
    j["levels"] = levels;
    j["loss"] = loss;
    j["valid_fraction"] = valid_fraction;
    if (!weights.empty()) j["weights"] = weights;
    return j;
  }
};

namespace detail {

inline std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream rng(stream_key(seed, "shuffle", std::to_string(epoch)));
  rng.shuffle(order);
  return order;
}

inline void check_heads(const MultiHeadNet& net, const TrainData& data) {
  for (int l : net.head_levels())
    if (!data.targets.count(l)) throw ConfigError("no targets for head at level " + std::to_string(l));
}

/// One pass over `data` in seed-determined order. `objective` turns the
/// recorded logits and batch targets into per-head loss terms.
template <typename Objective>
EpochStats run_epoch(MultiHeadNet& net, const TrainData& data, const TrainConfig& cfg, OptimState& opt, int epoch,
                     Objective objective) {
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  check_heads(net, data);
  apply_schedule(opt, epoch);
  EpochStats stats;
  stats.epoch = epoch;
  stats.mode = cfg.mode;
  stats.learning_rate = opt.learning_rate;
  stats.levels = net.head_levels();
  const std::size_t heads = stats.levels.size();
  stats.loss.assign(heads, 0.0);
  stats.valid.assign(heads, 0);

  const auto order = batch_order(data.size(), cfg.seed, epoch);
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    const Tensor x = data.features.gather_rows(idx);
    std::map<int, std::vector<std::size_t>> y;
    for (int l : stats.levels) {
      auto& t = y[l];
      for (std::size_t i : idx) t.push_back(data.targets.at(l)[i]);
    }

    Tape tape;
    Recorded rec = forward(tape, net, x);
    std::vector<Var> terms;
    std::vector<std::size_t> valid(heads, idx.size());
    objective(tape, rec, y, terms, valid);
    Var total = tape.add_scalars(terms);
    const double total_value = tape.value(total)[0];
    if (!std::isfinite(total_value))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches));
    tape.backward(total);
    sgd_step(net, opt);

    for (std::size_t h = 0; h < heads; ++h) {
      stats.loss[h] += tape.value(terms[h])[0];
      stats.valid[h] += valid[h];
    }
    stats.samples += idx.size();
    ++batches;
  }
  for (std::size_t h = 0; h < heads; ++h) {
    stats.loss[h] /= static_cast<double>(std::max<std::size_t>(batches, 1));
    stats.valid_fraction.push_back(stats.samples ? static_cast<double>(stats.valid[h]) / static_cast<double>(stats.samples) : 0.0);
  }
  return stats;
}

}  // namespace detail

/// Sum over heads of gated cross-entropy; head l's gate is the product of the
/// correctness of heads 1..l-1 in this forward pass.
inline EpochStats train_epoch_conditional(MultiHeadNet& net, const TrainData& data, const TrainConfig& cfg, OptimState& opt,
                                          int epoch) {
  return detail::run_epoch(net, data, cfg, opt, epoch,
                           [&](Tape& tape, const Recorded& rec, const std::map<int, std::vector<std::size_t>>& y,
                               std::vector<Var>& terms, std::vector<std::size_t>& valid) {
                             const auto levels = net.head_levels();
                             const std::size_t batch = y.at(levels.front()).size();
                             std::vector<ValidityMatrix> chain;
                             ValidityMatrix gate = ValidityMatrix::all_ones(batch, levels.front());
                             for (std::size_t h = 0; h < levels.size(); ++h) {
                               const int level = levels[h];
                               if (h > 0) gate = compose_validity(chain);
                               valid[h] = gate.popcount();
                               terms.push_back(conditional_loss(tape, rec.logits.at(level), y.at(level), gate));
                               ValidityMatrix step = validity_from_logits(tape.value(rec.logits.at(level)), y.at(level), level);
                               if (h + 1 < levels.size()) step.to_level = levels[h + 1];
                               chain.push_back(std::move(step));
                             }
                           });
}

/// Plain cross-entropy on the class-level head only. Expects a single-head network.
inline EpochStats train_epoch_flat(MultiHeadNet& net, const TrainData& data, const TrainConfig& cfg, OptimState& opt,
                                   int epoch) {
  if (net.heads().size() != 1) throw ConfigError("flat training expects a single-head network");
  return detail::run_epoch(net, data, cfg, opt, epoch,
                           [&](Tape& tape, const Recorded& rec, const std::map<int, std::vector<std::size_t>>& y,
                               std::vector<Var>& terms, std::vector<std::size_t>&) {
                             const int level = net.heads().front().level;
                             const auto& t = y.at(level);
                             terms.push_back(conditional_loss(tape, rec.logits.at(level), t, ValidityMatrix::all_ones(t.size(), level)));
                           });
}

/// Epoch-weighted sum of unmasked per-head cross-entropies.
inline EpochStats train_epoch_branch_weighted(MultiHeadNet& net, const TrainData& data, const TrainConfig& cfg,
                                              OptimState& opt, int epoch) {
  const auto& weights = branch_weights_at(cfg.branch_schedule, epoch);
  if (weights.size() != net.heads().size())
    throw ConfigError("branch schedule has " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(net.heads().size()) + " heads");
  for (double w : weights)
    if (!(w >= 0.0)) throw ConfigError("branch weights must be non-negative");
  auto stats = detail::run_epoch(net, data, cfg, opt, epoch,
                                 [&](Tape& tape, const Recorded& rec, const std::map<int, std::vector<std::size_t>>& y,
                                     std::vector<Var>& terms, std::vector<std::size_t>&) {
                                   const auto levels = net.head_levels();
                                   for (std::size_t h = 0; h < levels.size(); ++h) {
                                     const auto& t = y.at(levels[h]);
                                     Var l = conditional_loss(tape, rec.logits.at(levels[h]), t, ValidityMatrix::all_ones(t.size(), levels[h]));
                                     terms.push_back(tape.scale(l, weights[h]));
                                   }
                                 });
  stats.weights = weights;
  return stats;
}

inline EpochStats train_epoch(MultiHeadNet& net, const TrainData& data, const TrainConfig& cfg, OptimState& opt, int epoch) {
  switch (cfg.mode) {
    case TrainMode::kConditional: return train_epoch_conditional(net, data, cfg, opt, epoch);
    case TrainMode::kFlat: return train_epoch_flat(net, data, cfg, opt, epoch);
    case TrainMode::kBranchWeighted: return train_epoch_branch_weighted(net, data, cfg, opt, epoch);
  }
  throw ConfigError("unknown mode");
}

/// Builds the network a mode trains: all levels 1..class_level, or only the
/// class level for flat training.
inline MultiHeadNet build_network(const Hierarchy& h, TrainMode mode, NetConfig net_cfg, std::uint64_t seed) {
  std::vector<std::pair<int, std::size_t>> heads;
  const int first = mode == TrainMode::kFlat ? h.class_level() : 1;
  for (int l = first; l <= h.class_level(); ++l) heads.emplace_back(l, h.count_at_level(l));
  if (mode == TrainMode::kFlat) net_cfg.attachment.clear();
  return MultiHeadNet::build(net_cfg, heads, seed);
}

/// Class-level head argmax per row; shallower heads are not consulted.
inline std::vector<std::size_t> predict(const MultiHeadNet& net, const Tensor& x) {
  auto logits = forward(net, x);
  const Tensor& z = logits.at(net.final_head().level);
  std::vector<std::size_t> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = argmax_row(z.row(r));
  return out;
}

}  // namespace hiershift
