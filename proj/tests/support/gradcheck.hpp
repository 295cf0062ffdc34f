#pragma once
// Central finite differences against tape gradients for the conditional
// objective. Gates are frozen from the unperturbed pass so the objective is
// smooth in the parameters.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "hiershift/conditional.hpp"

namespace gradcheck {

using Targets = std::map<int, std::vector<std::size_t>>;
using Gates = std::map<int, hiershift::ValidityMatrix>;

inline Gates gates_for(const hiershift::MultiHeadNet& net, const hiershift::Tensor& x, const Targets& y) {
  const auto logits = hiershift::forward(net, x);
  Gates out;
  std::vector<hiershift::ValidityMatrix> chain;
  const auto levels = net.head_levels();
  for (std::size_t h = 0; h < levels.size(); ++h) {
    const int l = levels[h];
    out[l] = h == 0 ? hiershift::ValidityMatrix::all_ones(x.rows(), l) : hiershift::compose_validity(chain);
    auto step = hiershift::validity_from_logits(logits.at(l), y.at(l), l);
    if (h + 1 < levels.size()) step.to_level = levels[h + 1];
    chain.push_back(step);
  }
  return out;
}

inline hiershift::Var objective(hiershift::Tape& tape, const hiershift::Recorded& rec, const Targets& y, const Gates& g) {
  std::vector<hiershift::Var> terms;
  for (const auto& [l, v] : rec.logits) terms.push_back(hiershift::conditional_loss(tape, v, y.at(l), g.at(l)));
  return tape.add_scalars(terms);
}

inline double loss_value(hiershift::MultiHeadNet& net, const hiershift::Tensor& x, const Targets& y, const Gates& g) {
  hiershift::Tape tape;
  auto rec = hiershift::forward(tape, net, x);
  return tape.value(objective(tape, rec, y, g))[0];
}

/// On/off state of every ReLU unit for the batch, recomputed from the block
/// weights without the tape.
inline std::vector<std::uint8_t> relu_pattern(const hiershift::MultiHeadNet& net, const hiershift::Tensor& x) {
  std::vector<std::uint8_t> out;
  std::vector<double> h(x.values().begin(), x.values().end());
  std::size_t width = x.cols();
  for (const auto& blk : net.blocks()) {
    const std::size_t fo = blk.fan_out();
    std::vector<double> next(x.rows() * fo);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < fo; ++j) {
        double z = blk.bias[j];
        for (std::size_t i = 0; i < width; ++i) z += h[r * width + i] * blk.weight(i, j);
        const bool on = z > 0.0;
        if (blk.activation == hiershift::Activation::kRelu) out.push_back(on);
        double a = blk.activation == hiershift::Activation::kRelu ? (on ? z : 0.0) : z;
        if (blk.residual) a += h[r * width + j];
        next[r * fo + j] = a;
      }
    h = std::move(next);
    width = fo;
  }
  return out;
}

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Entries whose +-eps perturbation flipped a ReLU unit; central differences
  /// there do not estimate a derivative.
  std::size_t kink_crossings = 0;
};

/// Largest relative error over every parameter entry. Entries where both
/// gradients are below `floor` in magnitude are compared absolutely.
inline Result check(hiershift::MultiHeadNet& net, const hiershift::Tensor& x, const Targets& y, double eps = 1e-4,
                    double floor = 1e-6) {
  const Gates g = gates_for(net, x, y);
  net.zero_grad();
  {
    hiershift::Tape tape;
    auto rec = hiershift::forward(tape, net, x);
    tape.backward(objective(tape, rec, y, g));
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : net.parameters()) {
    auto gr = p->grad();
    analytic.emplace_back(gr.begin(), gr.end());
  }
  net.zero_grad();

  Result r;
  const auto base_pattern = relu_pattern(net, x);
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i]->values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + eps;
      const double up = loss_value(net, x, y, g);
      bool crossed = relu_pattern(net, x) != base_pattern;
      values[j] = saved - eps;
      const double down = loss_value(net, x, y, g);
      crossed = crossed || relu_pattern(net, x) != base_pattern;
      values[j] = saved;
      r.kink_crossings += crossed;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[i][j];
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / scale);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gradcheck
