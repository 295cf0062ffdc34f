#pragma once

#include <cmath>
#include <vector>

#include "hiershift/error.hpp"
#include "hiershift/network.hpp"

namespace hiershift {

/// SGD with heavy-ball momentum and a step learning-rate schedule.
struct OptimState {
  double base_learning_rate = 0.1;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double drop_factor = 10.0;
  int drop_every_epochs = 40;
  std::vector<std::vector<double>> velocity;

  static OptimState make(double lr, double momentum, double drop_factor, int drop_every) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(drop_factor >= 1.0)) throw ConfigError("drop_factor must be >= 1");
    if (drop_every < 1) throw ConfigError("drop_every must be >= 1");
    return OptimState{lr, lr, momentum, drop_factor, drop_every, {}};
  }
};

/// learning_rate = base / drop_factor^floor(epoch / drop_every).
inline void apply_schedule(OptimState& opt, int epoch) {
  opt.learning_rate = opt.base_learning_rate;
  for (int k = epoch / opt.drop_every_epochs; k > 0; --k) opt.learning_rate /= opt.drop_factor;
}

/// v <- momentum * v + g;  p <- p - lr * v. Consumes and clears the gradients.
inline void sgd_step(MultiHeadNet& net, OptimState& opt) {
  auto params = net.parameters();
  if (opt.velocity.empty()) {
    for (Tensor* p : params) opt.velocity.emplace_back(p->size(), 0.0);
  }
  if (opt.velocity.size() != params.size()) throw NumericError("optimizer state does not match network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& v = opt.velocity[i];
    if (v.size() != p.size()) throw NumericError("optimizer state does not match network");
    auto values = p.values();
    if (!p.has_grad()) {
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] *= opt.momentum;
        values[j] -= opt.learning_rate * v[j];
      }
      continue;
    }
    auto g = p.grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = opt.momentum * v[j] + g[j];
      values[j] -= opt.learning_rate * v[j];
    }
    p.zero_grad();
  }
}

}  // namespace hiershift
