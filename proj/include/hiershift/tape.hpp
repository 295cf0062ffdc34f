#pragma once
// Reverse-mode differentiation over a linear tape of matrix operations.
//
// Every operation appends a node holding its value and a closure that
// propagates the node's gradient to its inputs. Parameters are bound by
// reference: backward() accumulates into Tensor::grad() of the bound tensor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hiershift/error.hpp"
#include "hiershift/tensor.hpp"

namespace hiershift {

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  std::size_t id() const { return id_; }
  const Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(const Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  const Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Read-only view of an external tensor; receives no gradient.
  Var view(const Tensor& value) {
    Node n;
    n.external = &value;
    return push(std::move(n));
  }

  /// Trainable leaf bound to `p`.
  Var parameter(Tensor& p) {
    Node n;
    n.external = &p;
    n.bound = &p;
    n.requires_grad = true;
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return node(v).value(); }
  std::size_t size() const { return nodes_.size(); }

  /// a (n x k) * b (k x m)
  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows())
      throw NumericError("matmul shape mismatch: " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) + " * " +
                         std::to_string(B.rows()) + "x" + std::to_string(B.cols()));
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    Tensor C = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      double* c = &C(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double a_ip = A(i, p);
        const double* b = &B(p, 0);
        for (std::size_t j = 0; j < m; ++j) c[j] += a_ip * b[j];
      }
    }
    return record(std::move(C), {a, b}, [a, b, n, k, m](Tape& t, std::span<const double> g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      if (t.wants_grad(a)) {
        auto ga = t.grad_of(a);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * B(p, j);
            ga[i * k + p] += s;
          }
      }
      if (t.wants_grad(b)) {
        auto gb = t.grad_of(b);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double a_ip = A(i, p);
            for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += a_ip * g[i * m + j];
          }
      }
    });
  }

  /// Adds a bias row to every row of x.
  Var add_bias(Var x, Var bias) {
    const Tensor& X = value(x);
    const Tensor& b = value(bias);
    if (b.size() != X.cols()) throw NumericError("bias length does not match columns");
    Tensor Y = X;
    const std::size_t n = X.rows(), m = X.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) Y(i, j) += b[j];
    return record(std::move(Y), {x, bias}, [x, bias, n, m](Tape& t, std::span<const double> g) {
      if (t.wants_grad(x)) {
        auto gx = t.grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (t.wants_grad(bias)) {
        auto gb = t.grad_of(bias);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) throw NumericError("add shape mismatch");
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    return record(std::move(C), {a, b}, [a, b](Tape& t, std::span<const double> g) {
      for (Var v : {a, b}) {
        if (!t.wants_grad(v)) continue;
        auto gv = t.grad_of(v);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
      }
    });
  }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) throw NumericError("mul shape mismatch");
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    return record(std::move(C), {a, b}, [a, b](Tape& t, std::span<const double> g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      if (t.wants_grad(a)) {
        auto ga = t.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
      }
      if (t.wants_grad(b)) {
        auto gb = t.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
      }
    });
  }

  Var scale(Var x, double factor) {
    Tensor Y = value(x);
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= factor;
    return record(std::move(Y), {x}, [x, factor](Tape& t, std::span<const double> g) {
      auto gx = t.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }

  Var relu(Var x) {
    Tensor Y = value(x);
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = Y[i] > 0.0 ? Y[i] : 0.0;
    return record(std::move(Y), {x}, [x](Tape& t, std::span<const double> g) {
      const Tensor& X = t.value(x);
      auto gx = t.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (X[i] > 0.0) gx[i] += g[i];
    });
  }

  /// Sum of all elements as a scalar.
  Var sum(Var x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (double v : X.values()) s += v;
    return record(Tensor({}, s), {x}, [x](Tape& t, std::span<const double> g) {
      auto gx = t.grad_of(x);
      for (double& v : gx) v += g[0];
    });
  }

  /// Per-row softmax cross-entropy; returns a length-B vector.
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
    const Tensor& Z = value(logits);
    const std::size_t n = Z.rows(), c = Z.cols();
    if (targets.size() != n) throw NumericError("cross-entropy: target count does not match rows");
    Tensor loss({n});
    Tensor probs = Tensor::matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      if (targets[i] >= c)
        throw DataError("cross-entropy: target " + std::to_string(targets[i]) + " out of range for " + std::to_string(c) +
                        " classes");
      auto z = Z.row(i);
      const double mx = *std::max_element(z.begin(), z.end());
      double denom = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        probs(i, j) = std::exp(z[j] - mx);
        denom += probs(i, j);
      }
      for (std::size_t j = 0; j < c; ++j) probs(i, j) /= denom;
      loss[i] = std::log(denom) - (z[targets[i]] - mx);
    }
    std::vector<std::size_t> y(targets.begin(), targets.end());
    return record(std::move(loss), {logits},
                  [logits, y = std::move(y), probs = std::move(probs), n, c](Tape& t, std::span<const double> g) {
                    auto gz = t.grad_of(logits);
                    for (std::size_t i = 0; i < n; ++i) {
                      if (g[i] == 0.0) continue;
                      for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += g[i] * probs(i, j);
                      gz[i * c + y[i]] -= g[i];
                    }
                  });
  }

  /// Mean of the entries of a vector where mask is set. Unmasked entries are
  /// never read. With an empty mask the result is a constant 0.
  Var masked_mean(Var v, std::span<const std::uint8_t> mask) {
    const Tensor& V = value(v);
    if (mask.size() != V.size()) throw NumericError("mask length does not match vector length");
    std::size_t count = 0;
    double s = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) {
        s += V[i];
        ++count;
      }
    if (count == 0) return constant(Tensor({}, 0.0));
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    const double inv = 1.0 / static_cast<double>(count);
    return record(Tensor({}, s / static_cast<double>(count)), {v}, [v, m = std::move(m), inv](Tape& t, std::span<const double> g) {
      auto gv = t.grad_of(v);
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) gv[i] += g[0] * inv;
    });
  }

  /// Sum of scalars, left to right.
  Var add_scalars(std::span<const Var> terms) {
    if (terms.empty()) throw NumericError("sum of an empty list of terms");
    double s = value(terms[0])[0];
    for (std::size_t i = 1; i < terms.size(); ++i) s += value(terms[i])[0];
    std::vector<Var> parents(terms.begin(), terms.end());
    return record(Tensor({}, s), parents, [parents](Tape& t, std::span<const double> g) {
      for (Var p : parents)
        if (t.wants_grad(p)) t.grad_of(p)[0] += g[0];
    });
  }

  /// Propagates d(loss)/d(node) to every node and accumulates into bound parameters.
  void backward(Var loss) {
    if (loss.tape_ != this || loss.id_ >= nodes_.size())
      throw NumericError("backward: variable was not recorded on this tape");
    if (backward_done_) throw NumericError("backward: graph already consumed");
    if (value(loss).size() != 1) throw NumericError("backward: loss must be a scalar");
    backward_done_ = true;
    Node& root = nodes_[loss.id_];
    if (!root.requires_grad) return;
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      // Closures only touch gradients of earlier nodes; nodes_ never reallocates here.
      if (n.propagate) n.propagate(*this, n.grad);
      if (n.bound) {
        auto pg = n.bound->grad();
        for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
      }
    }
  }

  /// Gradient accumulated at a node during backward (zeros if unreached).
  std::vector<double> gradient(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return std::vector<double>(n.value().size(), 0.0);
    return n.grad;
  }

 private:
  using Propagate = std::function<void(Tape&, std::span<const double>)>;

  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* bound = nullptr;
    std::vector<double> grad;
    Propagate propagate;
    bool requires_grad = false;
    const Tensor& value() const { return external ? *external : owned; }
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var record(Tensor value, std::initializer_list<Var> parents, Propagate fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var record(Tensor value, const std::vector<Var>& parents, Propagate fn) {
    Node n;
    n.owned = std::move(value);
    for (Var p : parents) n.requires_grad = n.requires_grad || node(p).requires_grad;
    if (n.requires_grad) n.propagate = std::move(fn);
    return push(std::move(n));
  }

  const Node& node(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw NumericError("variable does not belong to this tape");
    return nodes_[v.id_];
  }

  bool wants_grad(Var v) const { return nodes_[v.id_].requires_grad; }

  std::span<double> grad_of(Var v) {
    Node& n = nodes_[v.id_];
    if (n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
    return n.grad;
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace hiershift
