#pragma once

// Reverse-mode automatic differentiation on a per-thread tape.
//
// A Tape stores the computation graph as an append-only, topologically
// ordered list of nodes.  Each node keeps a contiguous range of weighted
// edges back to its parents, so vector reductions (sums of log-densities
// over a plate, dot products) collapse into a single node instead of a
// chain of binary adds.  Var is a plain (value, node index) pair; index -1
// marks a constant that never touches the tape.  When no tape is active
// the same operator overloads run in value-only mode and stay bit-identical
// to the recording mode, because both compute the value the same way.
//
// One tape serves one evaluation on one thread.  Concurrent evaluations
// must use distinct tapes; the active tape is a thread-local slot managed
// by TapeScope.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "reparam/errors.hpp"

namespace reparam {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2*pi)/2

class Tape {
 public:
  struct Edge {
    int32_t parent;
    double weight;
  };

  // Begin/seal protocol: an operation appends the edges of the node it is
  // about to create, then seals them into a node.  Operations never
  // interleave, so a single watermark suffices.
  void edge(int32_t parent, double weight) {
    if (parent >= 0) edges_.push_back({parent, weight});
  }

  int32_t seal() {
    nodes_.push_back({mark_, static_cast<uint32_t>(edges_.size())});
    mark_ = static_cast<uint32_t>(edges_.size());
    return static_cast<int32_t>(nodes_.size()) - 1;
  }

  int32_t input_node() { return seal(); }

  void clear() {
    nodes_.clear();
    edges_.clear();
    mark_ = 0;
  }

  size_t size() const { return nodes_.size(); }

  // Propagates an adjoint of 1 from `root` back through the graph and
  // returns the adjoints of the first `n_inputs` nodes (the inputs, which
  // are always recorded first).  root < 0 means the output was a constant:
  // the gradient is identically zero.
  std::vector<double> reverse(int32_t root, size_t n_inputs) {
    std::vector<double> out(n_inputs, 0.0);
    if (root < 0) return out;
    adjoint_.assign(nodes_.size(), 0.0);
    adjoint_[static_cast<size_t>(root)] = 1.0;
    for (int32_t i = root; i >= 0; --i) {
      const double a = adjoint_[static_cast<size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<size_t>(i)];
      for (uint32_t e = n.begin; e < n.end; ++e)
        adjoint_[static_cast<size_t>(edges_[e].parent)] += a * edges_[e].weight;
    }
    for (size_t i = 0; i < n_inputs && i < adjoint_.size(); ++i) out[i] = adjoint_[i];
    return out;
  }

 private:
  struct Node {
    uint32_t begin;
    uint32_t end;
  };
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<double> adjoint_;
  uint32_t mark_ = 0;
};

inline Tape*& active_tape() {
  thread_local Tape* slot = nullptr;
  return slot;
}

// RAII binding of a tape to the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape* t) : prev_(active_tape()) { active_tape() = t; }
  ~TapeScope() { active_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

struct Var {
  double v = 0.0;
  int32_t idx = -1;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constants are the point
  Var(double value, int32_t index) : v(value), idx(index) {}

  bool tracked() const { return idx >= 0; }
};

inline Var tape_input(Tape& t, double value) { return Var(value, t.input_node()); }

namespace detail {

inline Var unary(double val, const Var& a, double da) {
  Tape* t = active_tape();
  if (t == nullptr || !a.tracked()) return Var(val);
  t->edge(a.idx, da);
  return Var(val, t->seal());
}

inline Var binary(double val, const Var& a, double da, const Var& b, double db) {
  Tape* t = active_tape();
  if (t == nullptr || (!a.tracked() && !b.tracked())) return Var(val);
  t->edge(a.idx, da);
  t->edge(b.idx, db);
  return Var(val, t->seal());
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a.v + b.v, a, 1.0, b, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a.v - b.v, a, 1.0, b, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a.v * b.v, a, b.v, b, a.v);
}
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.v;
  return detail::binary(a.v * inv, a, inv, b, -a.v * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(-a.v, a, -1.0); }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return detail::unary(e, a, e);
}
inline Var log(const Var& a) { return detail::unary(std::log(a.v), a, 1.0 / a.v); }
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.v);
  return detail::unary(s, a, 0.5 / s);
}
inline Var square(const Var& a) { return detail::unary(a.v * a.v, a, 2.0 * a.v); }

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  const double s = sigmoid(a.v);
  return detail::unary(s, a, s * (1.0 - s));
}

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline Var softplus(const Var& a) {
  return detail::unary(softplus(a.v), a, sigmoid(a.v));
}

// b^e for positive b, defined as exp(e*log b) so that forward and inverse
// partial-centring transforms share the exact same arithmetic.
inline Var pow_pos(const Var& b, const Var& e) {
  if (!(b.v > 0.0)) throw InvalidDistribution("pow_pos requires a positive base");
  return exp(e * log(b));
}

inline Var sum(std::span<const Var> xs) {
  double acc = 0.0;
  for (const Var& x : xs) acc += x.v;
  Tape* t = active_tape();
  if (t == nullptr) return Var(acc);
  bool tracked = false;
  for (const Var& x : xs) tracked = tracked || x.tracked();
  if (!tracked) return Var(acc);
  for (const Var& x : xs) t->edge(x.idx, 1.0);
  return Var(acc, t->seal());
}

// Dot product of a tracked vector with raw coefficients, fused into one node.
inline Var dot(std::span<const Var> w, std::span<const double> x) {
  if (w.size() != x.size()) throw DimensionMismatch("dot: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) acc += w[i].v * x[i];
  Tape* t = active_tape();
  if (t == nullptr) return Var(acc);
  bool tracked = false;
  for (const Var& wi : w) tracked = tracked || wi.tracked();
  if (!tracked) return Var(acc);
  for (size_t i = 0; i < w.size(); ++i) t->edge(w[i].idx, x[i]);
  return Var(acc, t->seal());
}

// Sum of Normal log-densities over a vector site, fused into one node.
// loc and scale broadcast: each must have length 1 or x.size().
inline Var normal_lpdf_sum(std::span<const Var> x, std::span<const Var> loc,
                           std::span<const Var> scale) {
  const size_t n = x.size();
  if ((loc.size() != 1 && loc.size() != n) || (scale.size() != 1 && scale.size() != n))
    throw DimensionMismatch("normal_lpdf_sum: parameter lengths must be 1 or n");
  Tape* t = active_tape();
  bool tracked = false;
  if (t != nullptr) {
    for (const Var& v : x) tracked = tracked || v.tracked();
    for (const Var& v : loc) tracked = tracked || v.tracked();
    for (const Var& v : scale) tracked = tracked || v.tracked();
  }
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Var& mu = loc[loc.size() == 1 ? 0 : i];
    const Var& sd = scale[scale.size() == 1 ? 0 : i];
    if (!(sd.v > 0.0)) throw InvalidDistribution("Normal scale must be positive");
    const double inv = 1.0 / sd.v;
    const double z = (x[i].v - mu.v) * inv;
    acc += -0.5 * z * z - std::log(sd.v) - kHalfLog2Pi;
    if (t != nullptr && tracked) {
      t->edge(x[i].idx, -z * inv);
      t->edge(mu.idx, z * inv);
      t->edge(sd.idx, (z * z - 1.0) * inv);
    }
  }
  if (t == nullptr || !tracked) return Var(acc);
  return Var(acc, t->seal());
}

inline Var normal_lpdf(const Var& x, const Var& loc, const Var& scale) {
  return normal_lpdf_sum(std::span<const Var>(&x, 1), std::span<const Var>(&loc, 1),
                         std::span<const Var>(&scale, 1));
}

// Sum of Bernoulli log-masses with logit parameterisation, fused into one
// node.  y[i] must be 0 or 1; log p = y*l - softplus(l) is evaluated in the
// numerically stable branch form.
inline Var bernoulli_logit_lpmf_sum(std::span<const double> y, std::span<const Var> logit) {
  if (y.size() != logit.size())
    throw DimensionMismatch("bernoulli_logit_lpmf_sum: length mismatch");
  Tape* t = active_tape();
  bool tracked = false;
  if (t != nullptr)
    for (const Var& v : logit) tracked = tracked || v.tracked();
  double acc = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0)
      throw InvalidDistribution("Bernoulli outcome must be 0 or 1");
    const double l = logit[i].v;
    acc += y[i] * l - softplus(l);
    if (t != nullptr && tracked) t->edge(logit[i].idx, y[i] - sigmoid(l));
  }
  if (t == nullptr || !tracked) return Var(acc);
  return Var(acc, t->seal());
}

inline std::atomic<long>& grad_counter() {
  static std::atomic<long> counter{0};
  return counter;
}

inline long grad_count() { return grad_counter().load(std::memory_order_relaxed); }
inline void reset_grad_count() { grad_counter().store(0, std::memory_order_relaxed); }

struct GradResult {
  double value = 0.0;
  std::vector<double> gradient;
};

// Evaluates f at x with a fresh tape and returns (f(x), df/dx).  Each call
// bumps the global gradient counter exactly once, so samplers can report
// their gradient budget.  Throws NonFiniteEvaluation if f(x) is not finite.
template <typename F>
GradResult grad(F&& f, std::span<const double> x) {
  thread_local Tape scratch;
  Tape local;
  // Reuse the thread-local tape unless an evaluation is already running on
  // this thread (nested differentiation), in which case a local tape keeps
  // the two graphs separate.
  Tape& tape = (active_tape() == nullptr) ? scratch : local;
  tape.clear();
  TapeScope scope(&tape);
  std::vector<Var> in;
  in.reserve(x.size());
  for (double xi : x) in.push_back(tape_input(tape, xi));
  Var y = f(std::span<const Var>(in.data(), in.size()));
  grad_counter().fetch_add(1, std::memory_order_relaxed);
  if (!std::isfinite(y.v))
    throw NonFiniteEvaluation("objective value is not finite");
  GradResult r;
  r.value = y.v;
  r.gradient = tape.reverse(y.idx, x.size());
  return r;
}

}  // namespace reparam
