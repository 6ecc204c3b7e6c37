#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape records every operation on active variables as a node with a list of
// (parent, local partial) edges. Nodes are appended in evaluation order, so a
// single reverse sweep from the output visits them in topological order.
// A Var whose index is negative is a constant and never touches the tape.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tirelearn/error.hpp"

namespace tirelearn {

class Tape;

class Var {
 public:
  Var() = default;
  Var(double value) : value_(value) {}  // NOLINT: implicit constant

  double value() const { return value_; }
  bool is_constant() const { return index_ < 0; }
  std::int32_t index() const { return index_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index, double value) : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
  double value_ = 0.0;
};

class Tape {
 public:
  struct Edge {
    std::int32_t parent;
    double partial;
  };

  Tape() { ends_.reserve(1024); edges_.reserve(4096); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New independent variable (a leaf).
  Var variable(double value) {
    ends_.push_back(static_cast<std::uint32_t>(edges_.size()));
    return Var(this, static_cast<std::int32_t>(ends_.size() - 1), value);
  }

  Var unary(const Var& x, double value, double dx) {
    edges_.push_back({x.index_, dx});
    ends_.push_back(static_cast<std::uint32_t>(edges_.size()));
    return Var(this, static_cast<std::int32_t>(ends_.size() - 1), value);
  }

  Var binary(const Var& x, double dx, const Var& y, double dy, double value) {
    edges_.push_back({x.index_, dx});
    edges_.push_back({y.index_, dy});
    ends_.push_back(static_cast<std::uint32_t>(edges_.size()));
    return Var(this, static_cast<std::int32_t>(ends_.size() - 1), value);
  }

  /// Starts an n-ary node; call add_edge for each parent then finish_node.
  void add_edge(const Var& parent, double partial) { edges_.push_back({parent.index_, partial}); }
  Var finish_node(double value) {
    ends_.push_back(static_cast<std::uint32_t>(edges_.size()));
    return Var(this, static_cast<std::int32_t>(ends_.size() - 1), value);
  }

  std::size_t size() const { return ends_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  void clear() {
    ends_.clear();
    edges_.clear();
    adjoints_.clear();
  }

  /// Reverse sweep seeded with d(out)/d(out) = 1. Adjoints of all nodes
  /// recorded before `out` are available afterwards via adjoint().
  void backward(const Var& out) {
    adjoints_.assign(ends_.size(), 0.0);
    if (out.is_constant()) return;
    adjoints_[static_cast<std::size_t>(out.index_)] = 1.0;
    for (std::int32_t i = out.index_; i >= 0; --i) {
      const double a = adjoints_[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const std::uint32_t begin = i == 0 ? 0u : ends_[static_cast<std::size_t>(i) - 1];
      const std::uint32_t end = ends_[static_cast<std::size_t>(i)];
      for (std::uint32_t k = begin; k < end; ++k) {
        adjoints_[static_cast<std::size_t>(edges_[k].parent)] += a * edges_[k].partial;
      }
    }
  }

  double adjoint(const Var& v) const {
    if (v.is_constant() || static_cast<std::size_t>(v.index_) >= adjoints_.size()) return 0.0;
    return adjoints_[static_cast<std::size_t>(v.index_)];
  }

  std::vector<double> gradient(const Var& out, std::span<const Var> wrt) {
    backward(out);
    std::vector<double> g(wrt.size());
    for (std::size_t i = 0; i < wrt.size(); ++i) g[i] = adjoint(wrt[i]);
    return g;
  }

 private:
  std::vector<std::uint32_t> ends_;
  std::vector<Edge> edges_;
  std::vector<double> adjoints_;
};

namespace detail {

inline Var unary(const Var& x, double value, double dx) {
  if (x.is_constant()) return Var(value);
  return x.tape()->unary(x, value, dx);
}

inline Var binary(const Var& x, double dx, const Var& y, double dy, double value) {
  if (x.is_constant()) {
    if (y.is_constant()) return Var(value);
    return y.tape()->unary(y, value, dy);
  }
  if (y.is_constant()) return x.tape()->unary(x, value, dx);
  return x.tape()->binary(x, dx, y, dy, value);
}

}  // namespace detail

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

// Plain double overloads so unqualified calls in scalar-generic code resolve
// without implicit promotion to Var.
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double tan(double x) { return std::tan(x); }
inline double atan(double x) { return std::atan(x); }
inline double atan2(double y, double x) { return std::atan2(y, x); }
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double atanh(double x) { return std::atanh(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double abs(double x) { return std::abs(x); }
inline double min(double x, double y) { return x <= y ? x : y; }
inline double max(double x, double y) { return x >= y ? x : y; }
inline bool isfinite(double x) { return std::isfinite(x); }

inline Var operator+(const Var& x, const Var& y) {
  return detail::binary(x, 1.0, y, 1.0, x.value() + y.value());
}
inline Var operator-(const Var& x, const Var& y) {
  return detail::binary(x, 1.0, y, -1.0, x.value() - y.value());
}
inline Var operator*(const Var& x, const Var& y) {
  return detail::binary(x, y.value(), y, x.value(), x.value() * y.value());
}
inline Var operator/(const Var& x, const Var& y) {
  const double inv = 1.0 / y.value();
  const double q = x.value() * inv;
  return detail::binary(x, inv, y, -q * inv, q);
}
inline Var operator-(const Var& x) { return detail::unary(x, -x.value(), -1.0); }

inline Var operator+(const Var& x, double c) { return detail::unary(x, x.value() + c, 1.0); }
inline Var operator+(double c, const Var& x) { return detail::unary(x, x.value() + c, 1.0); }
inline Var operator-(const Var& x, double c) { return detail::unary(x, x.value() - c, 1.0); }
inline Var operator-(double c, const Var& x) { return detail::unary(x, c - x.value(), -1.0); }
inline Var operator*(const Var& x, double c) { return detail::unary(x, x.value() * c, c); }
inline Var operator*(double c, const Var& x) { return detail::unary(x, x.value() * c, c); }
inline Var operator/(const Var& x, double c) { return detail::unary(x, x.value() / c, 1.0 / c); }
inline Var operator/(double c, const Var& x) {
  const double q = c / x.value();
  return detail::unary(x, q, -q / x.value());
}

inline Var& operator+=(Var& x, const Var& y) { return x = x + y; }
inline Var& operator-=(Var& x, const Var& y) { return x = x - y; }
inline Var& operator*=(Var& x, const Var& y) { return x = x * y; }
inline Var& operator/=(Var& x, const Var& y) { return x = x / y; }

inline bool operator<(const Var& x, const Var& y) { return x.value() < y.value(); }
inline bool operator>(const Var& x, const Var& y) { return x.value() > y.value(); }
inline bool operator<=(const Var& x, const Var& y) { return x.value() <= y.value(); }
inline bool operator>=(const Var& x, const Var& y) { return x.value() >= y.value(); }

inline Var sin(const Var& x) { return detail::unary(x, std::sin(x.value()), std::cos(x.value())); }
inline Var cos(const Var& x) { return detail::unary(x, std::cos(x.value()), -std::sin(x.value())); }
inline Var tan(const Var& x) {
  const double t = std::tan(x.value());
  return detail::unary(x, t, 1.0 + t * t);
}
inline Var atan(const Var& x) {
  return detail::unary(x, std::atan(x.value()), 1.0 / (1.0 + x.value() * x.value()));
}
inline Var atan2(const Var& y, const Var& x) {
  const double d = x.value() * x.value() + y.value() * y.value();
  return detail::binary(y, x.value() / d, x, -y.value() / d, std::atan2(y.value(), x.value()));
}
inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return detail::unary(x, e, e);
}
inline Var log(const Var& x) { return detail::unary(x, std::log(x.value()), 1.0 / x.value()); }
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return detail::unary(x, t, 1.0 - t * t);
}
inline Var atanh(const Var& x) {
  return detail::unary(x, std::atanh(x.value()), 1.0 / (1.0 - x.value() * x.value()));
}
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  return detail::unary(x, s, 0.5 / s);
}
// Subgradient 0 at the kink.
inline Var abs(const Var& x) {
  const double v = x.value();
  return detail::unary(x, std::abs(v), v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}
inline Var min(const Var& x, const Var& y) {
  return x.value() <= y.value() ? detail::binary(x, 1.0, y, 0.0, x.value())
                                : detail::binary(x, 0.0, y, 1.0, y.value());
}
inline Var max(const Var& x, const Var& y) {
  return x.value() >= y.value() ? detail::binary(x, 1.0, y, 0.0, x.value())
                                : detail::binary(x, 0.0, y, 1.0, y.value());
}
inline Var min(const Var& x, double c) { return min(x, Var(c)); }
inline Var max(const Var& x, double c) { return max(x, Var(c)); }

inline bool isfinite(const Var& x) { return std::isfinite(x.value()); }

/// Dot product plus bias recorded as a single n-ary node.
inline double affine(const double* w, const double* x, int n, double b) {
  double acc = b;
  for (int i = 0; i < n; ++i) acc += w[i] * x[i];
  return acc;
}

inline Var affine(const double* w, const Var* x, int n, double b) {
  double acc = b;
  Tape* tape = nullptr;
  for (int i = 0; i < n; ++i) {
    acc += w[i] * x[i].value();
    if (!x[i].is_constant()) tape = x[i].tape();
  }
  if (tape == nullptr) return Var(acc);
  for (int i = 0; i < n; ++i) {
    if (!x[i].is_constant()) tape->add_edge(x[i], w[i]);
  }
  return tape->finish_node(acc);
}

inline Var affine(const Var* w, const Var* x, int n, const Var& b) {
  double acc = b.value();
  Tape* tape = b.tape();
  for (int i = 0; i < n; ++i) {
    acc += w[i].value() * x[i].value();
    if (tape == nullptr && !w[i].is_constant()) tape = w[i].tape();
    if (tape == nullptr && !x[i].is_constant()) tape = x[i].tape();
  }
  if (tape == nullptr) return Var(acc);
  for (int i = 0; i < n; ++i) {
    if (!w[i].is_constant()) tape->add_edge(w[i], x[i].value());
    if (!x[i].is_constant()) tape->add_edge(x[i], w[i].value());
  }
  if (!b.is_constant()) tape->add_edge(b, 1.0);
  return tape->finish_node(acc);
}

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Value and exact reverse-mode gradient of f at theta. `f` receives the
/// parameters as a span of active variables and returns a Var.
template <class F>
ValueAndGrad grad(F&& f, std::span<const double> theta) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(theta.size());
  for (double t : theta) vars.push_back(tape.variable(t));
  const Var out = f(std::span<const Var>(vars));
  if (!std::isfinite(out.value())) {
    throw Error(ErrorCode::non_finite_value, "forward pass produced a non-finite value");
  }
  ValueAndGrad result;
  result.value = out.value();
  result.gradient = tape.gradient(out, vars);
  return result;
}

}  // namespace tirelearn
