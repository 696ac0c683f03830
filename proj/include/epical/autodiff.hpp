#pragma once

// Reverse-mode automatic differentiation over a dynamically recorded scalar
// graph. A Tape owns the graph; a Var is a (tape, node) handle carrying a copy
// of its value. A Var without a tape is a constant: arithmetic on constants
// folds to plain doubles and records nothing.
//
// Every operation computes its value with exactly the same double arithmetic
// as the corresponding plain-double code path, so templated numerical code
// instantiated for double and for Var agrees bit for bit.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epical/errors.hpp"

namespace epical {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace ad {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  pow,
  exp,
  log,
  sqrt,
  tanh,
  sigmoid,
  abs,
  sum,
  dot,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "lift";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::pow: return "pow";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::abs: return "abs";
    case Op::sum: return "sum";
    case Op::dot: return "dot";
  }
  return "?";
}

class Tape;
class Gradient;

class Var {
 public:
  Var() = default;

  // Constant (no node). Non-finite constants are rejected like lifted leaves.
  Var(double constant) : value_(constant) {  // NOLINT(google-explicit-constructor)
    if (!std::isfinite(constant)) throw InvalidValue("non-finite constant");
  }

  double value() const noexcept { return value_; }
  bool is_constant() const noexcept { return tape_ == nullptr; }
  std::uint32_t index() const noexcept { return index_; }
  const Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  friend class Gradient;

  Var(Tape* tape, std::uint32_t index, std::uint32_t generation, double value)
      : tape_(tape), index_(index), generation_(generation), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  std::uint32_t generation_ = 0;
  double value_ = 0.0;
};

// Adjoints of every node after a backward sweep.
class Gradient {
 public:
  Gradient() = default;

  std::size_t size() const noexcept { return adjoints_.size(); }
  std::span<const double> adjoints() const noexcept { return adjoints_; }

  double operator[](const Var& v) const {
    if (v.is_constant()) return 0.0;
    check(v);
    return adjoints_[v.index_];
  }

  std::vector<double> wrt(std::span<const Var> vars) const {
    std::vector<double> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back((*this)[v]);
    return out;
  }

 private:
  friend class Tape;

  Gradient(const Tape* tape, std::uint32_t generation, std::vector<double> adj)
      : tape_(tape), generation_(generation), adjoints_(std::move(adj)) {}

  void check(const Var& v) const {
    if (v.tape_ != tape_ || v.generation_ != generation_ ||
        v.index_ >= adjoints_.size()) {
      throw StaleTape("variable does not belong to this gradient's tape");
    }
  }

  const Tape* tape_ = nullptr;
  std::uint32_t generation_ = 0;
  std::vector<double> adjoints_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint32_t generation() const noexcept { return generation_; }

  Var lift(double x) {
    if (!std::isfinite(x)) throw InvalidValue("lift of non-finite value");
    return push(Op::leaf, x, {});
  }

  std::vector<Var> lift(std::span<const double> xs) {
    std::vector<Var> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(lift(x));
    return out;
  }

  // Drops every node. Vars recorded before the call become stale.
  void clear() {
    nodes_.clear();
    values_.clear();
    parents_.clear();
    partials_.clear();
    ++generation_;
  }

  void reserve(std::size_t nodes, std::size_t edges) {
    nodes_.reserve(nodes);
    values_.reserve(nodes);
    parents_.reserve(edges);
    partials_.reserve(edges);
  }

  Op op(std::size_t node) const { return nodes_.at(node).op; }
  double value(std::size_t node) const { return values_.at(node); }

  Gradient backward(const Var& root) {
    if (root.is_constant()) {
      throw StaleTape("backward from a constant has no tape");
    }
    if (root.tape_ != this || root.generation_ != generation_ ||
        root.index_ >= nodes_.size()) {
      throw StaleTape("root was recorded on a cleared or different tape");
    }
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[root.index_] = 1.0;
    for (std::size_t i = root.index_ + 1; i-- > 0;) {
      const double a = adj[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      for (std::uint32_t k = n.first; k < n.first + n.count; ++k) {
        adj[parents_[k]] += a * partials_[k];
      }
    }
    return Gradient(this, generation_, std::move(adj));
  }

  // Records a node. Parents that are constants are skipped. Used by the
  // operator overloads below; exposed for custom n-ary kernels.
  Var push(Op op, double value,
           std::initializer_list<std::pair<const Var*, double>> parents) {
    check_value(op, value);
    const auto first = static_cast<std::uint32_t>(parents_.size());
    for (const auto& [p, d] : parents) {
      if (p->is_constant()) continue;
      own(*p);
      check_partial(op, d);
      parents_.push_back(p->index_);
      partials_.push_back(d);
    }
    return finish(op, value, first);
  }

  // Starts an n-ary node; call `edge` per parent then `close`.
  std::uint32_t open() const noexcept {
    return static_cast<std::uint32_t>(parents_.size());
  }

  void edge(Op op, const Var& p, double d) {
    if (p.is_constant()) return;
    own(p);
    check_partial(op, d);
    parents_.push_back(p.index_);
    partials_.push_back(d);
  }

  Var close(Op op, double value, std::uint32_t first) {
    check_value(op, value);
    return finish(op, value, first);
  }

 private:
  struct Node {
    std::uint32_t first;
    std::uint32_t count;
    Op op;
  };

  Var finish(Op op, double value, std::uint32_t first) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(
        Node{first, static_cast<std::uint32_t>(parents_.size()) - first, op});
    values_.push_back(value);
    return Var(this, index, generation_, value);
  }

  void own(const Var& v) const {
    if (v.tape_ != this) throw StaleTape("operand recorded on another tape");
    if (v.generation_ != generation_) {
      throw StaleTape("operand recorded before the tape was cleared");
    }
  }

  static void check_value(Op op, double value) {
    if (!std::isfinite(value)) {
      throw InvalidValue(std::string(op_name(op)) + " produced a non-finite value");
    }
  }

  static void check_partial(Op op, double d) {
    if (!std::isfinite(d)) {
      throw InvalidValue(std::string(op_name(op)) +
                         " produced a non-finite derivative");
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<std::uint32_t> parents_;
  std::vector<double> partials_;
  std::uint32_t generation_ = 0;
};

namespace detail {

inline Tape* tape_of(const Var& a, const Var& b) {
  if (!a.is_constant()) return const_cast<Tape*>(a.tape());
  if (!b.is_constant()) return const_cast<Tape*>(b.tape());
  return nullptr;
}

inline Var unary(Op op, const Var& a, double value, double d) {
  if (a.is_constant()) {
    if (!std::isfinite(value)) {
      throw InvalidValue(std::string(op_name(op)) + " produced a non-finite value");
    }
    return Var(value);
  }
  return const_cast<Tape*>(a.tape())->push(op, value, {{&a, d}});
}

inline Var binary(Op op, const Var& a, const Var& b, double value, double da,
                  double db) {
  Tape* t = tape_of(a, b);
  if (t == nullptr) {
    if (!std::isfinite(value)) {
      throw InvalidValue(std::string(op_name(op)) + " produced a non-finite value");
    }
    return Var(value);
  }
  return t->push(op, value, {{&a, da}, {&b, db}});
}

}  // namespace detail

inline double value_of(double x) noexcept { return x; }
inline double value_of(const Var& x) noexcept { return x.value(); }

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(Op::add, a, b, a.value() + b.value(), 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(Op::sub, a, b, a.value() - b.value(), 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(Op::mul, a, b, a.value() * b.value(), b.value(),
                        a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  if (b.value() == 0.0) throw DomainError("div: zero denominator");
  const double q = a.value() / b.value();
  return detail::binary(Op::div, a, b, q, 1.0 / b.value(), -q / b.value());
}
inline Var operator-(const Var& a) {
  return detail::unary(Op::neg, a, -a.value(), -1.0);
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return detail::unary(Op::exp, a, e, e);
}

inline Var log(const Var& a) {
  if (!(a.value() > 0.0)) throw DomainError("log: argument must be positive");
  return detail::unary(Op::log, a, std::log(a.value()), 1.0 / a.value());
}

inline Var sqrt(const Var& a) {
  if (!(a.value() > 0.0)) {
    if (a.is_constant() && a.value() == 0.0) return Var(0.0);
    throw DomainError("sqrt: argument must be positive");
  }
  const double s = std::sqrt(a.value());
  return detail::unary(Op::sqrt, a, s, 0.5 / s);
}

inline Var tanh(const Var& a) {
  const double t = std::tanh(a.value());
  return detail::unary(Op::tanh, a, t, 1.0 - t * t);
}

inline Var sigmoid(const Var& a) {
  const double s = epical::sigmoid(a.value());
  return detail::unary(Op::sigmoid, a, s, s * (1.0 - s));
}

// Subgradient 0 at exactly 0.
inline Var abs(const Var& a) {
  const double x = a.value();
  const double d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  return detail::unary(Op::abs, a, std::fabs(x), d);
}

inline Var pow(const Var& base, double exponent) {
  const double x = base.value();
  if (x < 0.0 && std::trunc(exponent) != exponent) {
    throw DomainError("pow: negative base with non-integer exponent");
  }
  if (x == 0.0 && exponent < 1.0 && exponent != 0.0) {
    throw DomainError("pow: derivative undefined at zero base");
  }
  const double v = std::pow(x, exponent);
  const double d = exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0);
  return detail::unary(Op::pow, base, v, d);
}

inline Var pow(const Var& base, const Var& exponent) {
  if (exponent.is_constant()) return pow(base, exponent.value());
  const double x = base.value();
  const double y = exponent.value();
  if (!(x > 0.0)) throw DomainError("pow: base must be positive for a variable exponent");
  const double v = std::pow(x, y);
  return detail::binary(Op::pow, base, exponent, v, y * std::pow(x, y - 1.0),
                        v * std::log(x));
}

// Left fold starting from 0.0, matching `sum(std::span<const double>)`.
inline Var sum(std::span<const Var> xs) {
  double acc = 0.0;
  Tape* t = nullptr;
  for (const auto& x : xs) {
    acc += x.value();
    if (t == nullptr && !x.is_constant()) t = const_cast<Tape*>(x.tape());
  }
  if (t == nullptr) return Var(acc);
  const auto first = t->open();
  for (const auto& x : xs) t->edge(Op::sum, x, 1.0);
  return t->close(Op::sum, acc, first);
}

// bias + sum_i w_i * x_i, accumulated left to right.
inline Var dot(std::span<const Var> w, std::span<const double> x,
               const Var& bias) {
  if (w.size() != x.size()) throw ShapeError("dot: length mismatch");
  double acc = bias.value();
  Tape* t = bias.is_constant() ? nullptr : const_cast<Tape*>(bias.tape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i].value() * x[i];
    if (t == nullptr && !w[i].is_constant()) t = const_cast<Tape*>(w[i].tape());
  }
  if (t == nullptr) return Var(acc);
  const auto first = t->open();
  t->edge(Op::dot, bias, 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) t->edge(Op::dot, w[i], x[i]);
  return t->close(Op::dot, acc, first);
}

inline Var dot(std::span<const Var> w, std::span<const Var> x,
               const Var& bias) {
  if (w.size() != x.size()) throw ShapeError("dot: length mismatch");
  double acc = bias.value();
  Tape* t = bias.is_constant() ? nullptr : const_cast<Tape*>(bias.tape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i].value() * x[i].value();
    if (t == nullptr) {
      if (!w[i].is_constant()) t = const_cast<Tape*>(w[i].tape());
      else if (!x[i].is_constant()) t = const_cast<Tape*>(x[i].tape());
    }
  }
  if (t == nullptr) return Var(acc);
  const auto first = t->open();
  t->edge(Op::dot, bias, 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    t->edge(Op::dot, w[i], x[i].value());
    t->edge(Op::dot, x[i], w[i].value());
  }
  return t->close(Op::dot, acc, first);
}

// Negative values become the constant 0 (gradient cut); others pass through.
inline Var clip_nonnegative(const Var& a) {
  return a.value() < 0.0 ? Var(0.0) : a;
}

}  // namespace ad

// Plain-double counterparts so templated code can call the same names.
inline double sum(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc;
}

inline double dot(std::span<const double> w, std::span<const double> x,
                  double bias) {
  if (w.size() != x.size()) throw ShapeError("dot: length mismatch");
  double acc = bias;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
  return acc;
}

inline double clip_nonnegative(double x) { return x < 0.0 ? 0.0 : x; }

using ad::value_of;

}  // namespace epical
