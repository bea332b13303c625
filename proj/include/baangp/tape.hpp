#pragma once

// Reverse-mode differentiation over a flat scalar graph.
//
// Nodes are appended in evaluation order, so parents always precede children
// and a single reverse sweep produces every adjoint. Each node stores its
// incoming edges as (parent index, local partial) pairs in a shared edge pool.
// Fused vector ops (matvec) emit one node per output with matrix-level
// partials instead of one node per multiply-add.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "baangp/error.hpp"

namespace baangp {

template <class Real>
class BasicTape {
public:
  using Index = std::size_t;

  std::size_t size() const { return values_.size(); }
  Real value(Index i) const { return values_.at(i); }

  Index variable(Real v) { return push(v, {}, {}); }

  // A node whose partials w.r.t. its parents are supplied by the caller.
  Index custom(Real v, std::span<const Index> parents, std::span<const Real> partials) {
    if (parents.size() != partials.size()) {
      throw InvalidArgument("tape: parents/partials length mismatch");
    }
    for (Index p : parents) check(p);
    return push(v, parents, partials);
  }

  Index add(Index a, Index b) { return binary(a, b, values_[a] + values_[b], Real(1), Real(1)); }
  Index sub(Index a, Index b) { return binary(a, b, values_[a] - values_[b], Real(1), Real(-1)); }
  Index mul(Index a, Index b) {
    return binary(a, b, values_[a] * values_[b], values_[b], values_[a]);
  }
  Index div(Index a, Index b) {
    const Real inv = Real(1) / values_[b];
    return binary(a, b, values_[a] * inv, inv, -values_[a] * inv * inv);
  }
  Index scale(Index a, Real c) { return unary(a, values_[a] * c, c); }
  Index add_const(Index a, Real c) { return unary(a, values_[a] + c, Real(1)); }
  Index neg(Index a) { return unary(a, -values_[a], Real(-1)); }
  Index exp(Index a) {
    const Real e = std::exp(values_[a]);
    return unary(a, e, e);
  }
  Index log(Index a) { return unary(a, std::log(values_[a]), Real(1) / values_[a]); }
  Index sin(Index a) { return unary(a, std::sin(values_[a]), std::cos(values_[a])); }
  Index cos(Index a) { return unary(a, std::cos(values_[a]), -std::sin(values_[a])); }
  Index sqrt(Index a) {
    const Real s = std::sqrt(values_[a]);
    return unary(a, s, Real(0.5) / s);
  }
  Index sigmoid(Index a) {
    const Real s = Real(1) / (Real(1) + std::exp(-values_[a]));
    return unary(a, s, s * (Real(1) - s));
  }
  Index relu(Index a) {
    const Real x = values_[a];
    return unary(a, x > Real(0) ? x : Real(0), x > Real(0) ? Real(1) : Real(0));
  }
  Index square(Index a) { return unary(a, values_[a] * values_[a], Real(2) * values_[a]); }

  Index sum(std::span<const Index> xs) {
    Real acc = 0;
    for (Index x : xs) acc += values_.at(x);
    std::vector<Real> ones(xs.size(), Real(1));
    return custom(acc, xs, ones);
  }

  // y = M x (+ bias). `matrix` holds rows*cols node indices, row-major.
  std::vector<Index> matvec(std::span<const Index> matrix, std::span<const Index> x,
                            std::size_t rows, std::size_t cols,
                            std::span<const Index> bias = {}) {
    if (matrix.size() != rows * cols || x.size() != cols ||
        (!bias.empty() && bias.size() != rows)) {
      throw InvalidArgument("tape: matvec shape mismatch");
    }
    std::vector<Index> out(rows);
    std::vector<Index> parents;
    std::vector<Real> partials;
    for (std::size_t r = 0; r < rows; ++r) {
      parents.clear();
      partials.clear();
      Real acc = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        const Index w = matrix[r * cols + c];
        acc += values_.at(w) * values_.at(x[c]);
        parents.push_back(w);
        partials.push_back(values_[x[c]]);
        parents.push_back(x[c]);
        partials.push_back(values_[w]);
      }
      if (!bias.empty()) {
        acc += values_.at(bias[r]);
        parents.push_back(bias[r]);
        partials.push_back(Real(1));
      }
      out[r] = push(acc, parents, partials);
    }
    return out;
  }

  // Adjoints of `root` w.r.t. every node. Unreachable nodes get 0.
  std::vector<Real> backward(Index root) const {
    if (root >= values_.size()) {
      throw InvalidArgument("tape: root index " + std::to_string(root) + " out of range");
    }
    std::vector<Real> grad(values_.size(), Real(0));
    grad[root] = Real(1);
    for (Index i = root + 1; i-- > 0;) {
      const Real g = grad[i];
      if (g == Real(0)) continue;
      for (std::size_t e = edge_begin_[i]; e < edge_begin_[i + 1]; ++e) {
        grad[edge_parent_[e]] += g * edge_partial_[e];
      }
    }
    return grad;
  }

  void clear() {
    values_.clear();
    edge_begin_.assign(1, 0);
    edge_parent_.clear();
    edge_partial_.clear();
  }

private:
  void check(Index i) const {
    if (i >= values_.size()) throw InvalidArgument("tape: node index out of range");
  }

  Index push(Real v, std::span<const Index> parents, std::span<const Real> partials) {
    values_.push_back(v);
    edge_parent_.insert(edge_parent_.end(), parents.begin(), parents.end());
    edge_partial_.insert(edge_partial_.end(), partials.begin(), partials.end());
    edge_begin_.push_back(edge_parent_.size());
    return values_.size() - 1;
  }

  Index unary(Index a, Real v, Real da) {
    check(a);
    const Index p[1] = {a};
    const Real d[1] = {da};
    return push(v, p, d);
  }

  Index binary(Index a, Index b, Real v, Real da, Real db) {
    check(a);
    check(b);
    const Index p[2] = {a, b};
    const Real d[2] = {da, db};
    return push(v, p, d);
  }

  std::vector<Real> values_;
  std::vector<std::size_t> edge_begin_{0};
  std::vector<Index> edge_parent_;
  std::vector<Real> edge_partial_;
};

using Tape = BasicTape<double>;
using TapeF = BasicTape<float>;

// Handle with operator overloads so graphs can be written as ordinary expressions.
template <class Real>
struct BasicVar {
  BasicTape<Real>* tape = nullptr;
  typename BasicTape<Real>::Index index = 0;

  Real value() const { return tape->value(index); }
};

template <class Real>
BasicVar<Real> make_var(BasicTape<Real>& t, Real v) { return {&t, t.variable(v)}; }

template <class Real>
BasicVar<Real> operator+(BasicVar<Real> a, BasicVar<Real> b) { return {a.tape, a.tape->add(a.index, b.index)}; }
template <class Real>
BasicVar<Real> operator-(BasicVar<Real> a, BasicVar<Real> b) { return {a.tape, a.tape->sub(a.index, b.index)}; }
template <class Real>
BasicVar<Real> operator*(BasicVar<Real> a, BasicVar<Real> b) { return {a.tape, a.tape->mul(a.index, b.index)}; }
template <class Real>
BasicVar<Real> operator/(BasicVar<Real> a, BasicVar<Real> b) { return {a.tape, a.tape->div(a.index, b.index)}; }
template <class Real>
BasicVar<Real> operator*(BasicVar<Real> a, Real c) { return {a.tape, a.tape->scale(a.index, c)}; }
template <class Real>
BasicVar<Real> operator*(Real c, BasicVar<Real> a) { return a * c; }
template <class Real>
BasicVar<Real> operator+(BasicVar<Real> a, Real c) { return {a.tape, a.tape->add_const(a.index, c)}; }
template <class Real>
BasicVar<Real> operator+(Real c, BasicVar<Real> a) { return a + c; }
template <class Real>
BasicVar<Real> operator-(Real c, BasicVar<Real> a) { return {a.tape, a.tape->add_const(a.tape->neg(a.index), c)}; }
template <class Real>
BasicVar<Real> operator-(BasicVar<Real> a) { return {a.tape, a.tape->neg(a.index)}; }

template <class Real>
BasicVar<Real> exp(BasicVar<Real> a) { return {a.tape, a.tape->exp(a.index)}; }
template <class Real>
BasicVar<Real> log(BasicVar<Real> a) { return {a.tape, a.tape->log(a.index)}; }
template <class Real>
BasicVar<Real> sin(BasicVar<Real> a) { return {a.tape, a.tape->sin(a.index)}; }
template <class Real>
BasicVar<Real> cos(BasicVar<Real> a) { return {a.tape, a.tape->cos(a.index)}; }
template <class Real>
BasicVar<Real> sqrt(BasicVar<Real> a) { return {a.tape, a.tape->sqrt(a.index)}; }
template <class Real>
BasicVar<Real> sigmoid(BasicVar<Real> a) { return {a.tape, a.tape->sigmoid(a.index)}; }
template <class Real>
BasicVar<Real> relu(BasicVar<Real> a) { return {a.tape, a.tape->relu(a.index)}; }

using Var = BasicVar<double>;

} // namespace baangp
