#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation in creation order; backward() walks the
// record in reverse, so the topological order is implicit. Values are
// 64-bit throughout, which is what the finite-difference checks rely on.

#include <deque>
#include <functional>
#include <vector>

#include "causaldiffrec/types.hpp"

namespace causaldiffrec::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Empty matrix until backward() has reached this node.
  const Matrix& grad() const;
  double scalar() const { return value()(0, 0); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  // Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(const Var& output);

  // Used by the operations below.
  Var record(Matrix value, const std::vector<Var>& parents, Backprop backprop);
  const Matrix& value(int id) const { return nodes_[id].value; }
  Matrix& grad(int id);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backprop backprop;
  };
  std::deque<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
// Constant sparse left factor, e.g. a normalized adjacency.
Var spmm(const SparseMatrix& s, const Var& a);

// Elementwise arithmetic (shapes must agree).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
// a (n x c) plus a 1 x c row broadcast over all rows.
Var add_row(const Var& a, const Var& row);

// Elementwise functions.
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
// log(1 + exp(a)), stable for large |a|.
Var softplus(const Var& a);
// Gradient is zero where the value was clipped.
Var clamp(const Var& a, double lo, double hi);

// Reductions to 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
// Column means, n x c -> 1 x c.
Var mean_rows(const Var& a);

// Shape manipulation.
Var broadcast_rows(const Var& row, Index rows);
Var hcat(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, const std::vector<Index>& rows);
// n x c, n x c -> n x 1 of row dot products.
Var rowwise_dot(const Var& a, const Var& b);

// Elementwise mean of same-shaped matrices.
Var average_matrices(const std::vector<Var>& parts);

// Scalar helpers; every input is 1x1.
Var add_n(const std::vector<Var>& scalars);
Var average(const std::vector<Var>& scalars);
// Population variance (divide by K).
Var population_variance(const std::vector<Var>& scalars);

// sum over entries of 0.5 * (mean^2 + std^2 - 1 - ln std^2).
Var standard_normal_kl(const Var& mean, const Var& std);

}  // namespace causaldiffrec::ad
