#include "causaldiffrec/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace causaldiffrec::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backprop backprop) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw Error("autodiff: operands recorded on different tapes");
    needs = needs || nodes_[p.id_].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backprop) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& output) {
  if (output.rows() != 1 || output.cols() != 1)
    throw Error("autodiff: backward() needs a scalar output");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  grad(output.id_)(0, 0) = 1.0;
  for (int id = output.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backprop && n.grad.size() != 0) n.backprop(*this, id);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string("autodiff: shape mismatch in ") + op);
}

// Unary elementwise op given the value and a derivative expressed from
// (input, output).
template <typename F, typename D>
Var unary(const Var& a, F f, D d) {
  Matrix out = a.value().unaryExpr(f);
  const int pa = a.id();
  return a.tape().record(std::move(out), {a}, [pa, d](Tape& t, int self) {
    if (!t.needs_grad(pa)) return;
    const Matrix& x = t.value(pa);
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(pa);
    for (Index i = 0; i < x.size(); ++i) ga.data()[i] += g.data()[i] * d(x.data()[i], y.data()[i]);
  });
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error("autodiff: matmul inner dimension mismatch");
  Matrix out = a.value() * b.value();
  const int pa = a.id(), pb = b.id();
  return a.tape().record(std::move(out), {a, b}, [pa, pb](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(pa)) t.grad(pa).noalias() += g * t.value(pb).transpose();
    if (t.needs_grad(pb)) t.grad(pb).noalias() += t.value(pa).transpose() * g;
  });
}

Var spmm(const SparseMatrix& s, const Var& a) {
  if (s.cols() != a.rows()) throw Error("autodiff: spmm dimension mismatch");
  Matrix out = s * a.value();
  const int pa = a.id();
  const SparseMatrix* sp = &s;
  return a.tape().record(std::move(out), {a}, [pa, sp](Tape& t, int self) {
    if (t.needs_grad(pa)) t.grad(pa).noalias() += sp->transpose() * t.grad(self);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  const int pa = a.id(), pb = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [pa, pb](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(pa)) t.grad(pa) += g;
    if (t.needs_grad(pb)) t.grad(pb) += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  const int pa = a.id(), pb = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [pa, pb](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(pa)) t.grad(pa) += g;
    if (t.needs_grad(pb)) t.grad(pb) -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  const int pa = a.id(), pb = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [pa, pb](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(pa)) t.grad(pa) += g.cwiseProduct(t.value(pb));
    if (t.needs_grad(pb)) t.grad(pb) += g.cwiseProduct(t.value(pa));
  });
}

Var scale(const Var& a, double factor) {
  const int pa = a.id();
  return a.tape().record(a.value() * factor, {a}, [pa, factor](Tape& t, int self) {
    if (t.needs_grad(pa)) t.grad(pa) += factor * t.grad(self);
  });
}

Var add_scalar(const Var& a, double offset) {
  const int pa = a.id();
  return a.tape().record(a.value().array() + offset, {a}, [pa](Tape& t, int self) {
    if (t.needs_grad(pa)) t.grad(pa) += t.grad(self);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("autodiff: add_row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int pa = a.id(), pr = row.id();
  return a.tape().record(std::move(out), {a, row}, [pa, pr](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(pa)) t.grad(pa) += g;
    if (t.needs_grad(pr)) t.grad(pr) += g.colwise().sum();
  });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        const double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int pa = a.id();
  return a.tape().record(std::move(out), {a}, [pa](Tape& t, int self) {
    if (t.needs_grad(pa)) t.grad(pa).array() += t.grad(self)(0, 0);
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw Error("autodiff: mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw Error("autodiff: mean_rows of empty matrix");
  Matrix out = a.value().colwise().mean();
  const int pa = a.id();
  const double inv = 1.0 / static_cast<double>(a.rows());
  return a.tape().record(std::move(out), {a}, [pa, inv](Tape& t, int self) {
    if (t.needs_grad(pa)) t.grad(pa).rowwise() += inv * t.grad(self).row(0);
  });
}

Var broadcast_rows(const Var& row, Index rows) {
  if (row.rows() != 1) throw Error("autodiff: broadcast_rows needs a row vector");
  Matrix out = row.value().replicate(rows, 1);
  const int pr = row.id();
  return row.tape().record(std::move(out), {row}, [pr](Tape& t, int self) {
    if (t.needs_grad(pr)) t.grad(pr) += t.grad(self).colwise().sum();
  });
}

Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("autodiff: hcat of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error("autodiff: hcat row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [ids, offsets](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.needs_grad(ids[k])) continue;
      Matrix& gp = t.grad(ids[k]);
      gp += g.middleCols(offsets[k], gp.cols());
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error("autodiff: slice out of range");
  const int pa = a.id();
  return a.tape().record(a.value().middleCols(start, count), {a}, [pa, start, count](Tape& t, int self) {
    if (t.needs_grad(pa)) t.grad(pa).middleCols(start, count) += t.grad(self);
  });
}

Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a.rows()) throw Error("autodiff: gather index out of range");
    out.row(static_cast<Index>(r)) = a.value().row(rows[r]);
  }
  const int pa = a.id();
  return a.tape().record(std::move(out), {a}, [pa, rows](Tape& t, int self) {
    if (!t.needs_grad(pa)) return;
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(pa);
    for (std::size_t r = 0; r < rows.size(); ++r) ga.row(rows[r]) += g.row(static_cast<Index>(r));
  });
}

Var rowwise_dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "rowwise_dot");
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  const int pa = a.id(), pb = b.id();
  return a.tape().record(std::move(out), {a, b}, [pa, pb](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(pa)) t.grad(pa) += (t.value(pb).array().colwise() * g.col(0).array()).matrix();
    if (t.needs_grad(pb)) t.grad(pb) += (t.value(pa).array().colwise() * g.col(0).array()).matrix();
  });
}

Var average_matrices(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("autodiff: average of nothing");
  Matrix out = parts.front().value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    require_same_shape(parts.front(), parts[k], "average_matrices");
    out += parts[k].value();
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  out *= inv;
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts.front().tape().record(std::move(out), parts, [ids, inv](Tape& t, int self) {
    for (int id : ids)
      if (t.needs_grad(id)) t.grad(id) += inv * t.grad(self);
  });
}

Var add_n(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw Error("autodiff: add_n of nothing");
  Matrix out = Matrix::Zero(1, 1);
  std::vector<int> ids;
  for (const Var& s : scalars) {
    if (s.value().size() != 1) throw Error("autodiff: add_n expects scalars");
    out(0, 0) += s.scalar();
    ids.push_back(s.id());
  }
  return scalars.front().tape().record(std::move(out), scalars, [ids](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    for (int id : ids)
      if (t.needs_grad(id)) t.grad(id)(0, 0) += g;
  });
}

Var average(const std::vector<Var>& scalars) {
  return scale(add_n(scalars), 1.0 / static_cast<double>(scalars.size()));
}

Var population_variance(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw Error("autodiff: variance of nothing");
  const double k = static_cast<double>(scalars.size());
  double m = 0.0;
  for (const Var& s : scalars) m += s.scalar();
  m /= k;
  double v = 0.0;
  for (const Var& s : scalars) v += (s.scalar() - m) * (s.scalar() - m);
  Matrix out(1, 1);
  out(0, 0) = v / k;
  std::vector<int> ids;
  for (const Var& s : scalars) ids.push_back(s.id());
  return scalars.front().tape().record(std::move(out), scalars, [ids, m, k](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    for (int id : ids)
      if (t.needs_grad(id)) t.grad(id)(0, 0) += g * 2.0 * (t.value(id)(0, 0) - m) / k;
  });
}

Var standard_normal_kl(const Var& mean, const Var& std) {
  require_same_shape(mean, std, "standard_normal_kl");
  // 0.5 * (mu^2 + s^2 - 1) - ln s
  Var quad = add(square(mean), square(std));
  Var per_entry = sub(scale(add_scalar(quad, -1.0), 0.5), log(std));
  return sum(per_entry);
}

}  // namespace causaldiffrec::ad
