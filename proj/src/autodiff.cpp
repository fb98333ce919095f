#include "taxpose/autodiff.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

#include "taxpose/errors.hpp"

namespace taxpose::ad {

namespace {

std::atomic<bool> g_strict{false};

void check_finite(const Matrix& m) {
  if (g_strict.load(std::memory_order_relaxed) && !m.allFinite())
    throw NonFiniteValue("non-finite intermediate value (strict float mode)");
}

}  // namespace

void set_strict_finite(bool on) { g_strict.store(on); }
bool strict_finite() { return g_strict.load(); }

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  check_finite(value);
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Matrix value) {
  check_finite(value);
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  check_finite(value);
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape() != this) throw std::logic_error("autodiff: mixing vars from different tapes");
    needs = needs || v.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) node.grad = g;
  else node.grad += g;
}

void Tape::backward(const Var& out) {
  if (out.rows() != 1 || out.cols() != 1) throw std::logic_error("autodiff: backward needs a scalar output");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(out.id())].grad = Matrix::Ones(1, 1);
  for (int id = out.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.backward && node.grad.size() != 0) node.backward(node.grad, node.value);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

namespace {

void check(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b, &t](const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b, &t](const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g * b.value());
    if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b, &t](const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b, &t](const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s, &t](const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}

Var add_row(const Var& x, const Var& row) {
  check(row.rows() == 1 && row.cols() == x.cols(), "add_row");
  Tape& t = *x.tape();
  Matrix out = x.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {x, row}, [x, row, &t](const Matrix& g, const Matrix&) {
    t.accumulate(x, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var tanh(const Var& a) {
  Tape& t = *a.tape();
  return t.record(a.value().array().tanh().matrix(), {a}, [a, &t](const Matrix& g, const Matrix& y) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

namespace {

Matrix softmax_rows(const Matrix& x) {
  Matrix y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

}  // namespace

Var row_softmax(const Var& a) {
  Tape& t = *a.tape();
  return t.record(softmax_rows(a.value()), {a}, [a, &t](const Matrix& g, const Matrix& y) {
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    t.accumulate(a, (y.array() * (g.colwise() - dot).array()).matrix());
  });
}

Var column_softmax(const Var& a) {
  check(a.cols() == 1, "column_softmax");
  Tape& t = *a.tape();
  Matrix y = softmax_rows(a.value().transpose()).transpose();
  return t.record(std::move(y), {a}, [a, &t](const Matrix& g, const Matrix& y) {
    const double dot = (g.array() * y.array()).sum();
    t.accumulate(a, (y.array() * (g.array() - dot)).matrix());
  });
}

Var concat_cols(const Var& a, const Var& b) {
  check(a.rows() == b.rows(), "concat_cols");
  Tape& t = *a.tape();
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return t.record(std::move(out), {a, b}, [a, b, ca, cb, &t](const Matrix& g, const Matrix&) {
    if (a.requires_grad()) t.accumulate(a, g.leftCols(ca));
    if (b.requires_grad()) t.accumulate(b, g.rightCols(cb));
  });
}

Var mean_rows(const Var& a) {
  Tape& t = *a.tape();
  const double n = static_cast<double>(a.rows());
  return t.record(a.value().colwise().mean(), {a}, [a, n, &t](const Matrix& g, const Matrix&) {
    t.accumulate(a, g.replicate(a.rows(), 1) / n);
  });
}

Var repeat_rows(const Var& row, Eigen::Index n) {
  check(row.rows() == 1, "repeat_rows");
  Tape& t = *row.tape();
  return t.record(row.value().replicate(n, 1), {row}, [row, &t](const Matrix& g, const Matrix&) {
    t.accumulate(row, g.colwise().sum());
  });
}

Var transpose(const Var& a) {
  Tape& t = *a.tape();
  return t.record(a.value().transpose(), {a}, [a, &t](const Matrix& g, const Matrix&) {
    t.accumulate(a, g.transpose());
  });
}

Var sum(const Var& a) {
  Tape& t = *a.tape();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a, &t](const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean_squared_row_distance(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mean_squared_row_distance");
  Tape& t = *a.tape();
  const double n = static_cast<double>(a.rows());
  const Matrix diff = a.value() - b.value();
  return t.record(Matrix::Constant(1, 1, diff.squaredNorm() / n), {a, b},
                  [a, b, n, &t](const Matrix& g, const Matrix&) {
                    const Matrix d = (a.value() - b.value()) * (2.0 * g(0, 0) / n);
                    t.accumulate(a, d);
                    t.accumulate(b, -d);
                  });
}

}  // namespace taxpose::ad
