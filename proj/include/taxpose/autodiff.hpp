#pragma once

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <vector>

namespace taxpose::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a matrix-valued node on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape over dense matrices. Nodes are recorded in evaluation
/// order; backward() replays them in reverse. Nodes whose inputs are all
/// constants keep no backward closure.
class Tape {
 public:
  /// Receives the node's output gradient and its forward value.
  using Backward = std::function<void(const Matrix& grad_out, const Matrix& value)>;

  Var constant(Matrix value);
  Var leaf(Matrix value);
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(const Var& out);

  /// Gradient accumulated at v; zeros of v's shape if nothing reached it.
  Matrix grad(const Var& v) const;

  void accumulate(const Var& v, const Matrix& g);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

/// When on, every value entering any tape must be finite or NonFiniteValue
/// is thrown. Process-wide; off by default.
void set_strict_finite(bool on);
bool strict_finite();

// Dense building blocks. Shapes follow Eigen conventions; rows are points.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// x + 1 * row, row is 1 x cols(x)
Var add_row(const Var& x, const Var& row);
Var tanh(const Var& a);
/// Softmax across each row (max-subtracted).
Var row_softmax(const Var& a);
/// Softmax across the entries of an N x 1 column.
Var column_softmax(const Var& a);
Var concat_cols(const Var& a, const Var& b);
/// 1 x cols mean over rows.
Var mean_rows(const Var& a);
/// Repeats a 1 x c row n times.
Var repeat_rows(const Var& row, Eigen::Index n);
Var transpose(const Var& a);
Var sum(const Var& a);
/// (1/N) sum_i |a_i - b_i|^2 over rows.
Var mean_squared_row_distance(const Var& a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace taxpose::ad
