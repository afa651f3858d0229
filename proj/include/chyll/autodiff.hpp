#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// float64 matrices. A Tape records one computation (typically one training
// step); backward() consumes it and accumulates gradients into the bound
// parameter Tensors. Call reset() before recording the next step.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace chyll::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Persistent value + gradient storage. Network weights live here.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : value(Matrix::Zero(rows, cols)) {}
  explicit Tensor(Matrix v) : value(std::move(v)) {}

  int rows() const { return static_cast<int>(value.rows()); }
  int cols() const { return static_cast<int>(value.cols()); }
  std::span<const double> data() const { return {value.data(), static_cast<std::size_t>(value.size())}; }
  std::span<double> data() { return {value.data(), static_cast<std::size_t>(value.size())}; }

  bool has_grad() const { return grad.size() == value.size() && grad.size() > 0; }
  void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }

  // Node index on the tape this tensor is currently bound to, if any.
  std::optional<int> tape_id() const { return tape_id_; }

  Matrix value;
  Matrix grad;

 private:
  friend class Tape;
  std::optional<int> tape_id_;
};

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  // Gradient of the last backward() with respect to this node (empty if the
  // node did not influence the loss).
  const Matrix& grad() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  double item() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct TapeAccess;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  Var constant(Matrix value);
  Var constant(double value);
  // Binds a trainable tensor. Binding the same tensor twice returns the same node.
  Var bind(Tensor& param);

  // Reverse sweep from a 1x1 loss; adds into Tensor::grad of every bound
  // tensor reached. Throws NumericError on a non-scalar loss or a consumed tape.
  void backward(const Var& loss);

  // Drops all nodes and unbinds tensors.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend class Var;
  friend struct TapeAccess;

  enum class Op : std::uint8_t {
    leaf,
    linear,
    matmul,
    matmul_nt,
    col_broadcast,
    add,
    sub,
    mul,
    axpy,
    scale,
    add_const,
    sub_scalar_var,
    sub_row,
    tanh,
    relu,
    exp,
    one_minus_square,
    square,
    sum,
    mean,
    row_sum,
    col_mean,
    slice_rows,
    gather_rows,
    concat_cols,
    squared_diff_sum,
    mse,
  };

  struct Node {
    Op op = Op::leaf;
    int a = -1;
    int b = -1;
    int c = -1;
    double scalar = 0.0;
    int offset = 0;
    std::vector<int> index;
    Matrix value;
    Matrix grad;
    Tensor* param = nullptr;
  };

  int push(Node&& node);
  void accumulate(int id, const Matrix& g);
  void propagate(const Node& node);

  std::vector<Node> nodes_;
  std::unordered_map<Tensor*, int> bound_;
  bool consumed_ = false;
};

// ---- ops ---------------------------------------------------------------
// All ops check shapes and finiteness of their result and throw NumericError.

// x * W^T + 1 b^T, with W (out x in) and b (1 x out).
Var linear(const Var& x, const Var& weight, const Var& bias);
Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
// rows x out matrix whose every row is column j of W (out x in).
Var col_broadcast(const Var& weight, int j, int rows);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// a + s*b
Var axpy(const Var& a, double s, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double s);
// a - s with s a 1x1 node broadcast to every element.
Var sub_scalar_var(const Var& a, const Var& s);
// a - row, row is 1 x cols broadcast over rows.
Var sub_row(const Var& a, const Var& row);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
// 1 - a^2 elementwise (tanh derivative expressed through its output).
Var one_minus_square(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
// Sum across columns: r x c -> r x 1.
Var row_sum(const Var& a);
// Mean across rows: r x c -> 1 x c.
Var col_mean(const Var& a);
Var slice_rows(const Var& a, int start, int count);
Var gather_rows(const Var& a, std::vector<int> rows);
Var concat_cols(const Var& a, const Var& b);
// sum((a-b)^2) -> 1x1
Var squared_diff_sum(const Var& a, const Var& b);
// mean((a-b)^2) over all elements -> 1x1
Var mse(const Var& a, const Var& b);

}  // namespace chyll::ad
