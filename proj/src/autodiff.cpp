#include "chyll/autodiff.hpp"

#include "chyll/error.hpp"

#include <string>

namespace chyll::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw NumericError(std::string(op) + ": " + what);
}

void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

struct TapeAccess {
  using Op = Tape::Op;
  using Node = Tape::Node;

  static Tape& tape_of(const Var& a, const Var& b) {
    require(a.valid() && b.valid() && a.tape() == b.tape(), "tape", "operands recorded on different tapes");
    return *a.tape();
  }
  static Tape& tape_of(const Var& a) {
    require(a.valid(), "tape", "unbound variable");
    return *a.tape();
  }
  static const Matrix& val(const Tape& t, int id) { return t.nodes_[static_cast<std::size_t>(id)].value; }

  static Var emit(Tape& t, Op op, Matrix value, int a, int b = -1, int c = -1, double scalar = 0.0) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.scalar = scalar;
    n.value = std::move(value);
    return Var(&t, t.push(std::move(n)));
  }
  static Var emit(Tape& t, Node&& n) { return Var(&t, t.push(std::move(n))); }
};

using TA = TapeAccess;

Tape::~Tape() { reset(); }

int Tape::push(Node&& node) {
  if (!node.value.allFinite()) {
    throw NumericError("non-finite value produced on tape at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return Var(this, push(std::move(n)));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::bind(Tensor& param) {
  if (auto it = bound_.find(&param); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.value = param.value;
  n.param = &param;
  const int id = push(std::move(n));
  bound_.emplace(&param, id);
  param.tape_id_ = id;
  return Var(this, id);
}

void Tape::reset() {
  for (auto& [param, id] : bound_) param->tape_id_.reset();
  bound_.clear();
  nodes_.clear();
  consumed_ = false;
}

void Tape::accumulate(int id, const Matrix& g) {
  auto& dst = nodes_[static_cast<std::size_t>(id)].grad;
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw NumericError("backward: loss not recorded on this tape");
  if (consumed_) throw NumericError("backward: tape already consumed; reset() and re-record first");
  const auto& lv = nodes_[static_cast<std::size_t>(loss.id())].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw NumericError("backward: loss must be 1x1, got " + shape_str(lv));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(loss.id())].grad = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.op == Op::leaf) {
      if (n.param != nullptr) {
        if (!n.param->has_grad()) n.param->zero_grad();
        n.param->grad += n.grad;
      }
      continue;
    }
    propagate(n);
  }
  consumed_ = true;
}

void Tape::propagate(const Node& n) {
  const Matrix& g = n.grad;
  auto v = [this](int id) -> const Matrix& { return nodes_[static_cast<std::size_t>(id)].value; };
  switch (n.op) {
    case Op::leaf:
      break;
    case Op::linear: {
      const Matrix& x = v(n.a);
      const Matrix& w = v(n.b);
      accumulate(n.a, g * w);
      accumulate(n.b, g.transpose() * x);
      accumulate(n.c, g.colwise().sum());
      break;
    }
    case Op::matmul:
      accumulate(n.a, g * v(n.b).transpose());
      accumulate(n.b, v(n.a).transpose() * g);
      break;
    case Op::matmul_nt:
      // y = a b^T
      accumulate(n.a, g * v(n.b));
      accumulate(n.b, g.transpose() * v(n.a));
      break;
    case Op::col_broadcast: {
      const Matrix& w = v(n.a);
      Matrix gw = Matrix::Zero(w.rows(), w.cols());
      gw.col(n.offset) = g.colwise().sum().transpose();
      accumulate(n.a, gw);
      break;
    }
    case Op::add:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case Op::sub:
      accumulate(n.a, g);
      accumulate(n.b, -g);
      break;
    case Op::mul:
      accumulate(n.a, g.cwiseProduct(v(n.b)));
      accumulate(n.b, g.cwiseProduct(v(n.a)));
      break;
    case Op::axpy:
      accumulate(n.a, g);
      accumulate(n.b, n.scalar * g);
      break;
    case Op::scale:
      accumulate(n.a, n.scalar * g);
      break;
    case Op::add_const:
      accumulate(n.a, g);
      break;
    case Op::sub_scalar_var:
      accumulate(n.a, g);
      accumulate(n.b, Matrix::Constant(1, 1, -g.sum()));
      break;
    case Op::sub_row:
      accumulate(n.a, g);
      accumulate(n.b, -g.colwise().sum());
      break;
    case Op::tanh:
      accumulate(n.a, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
      break;
    case Op::relu:
      accumulate(n.a, (v(n.a).array() > 0.0).select(g, 0.0).matrix());
      break;
    case Op::exp:
      accumulate(n.a, g.cwiseProduct(n.value));
      break;
    case Op::one_minus_square:
      accumulate(n.a, (-2.0 * v(n.a).array() * g.array()).matrix());
      break;
    case Op::square:
      accumulate(n.a, (2.0 * v(n.a).array() * g.array()).matrix());
      break;
    case Op::sum: {
      const Matrix& a = v(n.a);
      accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
      break;
    }
    case Op::mean: {
      const Matrix& a = v(n.a);
      accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
      break;
    }
    case Op::row_sum: {
      const Matrix& a = v(n.a);
      accumulate(n.a, g.replicate(1, a.cols()));
      break;
    }
    case Op::col_mean: {
      const Matrix& a = v(n.a);
      accumulate(n.a, (g / static_cast<double>(a.rows())).replicate(a.rows(), 1));
      break;
    }
    case Op::slice_rows: {
      const Matrix& a = v(n.a);
      Matrix ga = Matrix::Zero(a.rows(), a.cols());
      ga.middleRows(n.offset, g.rows()) = g;
      accumulate(n.a, ga);
      break;
    }
    case Op::gather_rows: {
      const Matrix& a = v(n.a);
      Matrix ga = Matrix::Zero(a.rows(), a.cols());
      for (std::size_t r = 0; r < n.index.size(); ++r) ga.row(n.index[r]) += g.row(static_cast<Eigen::Index>(r));
      accumulate(n.a, ga);
      break;
    }
    case Op::concat_cols: {
      const auto ca = v(n.a).cols();
      accumulate(n.a, g.leftCols(ca));
      accumulate(n.b, g.rightCols(g.cols() - ca));
      break;
    }
    case Op::squared_diff_sum: {
      Matrix d = 2.0 * g(0, 0) * (v(n.a) - v(n.b));
      accumulate(n.b, -d);
      accumulate(n.a, d);
      break;
    }
    case Op::mse: {
      const double k = 2.0 * g(0, 0) / static_cast<double>(v(n.a).size());
      Matrix d = k * (v(n.a) - v(n.b));
      accumulate(n.b, -d);
      accumulate(n.a, d);
      break;
    }
  }
}

const Matrix& Var::value() const { return tape_->nodes_[static_cast<std::size_t>(id_)].value; }

const Matrix& Var::grad() const { return tape_->nodes_[static_cast<std::size_t>(id_)].grad; }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw NumericError("item: not a scalar " + shape_str(v));
  return v(0, 0);
}

// ---- ops ---------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& t = TA::tape_of(x, weight);
  TA::tape_of(x, bias);
  const Matrix& xv = x.value();
  const Matrix& w = weight.value();
  const Matrix& b = bias.value();
  require(xv.cols() == w.cols(), "linear", "input " + shape_str(xv) + " vs weight " + shape_str(w));
  require(b.rows() == 1 && b.cols() == w.rows(), "linear", "bias " + shape_str(b) + " vs weight " + shape_str(w));
  Matrix out = xv * w.transpose();
  out.rowwise() += b.row(0);
  return TA::emit(t, TA::Op::linear, std::move(out), x.id(), weight.id(), bias.id());
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  require(a.value().cols() == b.value().rows(), "matmul", shape_str(a.value()) + " * " + shape_str(b.value()));
  return TA::emit(t, TA::Op::matmul, a.value() * b.value(), a.id(), b.id());
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  require(a.value().cols() == b.value().cols(), "matmul_nt", shape_str(a.value()) + " * " + shape_str(b.value()) + "^T");
  return TA::emit(t, TA::Op::matmul_nt, a.value() * b.value().transpose(), a.id(), b.id());
}

Var col_broadcast(const Var& weight, int j, int rows) {
  Tape& t = TA::tape_of(weight);
  const Matrix& w = weight.value();
  require(j >= 0 && j < w.cols() && rows > 0, "col_broadcast", "column out of range");
  TA::Node n;
  n.op = TA::Op::col_broadcast;
  n.a = weight.id();
  n.offset = j;
  n.value = w.col(j).transpose().replicate(rows, 1);
  return TA::emit(t, std::move(n));
}

Var add(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  same_shape(a.value(), b.value(), "add");
  return TA::emit(t, TA::Op::add, a.value() + b.value(), a.id(), b.id());
}

Var sub(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  same_shape(a.value(), b.value(), "sub");
  return TA::emit(t, TA::Op::sub, a.value() - b.value(), a.id(), b.id());
}

Var mul(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  same_shape(a.value(), b.value(), "mul");
  return TA::emit(t, TA::Op::mul, a.value().cwiseProduct(b.value()), a.id(), b.id());
}

Var axpy(const Var& a, double s, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  same_shape(a.value(), b.value(), "axpy");
  return TA::emit(t, TA::Op::axpy, a.value() + s * b.value(), a.id(), b.id(), -1, s);
}

Var scale(const Var& a, double s) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::scale, s * a.value(), a.id(), -1, -1, s);
}

Var add_const(const Var& a, double s) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::add_const, (a.value().array() + s).matrix(), a.id(), -1, -1, s);
}

Var sub_scalar_var(const Var& a, const Var& s) {
  Tape& t = TA::tape_of(a, s);
  require(s.value().size() == 1, "sub_scalar_var", "scalar operand is " + shape_str(s.value()));
  return TA::emit(t, TA::Op::sub_scalar_var, (a.value().array() - s.value()(0, 0)).matrix(), a.id(), s.id());
}

Var sub_row(const Var& a, const Var& row) {
  Tape& t = TA::tape_of(a, row);
  require(row.value().rows() == 1 && row.value().cols() == a.value().cols(), "sub_row",
          shape_str(a.value()) + " - " + shape_str(row.value()));
  Matrix out = a.value();
  out.rowwise() -= row.value().row(0);
  return TA::emit(t, TA::Op::sub_row, std::move(out), a.id(), row.id());
}

Var tanh(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::tanh, a.value().array().tanh().matrix(), a.id());
}

Var relu(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::relu, a.value().cwiseMax(0.0), a.id());
}

Var exp(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::exp, a.value().array().exp().matrix(), a.id());
}

Var one_minus_square(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::one_minus_square, (1.0 - a.value().array().square()).matrix(), a.id());
}

Var square(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::square, a.value().array().square().matrix(), a.id());
}

Var sum(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::sum, Matrix::Constant(1, 1, a.value().sum()), a.id());
}

Var mean(const Var& a) {
  Tape& t = TA::tape_of(a);
  require(a.value().size() > 0, "mean", "empty operand");
  return TA::emit(t, TA::Op::mean, Matrix::Constant(1, 1, a.value().mean()), a.id());
}

Var row_sum(const Var& a) {
  Tape& t = TA::tape_of(a);
  return TA::emit(t, TA::Op::row_sum, a.value().rowwise().sum(), a.id());
}

Var col_mean(const Var& a) {
  Tape& t = TA::tape_of(a);
  require(a.value().rows() > 0, "col_mean", "empty operand");
  return TA::emit(t, TA::Op::col_mean, a.value().colwise().mean(), a.id());
}

Var slice_rows(const Var& a, int start, int count) {
  Tape& t = TA::tape_of(a);
  require(start >= 0 && count > 0 && start + count <= a.value().rows(), "slice_rows",
          "range [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " + shape_str(a.value()));
  TA::Node n;
  n.op = TA::Op::slice_rows;
  n.a = a.id();
  n.offset = start;
  n.value = a.value().middleRows(start, count);
  return TA::emit(t, std::move(n));
}

Var gather_rows(const Var& a, std::vector<int> rows) {
  Tape& t = TA::tape_of(a);
  const Matrix& av = a.value();
  require(!rows.empty(), "gather_rows", "empty index");
  Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < av.rows(), "gather_rows", "row index out of range");
    out.row(static_cast<Eigen::Index>(r)) = av.row(rows[r]);
  }
  TA::Node n;
  n.op = TA::Op::gather_rows;
  n.a = a.id();
  n.index = std::move(rows);
  n.value = std::move(out);
  return TA::emit(t, std::move(n));
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  require(a.value().rows() == b.value().rows(), "concat_cols", shape_str(a.value()) + " | " + shape_str(b.value()));
  Matrix out(a.value().rows(), a.value().cols() + b.value().cols());
  out << a.value(), b.value();
  return TA::emit(t, TA::Op::concat_cols, std::move(out), a.id(), b.id());
}

Var squared_diff_sum(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  same_shape(a.value(), b.value(), "squared_diff_sum");
  return TA::emit(t, TA::Op::squared_diff_sum, Matrix::Constant(1, 1, (a.value() - b.value()).squaredNorm()), a.id(),
                  b.id());
}

Var mse(const Var& a, const Var& b) {
  Tape& t = TA::tape_of(a, b);
  same_shape(a.value(), b.value(), "mse");
  require(a.value().size() > 0, "mse", "empty operands");
  const double v = (a.value() - b.value()).squaredNorm() / static_cast<double>(a.value().size());
  return TA::emit(t, TA::Op::mse, Matrix::Constant(1, 1, v), a.id(), b.id());
}

}  // namespace chyll::ad
