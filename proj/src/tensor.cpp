#include "exagree/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace exagree {

namespace {

constexpr double kRescaleEps = 1e-7;  // below this |dx| the analytic slope is used
constexpr double kExpClamp = 709.0;
constexpr double kLogFloor = 1e-300;

Tape* common_tape(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw ContractError("operand not attached to a tape");
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

void check_same_or_row_broadcast(const Matrix& a, const Matrix& b, const char* op) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool bcast = b.rows() == 1 && b.cols() == a.cols();
  if (!same && !bcast) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " do not conform (equal shapes or [1 x cols] broadcast)");
  }
}

Matrix broadcast_rows(const Matrix& b, Eigen::Index rows) {
  if (b.rows() == rows) return b;
  return b.replicate(rows, 1);
}

Matrix stable_softmax(const Matrix& x, int axis) {
  Matrix out(x.rows(), x.cols());
  if (axis == 1) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double m = x.row(r).maxCoeff();
      Eigen::ArrayXd e = (x.row(r).array() - m).exp();
      out.row(r) = (e / e.sum()).matrix();
    }
  } else {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double m = x.col(c).maxCoeff();
      Eigen::ArrayXd e = (x.col(c).array() - m).exp();
      out.col(c) = (e / e.sum()).matrix();
    }
  }
  return out;
}

Matrix softmax_grad(const Matrix& g, const Matrix& s, int axis) {
  Matrix out(g.rows(), g.cols());
  if (axis == 1) {
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(s.row(r));
      out.row(r) = ((g.row(r).array() - dot) * s.row(r).array()).matrix();
    }
  } else {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const double dot = g.col(c).dot(s.col(c));
      out.col(c) = ((g.col(c).array() - dot) * s.col(c).array()).matrix();
    }
  }
  return out;
}

}  // namespace

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << " x " << m.cols() << "]";
  return os.str();
}

const Matrix& Tensor::value() const {
  if (!defined()) throw StateError("tensor handle is empty");
  return tape_->node(id_).value;
}

const Matrix& Tensor::reference() const {
  if (!defined()) throw StateError("tensor handle is empty");
  const Tape::Node& n = tape_->node(id_);
  return n.ref.size() > 0 ? n.ref : n.value;
}

const Matrix& Tensor::grad() const {
  if (!defined()) throw StateError("tensor handle is empty");
  if (!tape_->backward_done()) throw StateError("grad() before backward()");
  const Tape::Node& n = tape_->node(id_);
  if (!n.requires_grad) throw StateError(std::string("grad() on a tensor without requires_grad (op ") + n.op + ")");
  return n.grad;
}

bool Tensor::requires_grad() const {
  if (!defined()) return false;
  return tape_->node(id_).requires_grad;
}

Tensor Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  if (dual_) n.ref = n.value;
  n.requires_grad = requires_grad && grad_enabled_;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::dual_leaf(Matrix value, Matrix reference, bool requires_grad) {
  if (reference.rows() != value.rows() || reference.cols() != value.cols()) {
    throw ShapeError("dual_leaf: reference shape " + shape_str(reference) +
                     " differs from value shape " + shape_str(value));
  }
  if (!nodes_.empty() && !dual_) {
    throw StateError("dual_leaf on a tape that already has non-dual nodes");
  }
  dual_ = true;
  Node n;
  n.value = std::move(value);
  n.ref = std::move(reference);
  n.requires_grad = requires_grad && grad_enabled_;
  n.op = "dual_leaf";
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::emplace(Matrix value, Matrix ref, std::vector<int> inputs, const char* op) {
  Node n;
  n.value = std::move(value);
  n.ref = std::move(ref);
  n.inputs = std::move(inputs);
  n.op = op;
  if (grad_enabled_) {
    for (const int i : n.inputs) {
      if (nodes_[static_cast<std::size_t>(i)].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::run_backward(const Tensor& loss, bool rescale_mode) {
  if (!loss.defined() || loss.tape() != this) throw ContractError("loss not recorded on this tape");
  if (!grad_enabled_) throw StateError("backward on a tape with gradients disabled");
  if (backward_done_) throw StateError("second backward on the same tape");
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.value()));
  }
  if (rescale_mode && !dual_) throw StateError("backward_rescale requires a dual-forward tape");
  backward_done_ = true;

  const int loss_id = loss.id();
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  if (!nodes_[static_cast<std::size_t>(loss_id)].requires_grad) {
    return;  // loss does not depend on any differentiable leaf
  }
  nodes_[static_cast<std::size_t>(loss_id)].grad(0, 0) = 1.0;

  for (int i = loss_id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.inputs.empty()) continue;
    if (rescale_mode && n.rescale) {
      n.rescale(*this, n);
    } else if (n.backward) {
      n.backward(*this, n);
    }
  }
}

void Tape::backward(const Tensor& loss) { run_backward(loss, false); }
void Tape::backward_rescale(const Tensor& loss) { run_backward(loss, true); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("loss not attached to a tape");
  loss.tape()->backward(loss);
}

// ---- linear ops ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions of " + shape_str(a.value()) + " and " +
                     shape_str(b.value()) + " differ");
  }
  Matrix v = a.value() * b.value();
  Matrix r;
  if (t->dual()) r = a.reference() * b.reference();
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id(), b.id()}, "matmul");
  if (t->grad_enabled()) {
    const int ia = a.id(), ib = b.id();
    t->node(out.id()).backward = [ia, ib](Tape& tp, const Tape::Node& n) {
      tp.accumulate(ia, n.grad * tp.node(ib).value.transpose());
      tp.accumulate(ib, tp.node(ia).value.transpose() * n.grad);
    };
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Matrix v = a.value().transpose();
  Matrix r;
  if (t->dual()) r = a.reference().transpose();
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, "transpose");
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia](Tape& tp, const Tape::Node& n) {
      tp.accumulate(ia, n.grad.transpose());
    };
  }
  return out;
}

namespace {

enum class BinOp { Add, Sub, Mul, Div };

Matrix bin_eval(BinOp op, const Matrix& a, const Matrix& b) {
  const Matrix bb = broadcast_rows(b, a.rows());
  switch (op) {
    case BinOp::Add: return a + bb;
    case BinOp::Sub: return a - bb;
    case BinOp::Mul: return (a.array() * bb.array()).matrix();
    case BinOp::Div: return (a.array() / bb.array()).matrix();
  }
  return {};
}

Tensor binary_op(BinOp op, const char* name, const Tensor& a, const Tensor& b) {
  Tape* t = common_tape(a, b);
  check_same_or_row_broadcast(a.value(), b.value(), name);
  Matrix v = bin_eval(op, a.value(), b.value());
  Matrix r;
  if (t->dual()) r = bin_eval(op, a.reference(), b.reference());
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id(), b.id()}, name);
  if (t->grad_enabled()) {
    const int ia = a.id(), ib = b.id();
    switch (op) {
      case BinOp::Add:
        t->node(out.id()).backward = [ia, ib](Tape& tp, const Tape::Node& n) {
          tp.accumulate(ia, n.grad);
          tp.accumulate(ib, n.grad);
        };
        break;
      case BinOp::Sub:
        t->node(out.id()).backward = [ia, ib](Tape& tp, const Tape::Node& n) {
          tp.accumulate(ia, n.grad);
          tp.accumulate(ib, -n.grad);
        };
        break;
      case BinOp::Mul:
        t->node(out.id()).backward = [ia, ib](Tape& tp, const Tape::Node& n) {
          const Matrix bb = broadcast_rows(tp.node(ib).value, n.grad.rows());
          tp.accumulate(ia, (n.grad.array() * bb.array()).matrix());
          tp.accumulate(ib, (n.grad.array() * tp.node(ia).value.array()).matrix());
        };
        break;
      case BinOp::Div:
        t->node(out.id()).backward = [ia, ib](Tape& tp, const Tape::Node& n) {
          const Matrix bb = broadcast_rows(tp.node(ib).value, n.grad.rows());
          tp.accumulate(ia, (n.grad.array() / bb.array()).matrix());
          tp.accumulate(ib, (-n.grad.array() * tp.node(ia).value.array() / (bb.array() * bb.array())).matrix());
        };
        break;
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Div, "div", a, b); }

Tensor scalar_mul(double s, const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Matrix v = s * a.value();
  Matrix r;
  if (t->dual()) r = s * a.reference();
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, "scalar_mul");
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia, s](Tape& tp, const Tape::Node& n) {
      tp.accumulate(ia, s * n.grad);
    };
  }
  return out;
}

Tensor scalar_add(double s, const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Matrix v = a.value().array() + s;
  Matrix r;
  if (t->dual()) r = a.reference().array() + s;
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, "scalar_add");
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia](Tape& tp, const Tape::Node& n) {
      tp.accumulate(ia, n.grad);
    };
  }
  return out;
}

Tensor neg(const Tensor& a) { return scalar_mul(-1.0, a); }

// ---- elementwise nonlinearities ---------------------------------------------
// Each gets both the ordinary backward rule and the DeepLIFT Rescale rule:
// multiplier = (out - out_ref) / (in - in_ref), analytic slope when |din| is
// below kRescaleEps.

namespace {

template <typename Fwd, typename Slope>
Tensor unary_nonlin(const Tensor& a, const char* name, Fwd fwd, Slope slope_at) {
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Matrix v = fwd(a.value());
  Matrix r;
  if (t->dual()) r = fwd(a.reference());
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, name);
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia, slope_at](Tape& tp, const Tape::Node& n) {
      const Matrix& x = tp.node(ia).value;
      Matrix g(n.grad.rows(), n.grad.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        g.data()[i] = n.grad.data()[i] * slope_at(x.data()[i], n.value.data()[i]);
      }
      tp.accumulate(ia, g);
    };
    t->node(out.id()).rescale = [ia, slope_at](Tape& tp, const Tape::Node& n) {
      const Tape::Node& in = tp.node(ia);
      Matrix g(n.grad.rows(), n.grad.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        const double din = in.value.data()[i] - in.ref.data()[i];
        const double mult = std::fabs(din) < kRescaleEps
                                ? slope_at(in.value.data()[i], n.value.data()[i])
                                : (n.value.data()[i] - n.ref.data()[i]) / din;
        g.data()[i] = n.grad.data()[i] * mult;
      }
      tp.accumulate(ia, g);
    };
  }
  return out;
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_nonlin(
      a, "tanh", [](const Matrix& x) { return Matrix(x.array().tanh()); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_nonlin(
      a, "sigmoid",
      [](const Matrix& x) { return Matrix((0.5 * (0.5 * x.array()).tanh() + 0.5)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_nonlin(
      a, "relu", [](const Matrix& x) { return Matrix(x.array().max(0.0)); },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_nonlin(
      a, "exp", [](const Matrix& x) { return Matrix(x.array().min(kExpClamp).exp()); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_nonlin(
      a, "log", [](const Matrix& x) { return Matrix(x.array().max(kLogFloor).log()); },
      [](double x, double) { return 1.0 / std::max(x, kLogFloor); });
}

Tensor sqrt(const Tensor& a) {
  return unary_nonlin(
      a, "sqrt", [](const Matrix& x) { return Matrix(x.array().max(0.0).sqrt()); },
      [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}

Tensor abs(const Tensor& a) {
  return unary_nonlin(
      a, "abs", [](const Matrix& x) { return Matrix(x.array().abs()); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---- softmax -----------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw ContractError("softmax: axis must be 0 or 1");
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Matrix v = stable_softmax(a.value(), axis);
  Matrix r;
  if (t->dual()) r = stable_softmax(a.reference(), axis);
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, "softmax");
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia, axis](Tape& tp, const Tape::Node& n) {
      tp.accumulate(ia, softmax_grad(n.grad, n.value, axis));
    };
  }
  return out;
}

// ---- structure ops -----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  Tape* t = parts.front().tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Eigen::Index rows = parts.front().rows(), cols = parts.front().cols();
  std::vector<int> ids;
  ids.reserve(parts.size());
  Eigen::Index total = axis == 0 ? rows : cols;
  ids.push_back(parts.front().id());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    common_tape(parts.front(), parts[i]);
    const Tensor& p = parts[i];
    if ((axis == 0 && p.cols() != cols) || (axis == 1 && p.rows() != rows)) {
      throw ShapeError("concat: shape " + shape_str(p.value()) + " does not match " +
                       shape_str(parts.front().value()) + " along axis " + std::to_string(axis));
    }
    total += axis == 0 ? p.rows() : p.cols();
    ids.push_back(p.id());
  }
  Matrix v(axis == 0 ? total : rows, axis == 0 ? cols : total);
  Matrix r;
  if (t->dual()) r.resize(v.rows(), v.cols());
  Eigen::Index off = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      v.middleRows(off, p.rows()) = p.value();
      if (t->dual()) r.middleRows(off, p.rows()) = p.reference();
      off += p.rows();
    } else {
      v.middleCols(off, p.cols()) = p.value();
      if (t->dual()) r.middleCols(off, p.cols()) = p.reference();
      off += p.cols();
    }
  }
  Tensor out = t->emplace(std::move(v), std::move(r), ids, "concat");
  if (t->grad_enabled()) {
    std::vector<int> in = out.tape()->node(out.id()).inputs;
    t->node(out.id()).backward = [in, axis](Tape& tp, const Tape::Node& n) {
      Eigen::Index o = 0;
      for (const int id : in) {
        const Matrix& val = tp.node(id).value;
        if (axis == 0) {
          tp.accumulate(id, n.grad.middleRows(o, val.rows()));
          o += val.rows();
        } else {
          tp.accumulate(id, n.grad.middleCols(o, val.cols()));
          o += val.cols();
        }
      }
    };
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len) {
  if (axis != 0 && axis != 1) throw ContractError("slice: axis must be 0 or 1");
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  const Eigen::Index extent = axis == 0 ? a.rows() : a.cols();
  if (start < 0 || len < 1 || start + len > extent) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") outside extent " + std::to_string(extent));
  }
  Matrix v = axis == 0 ? Matrix(a.value().middleRows(start, len)) : Matrix(a.value().middleCols(start, len));
  Matrix r;
  if (t->dual()) {
    r = axis == 0 ? Matrix(a.reference().middleRows(start, len)) : Matrix(a.reference().middleCols(start, len));
  }
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, "slice");
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia, axis, start, len](Tape& tp, const Tape::Node& n) {
      Tape::Node& in = tp.node(ia);
      if (!in.requires_grad) return;
      if (axis == 0) {
        in.grad.middleRows(start, len) += n.grad;
      } else {
        in.grad.middleCols(start, len) += n.grad;
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tape* t = a.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  Matrix r;
  if (t->dual()) {
    r.resize(1, 1);
    r(0, 0) = a.reference().sum();
  }
  Tensor out = t->emplace(std::move(v), std::move(r), {a.id()}, "sum");
  if (t->grad_enabled()) {
    const int ia = a.id();
    t->node(out.id()).backward = [ia](Tape& tp, const Tape::Node& n) {
      const Matrix& val = tp.node(ia).value;
      tp.accumulate(ia, Matrix::Constant(val.rows(), val.cols(), n.grad(0, 0)));
    };
  }
  return out;
}

Tensor mean(const Tensor& a) { return scalar_mul(1.0 / static_cast<double>(a.size()), sum(a)); }

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  Tape* t = table.tape();
  if (!t) throw ContractError("operand not attached to a tape");
  if (ids.empty()) throw ContractError("gather_rows: empty index list");
  Matrix v(static_cast<Eigen::Index>(ids.size()), table.cols());
  Matrix r;
  if (t->dual()) r.resize(v.rows(), v.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw IndexError("gather_rows: index " + std::to_string(ids[i]) + " outside table with " +
                       std::to_string(table.rows()) + " rows");
    }
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    if (t->dual()) r.row(static_cast<Eigen::Index>(i)) = table.reference().row(ids[i]);
  }
  Tensor out = t->emplace(std::move(v), std::move(r), {table.id()}, "gather_rows");
  if (t->grad_enabled()) {
    const int it = table.id();
    const std::vector<int> idx = ids;
    t->node(out.id()).backward = [it, idx](Tape& tp, const Tape::Node& n) {
      Tape::Node& in = tp.node(it);
      if (!in.requires_grad) return;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        in.grad.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
      }
    };
  }
  return out;
}

// ---- finite differences -------------------------------------------------------

double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                         const Matrix& point, double step) {
  Matrix analytic;
  {
    Tape tape;
    Tensor x = tape.leaf(point, true);
    Tensor loss = f(tape, x);
    if (loss.size() != 1) throw ContractError("finite_diff_check: function must return a scalar");
    tape.backward(loss);
    analytic = x.grad();
  }
  const auto eval = [&](const Matrix& p) {
    Tape tape(false);
    Tensor x = tape.leaf(p, false);
    return f(tape, x).value()(0, 0);
  };
  double worst = 0.0;
  Matrix p = point;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double orig = p.data()[i];
    p.data()[i] = orig + step;
    const double up = eval(p);
    p.data()[i] = orig - step;
    const double down = eval(p);
    p.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.data()[i];
    const double err = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace exagree
