#pragma once

#include <Eigen/Dense>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "exagree/error.hpp"

namespace exagree {

/// All values are dense 2-d arrays of 64-bit floats in row-major order.
/// Vectors are represented as 1xN or Nx1 matrices.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; the Tape owns the
/// storage. `grad()` is valid only after the tape's backward pass.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Reference-input value (DeepLIFT-style dual forward); equals value() on
  /// non-dual tapes.
  const Matrix& reference() const;
  const Matrix& grad() const;
  bool requires_grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Eigen::Index size() const { return value().size(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }

  bool defined() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records a forward computation as an ordered list of nodes (inputs always
/// precede their consumers) and replays it in reverse to accumulate
/// gradients. One backward pass per tape; record a fresh tape per forward.
///
/// Two backward modes are supported:
///  - backward():          ordinary reverse-mode chain rule.
///  - backward_rescale():  chain rule with every elementwise nonlinearity's
///                         local derivative replaced by the finite multiplier
///                         (out - out_ref) / (in - in_ref), for tapes recorded
///                         in dual mode (see dual_leaf). Linear ops, matmul
///                         and softmax keep their ordinary rule.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix ref;   // dual mode only
    Matrix grad;  // allocated by backward
    std::vector<int> inputs;
    std::function<void(Tape&, const Node&)> backward;
    std::function<void(Tape&, const Node&)> rescale;  // elementwise nonlinearities
    const char* op = "leaf";
    bool requires_grad = false;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad = false);
  /// Leaf carrying both an input value and a reference value; marks the tape
  /// as dual. Leaves created with leaf() on a dual tape use ref = value.
  Tensor dual_leaf(Matrix value, Matrix reference, bool requires_grad = false);

  void backward(const Tensor& loss);
  void backward_rescale(const Tensor& loss);

  bool grad_enabled() const { return grad_enabled_; }
  bool dual() const { return dual_; }
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  /// Appends a node; used by the op free functions.
  Tensor emplace(Matrix value, Matrix ref, std::vector<int> inputs, const char* op);

  /// Adds `delta` into the grad of node `id` if it participates in autodiff.
  /// A delta with more rows than the node (node broadcast from 1 row) is
  /// summed over rows first.
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.value.rows() == 1 && delta.rows() > 1) {
      n.grad.noalias() += delta.colwise().sum();
    } else {
      n.grad.noalias() += delta;
    }
  }

 private:
  void run_backward(const Tensor& loss, bool rescale_mode);
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool dual_ = false;
  bool backward_done_ = false;
};

// ---- recorded operations ---------------------------------------------------
// Binary elementwise ops accept equal shapes, or a second operand with one
// row and matching columns (broadcast over the leading dimension).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scalar_mul(double s, const Tensor& a);
Tensor scalar_add(double s, const Tensor& a);
Tensor neg(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
/// exp with the input clamped to <= 709 so finite inputs cannot overflow.
Tensor exp(const Tensor& a);
/// log with the input clamped to >= 1e-300.
Tensor log(const Tensor& a);
/// sqrt with the input clamped to >= 0.
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);

/// Numerically stable softmax along `axis` (1 = across columns within each
/// row, 0 = across rows within each column). Max subtraction guards overflow.
Tensor softmax(const Tensor& a, int axis = 1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len);

Tensor sum(const Tensor& a);   // 1x1
Tensor mean(const Tensor& a);  // 1x1

/// Rows of `table` selected by `ids`; backward scatter-adds into the table.
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

/// Convenience: backward through the loss tensor's tape.
void backward(const Tensor& loss);

// ---- verification ----------------------------------------------------------

/// Compares the tape gradient of `f` at `point` against central finite
/// differences with the given step. Returns the max over coordinates of
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                         const Matrix& point, double step = 1e-5);

std::string shape_str(const Matrix& m);

}  // namespace exagree
