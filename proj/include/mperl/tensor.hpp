#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace mperl {

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;   // row-major
  std::vector<double> grad;   // empty until allocated; same length as data
  bool requires_grad = false;

  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

// Dense 64-bit tensor with value semantics on the handle and shared storage.
// Participates in reverse-mode gradient accumulation when requires_grad is
// set and a Tape is active (see TapeScope).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return node_->rows(); }
  std::size_t cols() const { return node_->cols(); }

  // scalar value; ContractError unless size() == 1
  double item() const;

  const std::vector<double>& values() const { return node_->data; }
  std::vector<double>& mutable_values() { return node_->data; }
  double operator()(std::size_t r, std::size_t c) const {
    return node_->data[r * node_->cols() + c];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;  // ContractError if never allocated
  void ensure_grad();                       // allocate zeroed accumulator
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;
};

// Sparse per-pass adjoint storage keyed by node identity.
class Adjoints {
 public:
  // get-or-create zeroed adjoint buffer for a node
  std::vector<double>& at(const detail::TensorNode* n);
  const std::vector<double>* find(const detail::TensorNode* n) const;
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [node, adj] : map_) fn(node, adj);
  }

 private:
  std::unordered_map<const detail::TensorNode*, std::vector<double>> map_;
};

// Ordered record of executed primitives. backward() replays adjoints in
// reverse execution order into fresh per-pass buffers, then adds them into
// the persistent grad of every requires_grad tensor, so repeated backward
// passes accumulate additively.
class Tape {
 public:
  struct Op {
    std::vector<detail::NodePtr> keep_alive;  // inputs + output
    detail::TensorNode* output = nullptr;
    // accumulates input adjoints given the output adjoint
    std::function<void(const std::vector<double>&, Adjoints&)> backward;
  };

  void record(Op op) { ops_.push_back(std::move(op)); }
  void backward(const Tensor& loss);
  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

  static Tape* active();

 private:
  std::vector<Op> ops_;
};

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- primitives ---------------------------------------------------------
// All primitives validate shapes (DimError) and record themselves on the
// active tape when any input requires a gradient.

Tensor matmul(const Tensor& a, const Tensor& b);        // (m×k)·(k×n)
Tensor add(const Tensor& a, const Tensor& b);            // elementwise
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor rsub_scalar(double c, const Tensor& a);           // c − a
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);                             // domain error on x ≤ 0
Tensor lgamma_t(const Tensor& a);                        // log Γ, x > 0
Tensor digamma_t(const Tensor& a);                       // ψ, x > 0
Tensor softmax_rows(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum_all(const Tensor& a);                         // 1×1
Tensor mean_all(const Tensor& a);                        // 1×1
Tensor row_sums(const Tensor& a);                        // n×k → n×1
Tensor mul_col(const Tensor& a, const Tensor& v);        // a_ij · v_i
Tensor div_col(const Tensor& a, const Tensor& v);        // a_ij / v_i
Tensor sub_col(const Tensor& a, const Tensor& v);        // a_ij − v_i
Tensor concat_cols(const Tensor& a, const Tensor& b);    // n×(k1+k2)
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);

}  // namespace mperl
