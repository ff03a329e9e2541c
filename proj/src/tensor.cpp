#include "mperl/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mperl/error.hpp"
#include "mperl/special.hpp"

namespace mperl {

namespace {

thread_local Tape* g_active_tape = nullptr;

using detail::NodePtr;
using detail::TensorNode;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

CMapM cmap(const TensorNode* n) {
  return CMapM(n->data.data(), static_cast<Eigen::Index>(n->rows()),
               static_cast<Eigen::Index>(n->cols()));
}

CMapM cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return CMapM(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MapM map(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MapM(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (auto d : shape) p *= d;
  return p;
}

std::string shape_str(const TensorNode* n) {
  std::string s = "(";
  for (std::size_t i = 0; i < n->shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(n->shape[i]);
  }
  return s + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.node()) + " vs " +
                   shape_str(b.node()));
  }
}

void require_col(const Tensor& a, const Tensor& v, const char* op) {
  if (v.cols() != 1 || v.rows() != a.rows()) {
    throw DimError(std::string(op) + ": expected column vector of " + std::to_string(a.rows()) +
                   " rows, got " + shape_str(v.node()));
  }
}

bool track(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void record(std::vector<NodePtr> keep_alive, Tensor& out,
            std::function<void(const std::vector<double>&, Adjoints&)> backward) {
  out.set_requires_grad(true);
  keep_alive.push_back(out.node_ptr());
  g_active_tape->record({std::move(keep_alive), out.node(), std::move(backward)});
}

// elementwise op helper: forward fn(x) and backward dfn(x, y) = dy/dx
template <typename F, typename DF>
Tensor unary_elementwise(const Tensor& a, F&& f, DF&& df) {
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (double& v : out.mutable_values()) v = f(v);
  if (track({&a})) {
    NodePtr an = a.node_ptr();
    NodePtr on = out.node_ptr();
    record({an}, out, [an, on, df](const std::vector<double>& go, Adjoints& adj) {
      std::vector<double>& ga = adj.at(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i] * df(an->data[i], on->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->data.assign(shape_product(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_product(shape) != data.size()) {
    throw DimError("from_data: shape product " + std::to_string(shape_product(shape)) +
                   " != data length " + std::to_string(data.size()));
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1, 1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (!node_ || node_->data.size() != 1) {
    throw ContractError("item() requires a scalar tensor");
  }
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw ContractError("gradient not allocated; missing backward or ensure_grad");
  }
  return node_->grad;
}

void Tensor::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// ---- Adjoints / Tape -------------------------------------------------------

std::vector<double>& Adjoints::at(const detail::TensorNode* n) {
  auto [it, inserted] = map_.try_emplace(n);
  if (inserted) it->second.assign(n->data.size(), 0.0);
  return it->second;
}

const std::vector<double>* Adjoints::find(const detail::TensorNode* n) const {
  auto it = map_.find(n);
  return it == map_.end() ? nullptr : &it->second;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss tensor");
  }
  Adjoints adj;
  adj.at(loss.node())[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const std::vector<double>* out_adj = adj.find(it->output);
    if (!out_adj) continue;
    it->backward(*out_adj, adj);
  }
  adj.for_each([](const detail::TensorNode* n, const std::vector<double>& a) {
    if (!n->requires_grad) return;
    auto* node = const_cast<detail::TensorNode*>(n);
    if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) node->grad[i] += a[i];
  });
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

// ---- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                   std::to_string(b.rows()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  map(out.mutable_values(), m, n).noalias() = cmap(a.node()) * cmap(b.node());
  if (track({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    record({an, bn}, out, [an, bn, m, k, n](const std::vector<double>& go, Adjoints& adj) {
      CMapM g = cmap(go, m, n);
      if (an->requires_grad) {
        map(adj.at(an.get()), m, k).noalias() += g * cmap(bn.get()).transpose();
      }
      if (bn->requires_grad) {
        map(adj.at(bn.get()), k, n).noalias() += cmap(an.get()).transpose() * g;
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out.mutable_values()[i] += b.values()[i];
  if (track({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    record({an, bn}, out, [an, bn](const std::vector<double>& go, Adjoints& adj) {
      for (const NodePtr& n : {an, bn}) {
        if (!n->requires_grad) continue;
        std::vector<double>& g = adj.at(n.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out.mutable_values()[i] -= b.values()[i];
  if (track({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    record({an, bn}, out, [an, bn](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (bn->requires_grad) {
        std::vector<double>& g = adj.at(bn.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out.mutable_values()[i] *= b.values()[i];
  if (track({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    record({an, bn}, out, [an, bn](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        std::vector<double>& g = adj.at(bn.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out.mutable_values()[i] /= b.values()[i];
  if (track({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    record({an, bn}, out, [an, bn](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] / bn->data[i];
      }
      if (bn->requires_grad) {
        std::vector<double>& g = adj.at(bn.get());
        for (std::size_t i = 0; i < go.size(); ++i) {
          g[i] -= go[i] * an->data[i] / (bn->data[i] * bn->data[i]);
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor rsub_scalar(double c, const Tensor& a) {
  return unary_elementwise(
      a, [c](double x) { return c - x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
  }
  return unary_elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor lgamma_t(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw std::domain_error("lgamma: non-positive input " + std::to_string(v));
  }
  return unary_elementwise(
      a, [](double x) { return special::log_gamma(x); },
      [](double x, double) { return special::digamma(x); });
}

Tensor digamma_t(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw std::domain_error("digamma: non-positive input " + std::to_string(v));
  }
  return unary_elementwise(
      a, [](double x) { return special::digamma(x); },
      [](double x, double) { return special::trigamma(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_elementwise(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t n = a.rows(), k = a.cols();
  Tensor out = Tensor::from_data(a.shape(), a.values());
  std::vector<double>& ov = out.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = ov.data() + i * k;
    double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
  }
  if (track({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record({an}, out, [an, on, n, k](const std::vector<double>& go, Adjoints& adj) {
      std::vector<double>& ga = adj.at(an.get());
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = on->data.data() + i * k;
        const double* g = go.data() + i * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (track({&a})) {
    NodePtr an = a.node_ptr();
    record({an}, out, [an](const std::vector<double>& go, Adjoints& adj) {
      std::vector<double>& g = adj.at(an.get());
      for (double& v : g) v += go[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(s * inv);
  if (track({&a})) {
    NodePtr an = a.node_ptr();
    record({an}, out, [an, inv](const std::vector<double>& go, Adjoints& adj) {
      std::vector<double>& g = adj.at(an.get());
      for (double& v : g) v += go[0] * inv;
    });
  }
  return out;
}

Tensor row_sums(const Tensor& a) {
  const std::size_t n = a.rows(), k = a.cols();
  Tensor out = Tensor::zeros({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += a.values()[i * k + j];
    out.mutable_values()[i] = s;
  }
  if (track({&a})) {
    NodePtr an = a.node_ptr();
    record({an}, out, [an, n, k](const std::vector<double>& go, Adjoints& adj) {
      std::vector<double>& g = adj.at(an.get());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) g[i * k + j] += go[i];
      }
    });
  }
  return out;
}

Tensor mul_col(const Tensor& a, const Tensor& v) {
  require_col(a, v, "mul_col");
  const std::size_t n = a.rows(), k = a.cols();
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.mutable_values()[i * k + j] *= v.values()[i];
  }
  if (track({&a, &v})) {
    NodePtr an = a.node_ptr(), vn = v.node_ptr();
    record({an, vn}, out, [an, vn, n, k](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) g[i * k + j] += go[i * k + j] * vn->data[i];
        }
      }
      if (vn->requires_grad) {
        std::vector<double>& g = adj.at(vn.get());
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += go[i * k + j] * an->data[i * k + j];
          g[i] += s;
        }
      }
    });
  }
  return out;
}

Tensor div_col(const Tensor& a, const Tensor& v) {
  require_col(a, v, "div_col");
  const std::size_t n = a.rows(), k = a.cols();
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.mutable_values()[i * k + j] /= v.values()[i];
  }
  if (track({&a, &v})) {
    NodePtr an = a.node_ptr(), vn = v.node_ptr(), on = out.node_ptr();
    record({an, vn}, out, [an, vn, on, n, k](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) g[i * k + j] += go[i * k + j] / vn->data[i];
        }
      }
      if (vn->requires_grad) {
        std::vector<double>& g = adj.at(vn.get());
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += go[i * k + j] * on->data[i * k + j];
          g[i] -= s / vn->data[i];
        }
      }
    });
  }
  return out;
}

Tensor sub_col(const Tensor& a, const Tensor& v) {
  require_col(a, v, "sub_col");
  const std::size_t n = a.rows(), k = a.cols();
  Tensor out = Tensor::from_data(a.shape(), a.values());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.mutable_values()[i * k + j] -= v.values()[i];
  }
  if (track({&a, &v})) {
    NodePtr an = a.node_ptr(), vn = v.node_ptr();
    record({an, vn}, out, [an, vn, n, k](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (vn->requires_grad) {
        std::vector<double>& g = adj.at(vn.get());
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += go[i * k + j];
          g[i] -= s;
        }
      }
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimError("concat_cols: row mismatch " + std::to_string(a.rows()) + " vs " +
                   std::to_string(b.rows()));
  }
  const std::size_t n = a.rows(), ka = a.cols(), kb = b.cols();
  Tensor out = Tensor::zeros({n, ka + kb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.values().data() + i * ka, ka, out.mutable_values().data() + i * (ka + kb));
    std::copy_n(b.values().data() + i * kb, kb, out.mutable_values().data() + i * (ka + kb) + ka);
  }
  if (track({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    record({an, bn}, out, [an, bn, n, ka, kb](const std::vector<double>& go, Adjoints& adj) {
      if (an->requires_grad) {
        std::vector<double>& g = adj.at(an.get());
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < ka; ++j) g[i * ka + j] += go[i * (ka + kb) + j];
        }
      }
      if (bn->requires_grad) {
        std::vector<double>& g = adj.at(bn.get());
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < kb; ++j) g[i * kb + j] += go[i * (ka + kb) + ka + j];
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  const std::size_t k = a.cols();
  Tensor out = Tensor::zeros({idx.size(), k});
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= a.rows()) {
      throw DimError("gather_rows: index " + std::to_string(idx[t]) + " out of range");
    }
    std::copy_n(a.values().data() + idx[t] * k, k, out.mutable_values().data() + t * k);
  }
  if (track({&a})) {
    NodePtr an = a.node_ptr();
    record({an}, out, [an, idx, k](const std::vector<double>& go, Adjoints& adj) {
      std::vector<double>& g = adj.at(an.get());
      for (std::size_t t = 0; t < idx.size(); ++t) {
        for (std::size_t j = 0; j < k; ++j) g[idx[t] * k + j] += go[t * k + j];
      }
    });
  }
  return out;
}

}  // namespace mperl
