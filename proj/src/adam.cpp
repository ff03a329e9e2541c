#include "mperl/adam.hpp"

#include <cmath>

#include "mperl/error.hpp"

namespace mperl {

Adam::Adam(std::vector<Tensor> params) : Adam(std::move(params), Options()) {}

Adam::Adam(std::vector<Tensor> params, Options opts) : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p];
    if (!t.has_grad()) {
      throw ContractError("adam step: parameter " + std::to_string(p) + " has no gradient");
    }
    const std::vector<double>& g = t.grad();
    std::vector<double>& x = t.mutable_values();
    std::vector<double>& m = m_[p];
    std::vector<double>& v = v_[p];
    for (std::size_t i = 0; i < x.size(); ++i) {
      double gi = g[i] + opts_.weight_decay * x[i];
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
      x[i] -= opts_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace mperl
