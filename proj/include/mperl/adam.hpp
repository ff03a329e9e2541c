#pragma once

#include <cstddef>
#include <vector>

#include "mperl/tensor.hpp"

namespace mperl {

// Bias-corrected first-order optimizer over a fixed parameter list.
// Moment accumulators are allocated to match parameter shapes at
// construction; step() consumes the gradients currently held on the
// parameters (every parameter must have an allocated gradient).
class Adam {
 public:
  struct Options {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // coupled L2 added to the gradient
  };

  explicit Adam(std::vector<Tensor> params);
  Adam(std::vector<Tensor> params, Options opts);

  void step();
  void zero_grad();

  std::size_t step_count() const { return step_; }
  const Options& options() const { return opts_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
  Options opts_;
};

}  // namespace mperl
