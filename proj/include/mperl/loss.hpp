#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "mperl/kg.hpp"
#include "mperl/model.hpp"
#include "mperl/tensor.hpp"

namespace mperl {

enum class LossKind { Evidential, CrossEntropy };

// The printed halting divergence uses a 1/λ coefficient; the textbook
// geometric-geometric KL uses (1−λ)/λ. The printed form is the default,
// the alternative is exposed for sensitivity studies.
enum class GeometricKlForm { Paper, Textbook };

struct LossConfig {
  LossKind kind = LossKind::Evidential;
  double beta = 0.01;
  double lambda_p = 0.2;
  std::size_t anneal_horizon = 10;
  GeometricKlForm geo_form = GeometricKlForm::Paper;
  TaskMode mode = TaskMode::SingleLabel;
};

struct LossBreakdown {
  Tensor total;  // scalar, live on the tape
  double err = 0.0;
  double var = 0.0;
  double unc = 0.0;
  double reg = 0.0;
  double delta = 0.0;
};

// squared prediction error and Dirichlet variance penalty, per row
std::pair<Tensor, Tensor> err_var(const Tensor& y, const Tensor& yhat, const Tensor& alpha);

// misleading-evidence adjustment: the true-class component resets to 1
Tensor adjust_evidence(const Tensor& y, const Tensor& alpha);

// KL(D(α̃) ‖ D(1,…,1)) per row; domain error on non-positive α̃
Tensor kl_dirichlet_uniform(const Tensor& alpha_tilde);

// uncertainty-penalty ramp δ_t = min(1, t / horizon)
double annealing(std::size_t epoch, std::size_t horizon = 10);

// per-element halting divergence against the prior rate; both rates are
// clamped to [1e-6, 1 − 1e-6] before evaluation
Tensor kl_geometric(const Tensor& lambda_n, double lambda_p,
                    GeometricKlForm form = GeometricKlForm::Paper);

// mean cross-entropy of probabilities against targets: categorical for
// single-label rows, per-class binary for multi-label rows
Tensor cross_entropy(const Tensor& probs, const Tensor& y, TaskMode mode);

// Composite training loss over all halting steps for the labeled rows the
// forward pass was evaluated on. `y` is rows × K (one-hot, or a normalized
// multi-hot). Evidential mode:
//   total = mean_i Σ_n p_n,i (err + var + δ_t·KL_dir) + β · mean KL_geo
// where the halting divergence is averaged over the learned steps (the
// forced truncation step carries no learnable rate). Cross-entropy mode
// swaps the evidential terms for a p_n-weighted softmax/sigmoid
// cross-entropy and drops the regularizer.
LossBreakdown total_loss(const ForwardResult& fwd, const std::vector<std::size_t>& rows,
                         const Tensor& y, const LossConfig& cfg, std::size_t epoch,
                         const ModelParams& params);

}  // namespace mperl
