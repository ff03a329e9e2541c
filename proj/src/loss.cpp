#include "mperl/loss.hpp"

#include <algorithm>
#include <cmath>

#include "mperl/error.hpp"
#include "mperl/special.hpp"

namespace mperl {

namespace {

constexpr double kRateEps = 1e-6;
constexpr double kLogEps = 1e-12;

void require_rows_k(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimError(std::string(op) + ": target/prediction shape mismatch");
  }
}

// per-row cross-entropy against probabilities already in (0, 1]
Tensor cross_entropy_rows(const Tensor& probs, const Tensor& y, TaskMode mode) {
  require_rows_k(probs, y, "cross_entropy");
  Tensor safe = clamp(probs, kLogEps, 1.0);
  if (mode == TaskMode::SingleLabel) {
    return scale(row_sums(mul(y, log(safe))), -1.0);
  }
  // binary cross-entropy per class, averaged over the K classes
  Tensor pos = mul(y, log(safe));
  Tensor neg = mul(rsub_scalar(1.0, y), log(clamp(rsub_scalar(1.0, probs), kLogEps, 1.0)));
  return scale(row_sums(add(pos, neg)), -1.0 / static_cast<double>(probs.cols()));
}

}  // namespace

std::pair<Tensor, Tensor> err_var(const Tensor& y, const Tensor& yhat, const Tensor& alpha) {
  require_rows_k(y, yhat, "err_var");
  require_rows_k(y, alpha, "err_var");
  Tensor diff = sub(y, yhat);
  Tensor err = row_sums(mul(diff, diff));
  Tensor spread = row_sums(mul(yhat, rsub_scalar(1.0, yhat)));
  Tensor var = div(spread, add_scalar(row_sums(alpha), 1.0));
  return {err, var};
}

Tensor adjust_evidence(const Tensor& y, const Tensor& alpha) {
  require_rows_k(y, alpha, "adjust_evidence");
  return add(y, mul(rsub_scalar(1.0, y), alpha));
}

Tensor kl_dirichlet_uniform(const Tensor& alpha_tilde) {
  for (double v : alpha_tilde.values()) {
    if (!(v > 0.0)) {
      throw std::domain_error("kl_dirichlet_uniform: non-positive concentration");
    }
  }
  const double k = static_cast<double>(alpha_tilde.cols());
  Tensor total = row_sums(alpha_tilde);
  Tensor log_norm = sub(lgamma_t(total), add_scalar(row_sums(lgamma_t(alpha_tilde)),
                                                    special::log_gamma(k)));
  Tensor centered = sub_col(digamma_t(alpha_tilde), digamma_t(total));
  Tensor weighted = row_sums(mul(add_scalar(alpha_tilde, -1.0), centered));
  return add(log_norm, weighted);
}

double annealing(std::size_t epoch, std::size_t horizon) {
  if (horizon == 0) throw ContractError("annealing horizon must be >= 1");
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(horizon));
}

Tensor kl_geometric(const Tensor& lambda_n, double lambda_p, GeometricKlForm form) {
  const double lp = std::clamp(lambda_p, kRateEps, 1.0 - kRateEps);
  Tensor lam = clamp(lambda_n, kRateEps, 1.0 - kRateEps);
  Tensor rate_term = add_scalar(log(lam), -std::log(lp));
  Tensor survive_term = add_scalar(log(rsub_scalar(1.0, lam)), -std::log1p(-lp));
  Tensor coeff = form == GeometricKlForm::Paper
                     ? div(Tensor::full(lam.shape(), 1.0), lam)
                     : div(rsub_scalar(1.0, lam), lam);
  return add(rate_term, mul(coeff, survive_term));
}

Tensor cross_entropy(const Tensor& probs, const Tensor& y, TaskMode mode) {
  return mean_all(cross_entropy_rows(probs, y, mode));
}

LossBreakdown total_loss(const ForwardResult& fwd, const std::vector<std::size_t>& rows,
                         const Tensor& y, const LossConfig& cfg, std::size_t epoch,
                         const ModelParams& params) {
  const std::size_t steps = fwd.step_outputs.size();
  if (steps == 0) throw ContractError("total_loss: empty forward result");
  if (!rows.empty() && rows.size() != y.rows()) {
    throw DimError("total_loss: target rows do not match evaluation rows");
  }

  LossBreakdown out;
  out.delta = annealing(epoch, cfg.anneal_horizon);

  if (cfg.kind == LossKind::CrossEntropy) {
    Tensor acc;
    for (std::size_t n = 0; n < steps; ++n) {
      Tensor logits = params.class_proj.defined()
                          ? matmul(fwd.step_features[n], params.class_proj)
                          : fwd.step_features[n];
      Tensor probs =
          cfg.mode == TaskMode::SingleLabel ? softmax_rows(logits) : sigmoid(logits);
      Tensor ce = cross_entropy_rows(probs, y, cfg.mode);
      Tensor p = rows.empty() ? fwd.trace.ps[n] : gather_rows(fwd.trace.ps[n], rows);
      Tensor weighted = mul(p, ce);
      acc = n == 0 ? weighted : add(acc, weighted);
    }
    out.total = mean_all(acc);
    out.err = out.total.item();
    return out;
  }

  Tensor err_acc, var_acc, unc_acc;
  for (std::size_t n = 0; n < steps; ++n) {
    const DirichletOutput& head = fwd.step_outputs[n];
    auto [err_n, var_n] = err_var(y, head.yhat, head.alpha);
    Tensor kl_n = kl_dirichlet_uniform(adjust_evidence(y, head.alpha));
    Tensor p = rows.empty() ? fwd.trace.ps[n] : gather_rows(fwd.trace.ps[n], rows);
    if (n == 0) {
      err_acc = mul(p, err_n);
      var_acc = mul(p, var_n);
      unc_acc = mul(p, kl_n);
    } else {
      err_acc = add(err_acc, mul(p, err_n));
      var_acc = add(var_acc, mul(p, var_n));
      unc_acc = add(unc_acc, mul(p, kl_n));
    }
  }
  Tensor err_mean = mean_all(err_acc);
  Tensor var_mean = mean_all(var_acc);
  Tensor unc_mean = mean_all(unc_acc);

  // halting regularizer over the learned rates; the forced final step is
  // excluded because its rate is the truncation constant, not a parameter
  Tensor reg_mean;
  if (steps > 1) {
    Tensor reg_acc;
    for (std::size_t n = 0; n + 1 < steps; ++n) {
      Tensor lam =
          rows.empty() ? fwd.trace.lambdas[n] : gather_rows(fwd.trace.lambdas[n], rows);
      Tensor kl = kl_geometric(lam, cfg.lambda_p, cfg.geo_form);
      reg_acc = n == 0 ? kl : add(reg_acc, kl);
    }
    reg_mean = scale(mean_all(reg_acc), 1.0 / static_cast<double>(steps - 1));
  } else {
    reg_mean = Tensor::scalar(0.0);
  }

  out.err = err_mean.item();
  out.var = var_mean.item();
  out.unc = unc_mean.item();
  out.reg = reg_mean.item();
  out.total = add(add(err_mean, var_mean),
                  add(scale(unc_mean, out.delta), scale(reg_mean, cfg.beta)));
  return out;
}

}  // namespace mperl
