#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mperl/adjacency.hpp"
#include "mperl/kg.hpp"
#include "mperl/rng.hpp"
#include "mperl/tensor.hpp"

namespace mperl {

struct HyperParams {
  std::size_t num_layers = 2;   // L
  std::size_t hidden = 16;      // width of the inner layers
  std::size_t last_hidden = 0;  // d[L]; 0 resolves to num_classes
  std::size_t num_bases = 0;    // B; 0 resolves to min(num_relations, 40)
  std::size_t max_steps = 0;    // N; 0 resolves to round(1/lambda_p)
  std::size_t num_classes = 0;  // K
  double lambda_p = 0.2;        // geometric prior parameter
  double beta = 0.01;           // halting regularization weight
  TaskMode mode = TaskMode::SingleLabel;

  std::size_t resolved_last_hidden() const;
  std::size_t resolved_steps() const;
  std::size_t resolved_bases(std::size_t num_relations) const;
  // output width of layer l in [0, L)
  std::size_t layer_width(std::size_t layer) const;
  void validate() const;  // ConfigError naming the offending field
};

// All learned tensors. The input layer acts on the concatenation of a
// one-hot node encoding with the previous step's hidden state; its weight
// is stored split into an embedding part (one-hot side, kept transposed as
// nodes × d1) and a dense part (hidden side). Relation weights everywhere
// are basis-decomposed; the per-layer self-loop weight is not.
struct ModelParams {
  std::vector<Tensor> emb_bases;  // B tensors, nodes × d1
  std::vector<Tensor> hid_bases;  // B tensors, dL × d1
  Tensor coeffs0;                 // R × B
  Tensor self_emb;                // nodes × d1
  Tensor self_hid;                // dL × d1

  std::vector<std::vector<Tensor>> layer_bases;  // per deeper layer: B of d_in × d_out
  std::vector<Tensor> layer_coeffs;              // per deeper layer: R × B
  std::vector<Tensor> layer_self;                // per deeper layer: d_in × d_out

  Tensor halting;     // dL × 1
  Tensor class_proj;  // dL × K; undefined when dL == K

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
};

ModelParams init_params(const HyperParams& hp, std::size_t num_entities,
                        std::size_t num_relations, std::uint64_t seed);

// Relation weight of one layer mixed from its bases, in d_out × d_in
// orientation. Layer 0 returns the full concatenated input-layer weight
// (embedding columns followed by hidden columns).
Tensor compose_weight(const ModelParams& params, const HyperParams& hp, std::size_t relation,
                      std::size_t layer);

struct StepResult {
  Tensor hidden;        // nodes × dL
  Tensor halting_prob;  // nodes × 1, sigmoid of the halting projection
};

// One Markov step: input layer over (one-hot, h_prev), deeper layers, and
// the per-entity conditional halting probability.
StepResult markov_step(const ModelParams& params, const HyperParams& hp,
                       const RelationalAdjacency& adj, const Tensor& h_prev);

// Unconditional halting distribution p_n = λ_n Π_{s<n} (1 − λ_s). The
// caller passes per-step conditional probabilities whose final entry is
// the all-ones truncation step, which makes Σ_n p_n = 1 hold exactly.
std::vector<Tensor> halting_distribution(const std::vector<Tensor>& lambdas);

// Σ_{s ≤ up_to} h_s ⊙ λ_s (per-entity weighting by the conditional
// halting probabilities)
Tensor aggregate_hidden(const std::vector<Tensor>& hiddens, const std::vector<Tensor>& lambdas,
                        std::size_t up_to);

struct DirichletOutput {
  Tensor alpha;     // rows × K, every entry ≥ 1
  Tensor yhat;      // rows × K, rows sum to 1
  Tensor strength;  // rows × 1, Σ_k alpha_k
};

// α = relu(proj(h)) + 1, prediction = Dirichlet mean α / Σα
DirichletOutput dirichlet_head(const ModelParams& params, const Tensor& h);

struct HaltingTrace {
  std::vector<Tensor> lambdas;  // nodes × 1 per step; final step is all-ones
  std::vector<Tensor> ps;       // nodes × 1 per step
  std::vector<Tensor> hiddens;  // nodes × dL per step
  Tensor aggregated;            // full-horizon weighted hidden feature

  std::size_t executed_steps() const { return hiddens.size(); }
};

struct ForwardResult {
  HaltingTrace trace;
  // cumulative aggregated features on the requested rows, one per step
  std::vector<Tensor> step_features;
  // head outputs on the requested rows, from the step-n cumulative
  // aggregation; the final entry is the full-horizon prediction
  std::vector<DirichletOutput> step_outputs;

  const DirichletOutput& final_output() const { return step_outputs.back(); }
};

// Deterministic forward pass over all N steps. `rows` selects the node
// rows that receive head outputs (empty = every node). Recording happens
// iff a tape is active.
ForwardResult forward(const ModelParams& params, const HyperParams& hp,
                      const RelationalAdjacency& adj, const std::vector<std::size_t>& rows = {});

// Study-mode stochastic halting: each entity stops at its first Bernoulli
// success and keeps the aggregation truncated at that step.
struct SampledForward {
  std::vector<std::size_t> halt_step;  // per entity, 1-based
  Tensor yhat;
};
SampledForward forward_sampled(const ModelParams& params, const HyperParams& hp,
                               const RelationalAdjacency& adj, Rng& rng);

// versioned checkpoint with a shape manifest
void save_checkpoint(const ModelParams& params, const HyperParams& hp, const std::string& path);
std::pair<ModelParams, HyperParams> load_checkpoint(const std::string& path);

}  // namespace mperl
