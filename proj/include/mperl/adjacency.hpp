#pragma once

#include <cstdint>
#include <vector>

#include "mperl/kg.hpp"
#include "mperl/rng.hpp"
#include "mperl/tensor.hpp"

namespace mperl {

// Typed sparse adjacency over the graph: per relation, the in-neighbor
// sets N_i^r in CSR form restricted to nodes with at least one neighbor,
// plus the normalization coefficient 1/|N_i^r|. With inverses included,
// block R + r holds the reverse direction of original relation r, and each
// direction is normalized independently. Immutable after build and safe to
// share across threads.
struct RelationalAdjacency {
  struct Block {
    std::vector<std::uint32_t> targets;  // sorted nodes i with |N_i^r| > 0
    std::vector<std::uint32_t> offsets;  // size targets.size() + 1
    std::vector<std::uint32_t> sources;  // neighbor ids per target slice
    std::vector<double> norm;            // per target: 1 / |N_i^r|
    // compact source-side view used by the one-hot kernels
    std::vector<std::uint32_t> unique_sources;  // sorted distinct sources
    std::vector<std::uint32_t> source_pos;      // per edge: index into unique_sources

    std::size_t edge_count() const { return sources.size(); }
  };

  std::size_t num_nodes = 0;
  bool includes_inverse = false;
  std::vector<Block> blocks;

  std::size_t num_relations() const { return blocks.size(); }
  std::size_t edge_count() const;

  static RelationalAdjacency build(const KnowledgeGraph& kg, bool include_inverse = true);

  // Uniform subsample without replacement per (node, relation); neighbor
  // sets at or below the fanout are kept whole. Norms reflect the sampled
  // set sizes. Training-time only; inference always uses the full adjacency.
  RelationalAdjacency sample(std::size_t fanout, Rng& rng) const;

  // neighbor list of one node under one relation (empty when none)
  std::vector<std::uint32_t> neighbors(std::size_t relation, std::uint32_t node) const;
};

// One (entity, relation) sample with its own seed; deterministic.
std::vector<std::uint32_t> sample_neighbors(const RelationalAdjacency& adj,
                                            std::size_t relation, std::uint32_t node,
                                            std::size_t fanout, std::uint64_t seed);

// The differentiable aggregation kernels below register a single tape op
// each and recompute intermediates during the backward pass instead of
// storing per-relation activations. The adjacency is captured by pointer
// and must outlive any tape recorded against it.

// out_i = Σ_r (1/|N_i^r|) Σ_{j∈N_i^r} feats_j · Wt_r, Wt_r of shape d_in × d_out
Tensor relational_aggregate(const RelationalAdjacency& adj, const Tensor& feats,
                            const std::vector<Tensor>& weights_t);

// basis-decomposed relation weights: Wt_r = Σ_b coeffs(r,b) · bases_t[b]
Tensor relational_aggregate_basis(const RelationalAdjacency& adj, const Tensor& feats,
                                  const Tensor& coeffs, const std::vector<Tensor>& bases_t);

// Input-layer kernel for one-hot node features: the relation weight acting
// on a one-hot vector selects an embedding row, so the aggregation reduces
// to normalized sums of basis embedding rows mixed by the coefficients.
// emb_bases[b] has shape num_nodes × d_out.
Tensor onehot_aggregate_basis(const RelationalAdjacency& adj, const Tensor& coeffs,
                              const std::vector<Tensor>& emb_bases);

}  // namespace mperl
