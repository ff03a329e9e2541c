#include "mperl/adjacency.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "mperl/error.hpp"

namespace mperl {

namespace {

using detail::NodePtr;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

void finalize_block(RelationalAdjacency::Block& b) {
  b.unique_sources = b.sources;
  std::sort(b.unique_sources.begin(), b.unique_sources.end());
  b.unique_sources.erase(std::unique(b.unique_sources.begin(), b.unique_sources.end()),
                         b.unique_sources.end());
  b.source_pos.resize(b.sources.size());
  for (std::size_t e = 0; e < b.sources.size(); ++e) {
    b.source_pos[e] = static_cast<std::uint32_t>(
        std::lower_bound(b.unique_sources.begin(), b.unique_sources.end(), b.sources[e]) -
        b.unique_sources.begin());
  }
}

RelationalAdjacency::Block make_block(std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
  RelationalAdjacency::Block b;
  std::sort(edges.begin(), edges.end());
  b.offsets.push_back(0);
  for (std::size_t e = 0; e < edges.size();) {
    const std::uint32_t tgt = edges[e].first;
    b.targets.push_back(tgt);
    std::size_t deg = 0;
    for (; e < edges.size() && edges[e].first == tgt; ++e, ++deg) {
      b.sources.push_back(edges[e].second);
    }
    b.offsets.push_back(static_cast<std::uint32_t>(b.sources.size()));
    b.norm.push_back(1.0 / static_cast<double>(deg));
  }
  finalize_block(b);
  return b;
}

// normalized neighbor sums: agg row t = (1/|N|) Σ_{j in slice} feats row j
void aggregate_rows(const RelationalAdjacency::Block& b, const double* feats, std::size_t d,
                    std::vector<double>& agg) {
  agg.assign(b.targets.size() * d, 0.0);
  for (std::size_t t = 0; t < b.targets.size(); ++t) {
    double* row = agg.data() + t * d;
    for (std::uint32_t e = b.offsets[t]; e < b.offsets[t + 1]; ++e) {
      const double* src = feats + static_cast<std::size_t>(b.sources[e]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
    }
    for (std::size_t j = 0; j < d; ++j) row[j] *= b.norm[t];
  }
}

// transpose of aggregate_rows: scatter row t of `rows` into grad at sources
void scatter_rows(const RelationalAdjacency::Block& b, const std::vector<double>& rows,
                  std::size_t d, std::vector<double>& grad) {
  for (std::size_t t = 0; t < b.targets.size(); ++t) {
    const double* row = rows.data() + t * d;
    const double c = b.norm[t];
    for (std::uint32_t e = b.offsets[t]; e < b.offsets[t + 1]; ++e) {
      double* dst = grad.data() + static_cast<std::size_t>(b.sources[e]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += c * row[j];
    }
  }
}

void add_rows_at(std::vector<double>& out, std::size_t d,
                 const std::vector<std::uint32_t>& targets, const std::vector<double>& rows) {
  for (std::size_t t = 0; t < targets.size(); ++t) {
    double* dst = out.data() + static_cast<std::size_t>(targets[t]) * d;
    const double* src = rows.data() + t * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
}

void gather_rows_at(const std::vector<double>& in, std::size_t d,
                    const std::vector<std::uint32_t>& targets, std::vector<double>& rows) {
  rows.resize(targets.size() * d);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::copy_n(in.data() + static_cast<std::size_t>(targets[t]) * d, d, rows.data() + t * d);
  }
}

}  // namespace

std::size_t RelationalAdjacency::edge_count() const {
  std::size_t n = 0;
  for (const Block& b : blocks) n += b.edge_count();
  return n;
}

RelationalAdjacency RelationalAdjacency::build(const KnowledgeGraph& kg, bool include_inverse) {
  RelationalAdjacency adj;
  adj.num_nodes = kg.num_entities();
  adj.includes_inverse = include_inverse;
  const std::size_t nrel = kg.num_relations();
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> edges(
      include_inverse ? 2 * nrel : nrel);
  for (const Triple& t : kg.triples) {
    edges[t.relation].emplace_back(t.object, t.subject);  // message flows s -> o
    if (include_inverse) edges[nrel + t.relation].emplace_back(t.subject, t.object);
  }
  adj.blocks.reserve(edges.size());
  for (auto& rel_edges : edges) adj.blocks.push_back(make_block(rel_edges));
  return adj;
}

RelationalAdjacency RelationalAdjacency::sample(std::size_t fanout, Rng& rng) const {
  if (fanout == 0) throw ContractError("sample requires fanout >= 1");
  RelationalAdjacency out;
  out.num_nodes = num_nodes;
  out.includes_inverse = includes_inverse;
  out.blocks.resize(blocks.size());
  std::vector<std::uint32_t> pool;
  for (std::size_t r = 0; r < blocks.size(); ++r) {
    const Block& b = blocks[r];
    Block& o = out.blocks[r];
    o.targets = b.targets;
    o.offsets.push_back(0);
    for (std::size_t t = 0; t < b.targets.size(); ++t) {
      pool.assign(b.sources.begin() + b.offsets[t], b.sources.begin() + b.offsets[t + 1]);
      std::size_t keep = std::min(fanout, pool.size());
      for (std::size_t i = 0; i < keep; ++i) {  // partial Fisher-Yates
        std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
      }
      o.sources.insert(o.sources.end(), pool.begin(), pool.begin() + keep);
      o.offsets.push_back(static_cast<std::uint32_t>(o.sources.size()));
      o.norm.push_back(1.0 / static_cast<double>(keep));
    }
    finalize_block(o);
  }
  return out;
}

std::vector<std::uint32_t> RelationalAdjacency::neighbors(std::size_t relation,
                                                          std::uint32_t node) const {
  const Block& b = blocks.at(relation);
  auto it = std::lower_bound(b.targets.begin(), b.targets.end(), node);
  if (it == b.targets.end() || *it != node) return {};
  const std::size_t t = static_cast<std::size_t>(it - b.targets.begin());
  return {b.sources.begin() + b.offsets[t], b.sources.begin() + b.offsets[t + 1]};
}

std::vector<std::uint32_t> sample_neighbors(const RelationalAdjacency& adj, std::size_t relation,
                                            std::uint32_t node, std::size_t fanout,
                                            std::uint64_t seed) {
  if (fanout == 0) throw ContractError("sample_neighbors requires fanout >= 1");
  std::vector<std::uint32_t> pool = adj.neighbors(relation, node);
  if (pool.size() <= fanout) return pool;
  Rng rng(seed);
  for (std::size_t i = 0; i < fanout; ++i) {
    std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(fanout);
  return pool;
}

// ---- differentiable kernels -------------------------------------------------

namespace {

void check_feats(const RelationalAdjacency& adj, const Tensor& feats) {
  if (feats.rows() != adj.num_nodes) {
    throw DimError("aggregate: feature rows " + std::to_string(feats.rows()) +
                   " != node count " + std::to_string(adj.num_nodes));
  }
}

// W_r composed from bases into scratch; empty coeffs means weights_t[r] is
// used directly.
void compose_weight_t(const Tensor& coeffs, const std::vector<Tensor>& bases_t, std::size_t r,
                      std::vector<double>& w) {
  const std::size_t len = bases_t[0].size();
  w.assign(len, 0.0);
  const std::size_t nb = bases_t.size();
  for (std::size_t b = 0; b < nb; ++b) {
    const double c = coeffs.values()[r * nb + b];
    if (c == 0.0) continue;
    const std::vector<double>& base = bases_t[b].values();
    for (std::size_t i = 0; i < len; ++i) w[i] += c * base[i];
  }
}

}  // namespace

Tensor relational_aggregate(const RelationalAdjacency& adj, const Tensor& feats,
                            const std::vector<Tensor>& weights_t) {
  check_feats(adj, feats);
  if (weights_t.size() != adj.num_relations()) {
    throw DimError("aggregate: got " + std::to_string(weights_t.size()) + " weights for " +
                   std::to_string(adj.num_relations()) + " relations");
  }
  const std::size_t din = feats.cols();
  const std::size_t dout = weights_t.empty() ? 0 : weights_t[0].cols();
  for (const Tensor& w : weights_t) {
    if (w.rows() != din || w.cols() != dout) {
      throw DimError("aggregate: weight shape mismatch");
    }
  }
  Tensor out = Tensor::zeros({adj.num_nodes, dout});
  std::vector<double> agg, rows;
  for (std::size_t r = 0; r < adj.num_relations(); ++r) {
    const auto& b = adj.blocks[r];
    if (b.targets.empty()) continue;
    aggregate_rows(b, feats.values().data(), din, agg);
    rows.assign(b.targets.size() * dout, 0.0);
    MapM(rows.data(), b.targets.size(), dout).noalias() =
        CMapM(agg.data(), b.targets.size(), din) * CMapM(weights_t[r].values().data(), din, dout);
    add_rows_at(out.mutable_values(), dout, b.targets, rows);
  }

  Tape* tape = Tape::active();
  bool rg = feats.requires_grad();
  for (const Tensor& w : weights_t) rg = rg || w.requires_grad();
  if (tape && rg) {
    out.set_requires_grad(true);
    std::vector<NodePtr> keep{feats.node_ptr(), out.node_ptr()};
    std::vector<NodePtr> wn;
    for (const Tensor& w : weights_t) {
      keep.push_back(w.node_ptr());
      wn.push_back(w.node_ptr());
    }
    NodePtr fn = feats.node_ptr();
    const RelationalAdjacency* a = &adj;
    tape->record({std::move(keep), out.node(),
                  [a, fn, wn, din, dout](const std::vector<double>& go, Adjoints& adj_map) {
                    std::vector<double> agg, gt, s;
                    for (std::size_t r = 0; r < a->num_relations(); ++r) {
                      const auto& b = a->blocks[r];
                      if (b.targets.empty()) continue;
                      gather_rows_at(go, dout, b.targets, gt);
                      const std::size_t nt = b.targets.size();
                      if (wn[r]->requires_grad) {
                        aggregate_rows(b, fn->data.data(), din, agg);
                        MapM(adj_map.at(wn[r].get()).data(), din, dout).noalias() +=
                            CMapM(agg.data(), nt, din).transpose() * CMapM(gt.data(), nt, dout);
                      }
                      if (fn->requires_grad) {
                        s.assign(nt * din, 0.0);
                        MapM(s.data(), nt, din).noalias() =
                            CMapM(gt.data(), nt, dout) *
                            CMapM(wn[r]->data.data(), din, dout).transpose();
                        scatter_rows(b, s, din, adj_map.at(fn.get()));
                      }
                    }
                  }});
  }
  return out;
}

Tensor relational_aggregate_basis(const RelationalAdjacency& adj, const Tensor& feats,
                                  const Tensor& coeffs, const std::vector<Tensor>& bases_t) {
  check_feats(adj, feats);
  const std::size_t nb = bases_t.size();
  if (nb == 0 || coeffs.rows() != adj.num_relations() || coeffs.cols() != nb) {
    throw DimError("aggregate_basis: coefficient shape mismatch");
  }
  const std::size_t din = feats.cols();
  const std::size_t dout = bases_t[0].cols();
  for (const Tensor& b : bases_t) {
    if (b.rows() != din || b.cols() != dout) throw DimError("aggregate_basis: basis shape");
  }

  Tensor out = Tensor::zeros({adj.num_nodes, dout});
  std::vector<double> agg, rows, w;
  for (std::size_t r = 0; r < adj.num_relations(); ++r) {
    const auto& b = adj.blocks[r];
    if (b.targets.empty()) continue;
    aggregate_rows(b, feats.values().data(), din, agg);
    compose_weight_t(coeffs, bases_t, r, w);
    rows.assign(b.targets.size() * dout, 0.0);
    MapM(rows.data(), b.targets.size(), dout).noalias() =
        CMapM(agg.data(), b.targets.size(), din) * CMapM(w.data(), din, dout);
    add_rows_at(out.mutable_values(), dout, b.targets, rows);
  }

  Tape* tape = Tape::active();
  bool rg = feats.requires_grad() || coeffs.requires_grad();
  for (const Tensor& b : bases_t) rg = rg || b.requires_grad();
  if (tape && rg) {
    out.set_requires_grad(true);
    std::vector<NodePtr> keep{feats.node_ptr(), coeffs.node_ptr(), out.node_ptr()};
    std::vector<NodePtr> bn;
    for (const Tensor& b : bases_t) {
      keep.push_back(b.node_ptr());
      bn.push_back(b.node_ptr());
    }
    NodePtr fn = feats.node_ptr();
    NodePtr cn = coeffs.node_ptr();
    const RelationalAdjacency* a = &adj;
    Tensor coeffs_copy = coeffs;            // values needed in backward
    std::vector<Tensor> bases_copy = bases_t;
    tape->record(
        {std::move(keep), out.node(),
         [a, fn, cn, bn, coeffs_copy, bases_copy, din,
          dout](const std::vector<double>& go, Adjoints& adj_map) {
           const std::size_t nb = bn.size();
           std::vector<double> agg, gt, s, w, gr(din * dout);
           bool bases_rg = false;
           for (const NodePtr& p : bn) bases_rg = bases_rg || p->requires_grad;
           for (std::size_t r = 0; r < a->num_relations(); ++r) {
             const auto& blk = a->blocks[r];
             if (blk.targets.empty()) continue;
             gather_rows_at(go, dout, blk.targets, gt);
             const std::size_t nt = blk.targets.size();
             if (bases_rg || cn->requires_grad) {
               aggregate_rows(blk, fn->data.data(), din, agg);
               MapM grm(gr.data(), din, dout);
               grm.noalias() =
                   CMapM(agg.data(), nt, din).transpose() * CMapM(gt.data(), nt, dout);
               for (std::size_t b = 0; b < nb; ++b) {
                 const double c = coeffs_copy.values()[r * nb + b];
                 if (bn[b]->requires_grad && c != 0.0) {
                   std::vector<double>& gb = adj_map.at(bn[b].get());
                   for (std::size_t i = 0; i < gr.size(); ++i) gb[i] += c * gr[i];
                 }
                 if (cn->requires_grad) {
                   const std::vector<double>& base = bases_copy[b].values();
                   double dot = 0.0;
                   for (std::size_t i = 0; i < gr.size(); ++i) dot += gr[i] * base[i];
                   adj_map.at(cn.get())[r * nb + b] += dot;
                 }
               }
             }
             if (fn->requires_grad) {
               compose_weight_t(coeffs_copy, bases_copy, r, w);
               s.assign(nt * din, 0.0);
               MapM(s.data(), nt, din).noalias() =
                   CMapM(gt.data(), nt, dout) * CMapM(w.data(), din, dout).transpose();
               scatter_rows(blk, s, din, adj_map.at(fn.get()));
             }
           }
         }});
  }
  return out;
}

Tensor onehot_aggregate_basis(const RelationalAdjacency& adj, const Tensor& coeffs,
                              const std::vector<Tensor>& emb_bases) {
  const std::size_t nb = emb_bases.size();
  if (nb == 0 || coeffs.rows() != adj.num_relations() || coeffs.cols() != nb) {
    throw DimError("onehot_aggregate: coefficient shape mismatch");
  }
  const std::size_t dout = emb_bases[0].cols();
  for (const Tensor& b : emb_bases) {
    if (b.rows() != adj.num_nodes || b.cols() != dout) {
      throw DimError("onehot_aggregate: embedding shape mismatch");
    }
  }

  Tensor out = Tensor::zeros({adj.num_nodes, dout});
  std::vector<double> mixed;
  for (std::size_t r = 0; r < adj.num_relations(); ++r) {
    const auto& blk = adj.blocks[r];
    if (blk.targets.empty()) continue;
    // mix basis rows once per distinct source, then sweep the edges
    mixed.assign(blk.unique_sources.size() * dout, 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
      const double c = coeffs.values()[r * nb + b];
      if (c == 0.0) continue;
      const std::vector<double>& emb = emb_bases[b].values();
      for (std::size_t u = 0; u < blk.unique_sources.size(); ++u) {
        const double* src = emb.data() + static_cast<std::size_t>(blk.unique_sources[u]) * dout;
        double* dst = mixed.data() + u * dout;
        for (std::size_t j = 0; j < dout; ++j) dst[j] += c * src[j];
      }
    }
    std::vector<double>& ov = out.mutable_values();
    for (std::size_t t = 0; t < blk.targets.size(); ++t) {
      double* dst = ov.data() + static_cast<std::size_t>(blk.targets[t]) * dout;
      const double c = blk.norm[t];
      for (std::uint32_t e = blk.offsets[t]; e < blk.offsets[t + 1]; ++e) {
        const double* src = mixed.data() + static_cast<std::size_t>(blk.source_pos[e]) * dout;
        for (std::size_t j = 0; j < dout; ++j) dst[j] += c * src[j];
      }
    }
  }

  Tape* tape = Tape::active();
  bool rg = coeffs.requires_grad();
  for (const Tensor& b : emb_bases) rg = rg || b.requires_grad();
  if (tape && rg) {
    out.set_requires_grad(true);
    std::vector<NodePtr> keep{coeffs.node_ptr(), out.node_ptr()};
    std::vector<NodePtr> bn;
    for (const Tensor& b : emb_bases) {
      keep.push_back(b.node_ptr());
      bn.push_back(b.node_ptr());
    }
    NodePtr cn = coeffs.node_ptr();
    const RelationalAdjacency* a = &adj;
    Tensor coeffs_copy = coeffs;
    std::vector<Tensor> emb_copy = emb_bases;
    tape->record(
        {std::move(keep), out.node(),
         [a, cn, bn, coeffs_copy, emb_copy, dout](const std::vector<double>& go,
                                                  Adjoints& adj_map) {
           const std::size_t nb = bn.size();
           std::vector<double> s;
           for (std::size_t r = 0; r < a->num_relations(); ++r) {
             const auto& blk = a->blocks[r];
             if (blk.targets.empty()) continue;
             // adjoint of the mixed source rows
             s.assign(blk.unique_sources.size() * dout, 0.0);
             for (std::size_t t = 0; t < blk.targets.size(); ++t) {
               const double* gr = go.data() + static_cast<std::size_t>(blk.targets[t]) * dout;
               const double c = blk.norm[t];
               for (std::uint32_t e = blk.offsets[t]; e < blk.offsets[t + 1]; ++e) {
                 double* dst = s.data() + static_cast<std::size_t>(blk.source_pos[e]) * dout;
                 for (std::size_t j = 0; j < dout; ++j) dst[j] += c * gr[j];
               }
             }
             for (std::size_t b = 0; b < nb; ++b) {
               const double c = coeffs_copy.values()[r * nb + b];
               const std::vector<double>& emb = emb_copy[b].values();
               if (bn[b]->requires_grad && c != 0.0) {
                 std::vector<double>& gb = adj_map.at(bn[b].get());
                 for (std::size_t u = 0; u < blk.unique_sources.size(); ++u) {
                   double* dst =
                       gb.data() + static_cast<std::size_t>(blk.unique_sources[u]) * dout;
                   const double* src = s.data() + u * dout;
                   for (std::size_t j = 0; j < dout; ++j) dst[j] += c * src[j];
                 }
               }
               if (cn->requires_grad) {
                 double dot = 0.0;
                 for (std::size_t u = 0; u < blk.unique_sources.size(); ++u) {
                   const double* er =
                       emb.data() + static_cast<std::size_t>(blk.unique_sources[u]) * dout;
                   const double* sr = s.data() + u * dout;
                   for (std::size_t j = 0; j < dout; ++j) dot += er[j] * sr[j];
                 }
                 adj_map.at(cn.get())[r * nb + b] += dot;
               }
             }
           }
         }});
  }
  return out;
}

}  // namespace mperl
