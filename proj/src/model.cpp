#include "mperl/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mperl/error.hpp"

namespace mperl {

namespace {

Tensor glorot(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
              Rng& rng) {
  // capped so every initial value stays inside (-1, 1) even for tiny fans
  const double limit = std::min(1.0, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_values()) v = rng.uniform(-limit, limit);
  return t;
}

constexpr char kCkptMagic[8] = {'M', 'P', 'C', 'K', '0', '0', '0', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(d));
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

double get_f64(std::istream& in) {
  std::uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

std::size_t HyperParams::resolved_last_hidden() const {
  return last_hidden > 0 ? last_hidden : num_classes;
}

std::size_t HyperParams::resolved_steps() const {
  if (max_steps > 0) return max_steps;
  return static_cast<std::size_t>(
      std::max<long long>(1, std::llround(1.0 / lambda_p)));
}

std::size_t HyperParams::resolved_bases(std::size_t num_relations) const {
  if (num_bases > 0) return num_bases;
  return std::max<std::size_t>(1, std::min<std::size_t>(num_relations, 40));
}

std::size_t HyperParams::layer_width(std::size_t layer) const {
  return layer + 1 == num_layers ? resolved_last_hidden() : hidden;
}

void HyperParams::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
  if (!(lambda_p > 0.0 && lambda_p <= 1.0)) throw ConfigError("lambda_p: must be in (0,1]");
  if (beta < 0.0) throw ConfigError("beta: must be >= 0");
  if (num_layers < 1) throw ConfigError("num_layers: must be >= 1");
  if (num_layers > 1 && hidden < 1) throw ConfigError("hidden: must be >= 1");
  if (resolved_steps() < 1) throw ConfigError("max_steps: must be >= 1");
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t b = 0; b < emb_bases.size(); ++b) {
    out.emplace_back("input.emb_basis." + std::to_string(b), emb_bases[b]);
  }
  for (std::size_t b = 0; b < hid_bases.size(); ++b) {
    out.emplace_back("input.hid_basis." + std::to_string(b), hid_bases[b]);
  }
  out.emplace_back("input.coeffs", coeffs0);
  out.emplace_back("input.self_emb", self_emb);
  out.emplace_back("input.self_hid", self_hid);
  for (std::size_t l = 0; l < layer_bases.size(); ++l) {
    for (std::size_t b = 0; b < layer_bases[l].size(); ++b) {
      out.emplace_back("layer" + std::to_string(l + 1) + ".basis." + std::to_string(b),
                       layer_bases[l][b]);
    }
    out.emplace_back("layer" + std::to_string(l + 1) + ".coeffs", layer_coeffs[l]);
    out.emplace_back("layer" + std::to_string(l + 1) + ".self", layer_self[l]);
  }
  out.emplace_back("halting", halting);
  if (class_proj.defined()) out.emplace_back("class_proj", class_proj);
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams init_params(const HyperParams& hp, std::size_t num_entities,
                        std::size_t num_relations, std::uint64_t seed) {
  hp.validate();
  Rng rng(seed);
  ModelParams p;
  const std::size_t d1 = hp.layer_width(0);
  const std::size_t dl = hp.resolved_last_hidden();
  const std::size_t nb = hp.resolved_bases(num_relations);
  const std::size_t fan_in0 = num_entities + dl;  // concatenated input width

  p.emb_bases.reserve(nb);
  p.hid_bases.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    p.emb_bases.push_back(glorot({num_entities, d1}, fan_in0, d1, rng));
    p.hid_bases.push_back(glorot({dl, d1}, fan_in0, d1, rng));
  }
  p.coeffs0 = glorot({num_relations, nb}, num_relations, nb, rng);
  p.self_emb = glorot({num_entities, d1}, fan_in0, d1, rng);
  p.self_hid = glorot({dl, d1}, fan_in0, d1, rng);

  for (std::size_t l = 1; l < hp.num_layers; ++l) {
    const std::size_t din = hp.layer_width(l - 1);
    const std::size_t dout = hp.layer_width(l);
    std::vector<Tensor> bases;
    bases.reserve(nb);
    for (std::size_t b = 0; b < nb; ++b) bases.push_back(glorot({din, dout}, din, dout, rng));
    p.layer_bases.push_back(std::move(bases));
    p.layer_coeffs.push_back(glorot({num_relations, nb}, num_relations, nb, rng));
    p.layer_self.push_back(glorot({din, dout}, din, dout, rng));
  }

  p.halting = glorot({dl, 1}, dl, 1, rng);
  if (dl != hp.num_classes) {
    p.class_proj = glorot({dl, hp.num_classes}, dl, hp.num_classes, rng);
  }
  return p;
}

Tensor compose_weight(const ModelParams& params, const HyperParams& hp, std::size_t relation,
                      std::size_t layer) {
  const Tensor& coeffs = layer == 0 ? params.coeffs0 : params.layer_coeffs.at(layer - 1);
  if (relation >= coeffs.rows()) throw ContractError("compose_weight: relation out of range");
  const std::size_t nb = coeffs.cols();
  auto mix_transposed = [&](const std::vector<Tensor>& bases) {
    // stored d_in × d_out; emit d_out × d_in
    const std::size_t din = bases[0].rows(), dout = bases[0].cols();
    Tensor w = Tensor::zeros({dout, din});
    for (std::size_t b = 0; b < nb; ++b) {
      const double c = coeffs(relation, b);
      for (std::size_t i = 0; i < din; ++i) {
        for (std::size_t j = 0; j < dout; ++j) {
          w.mutable_values()[j * din + i] += c * bases[b](i, j);
        }
      }
    }
    return w;
  };
  if (layer == 0) {
    Tensor emb = mix_transposed(params.emb_bases);  // d1 × nodes
    Tensor hid = mix_transposed(params.hid_bases);  // d1 × dL
    return concat_cols(emb, hid);
  }
  return mix_transposed(params.layer_bases.at(layer - 1));
}

StepResult markov_step(const ModelParams& params, const HyperParams& hp,
                       const RelationalAdjacency& adj, const Tensor& h_prev) {
  const std::size_t dl = hp.resolved_last_hidden();
  if (h_prev.rows() != adj.num_nodes || h_prev.cols() != dl) {
    throw DimError("markov_step: h_prev must be nodes x " + std::to_string(dl));
  }
  Tensor z = onehot_aggregate_basis(adj, params.coeffs0, params.emb_bases);
  z = add(z, relational_aggregate_basis(adj, h_prev, params.coeffs0, params.hid_bases));
  z = add(z, add(params.self_emb, matmul(h_prev, params.self_hid)));
  z = relu(z);
  for (std::size_t l = 1; l < hp.num_layers; ++l) {
    Tensor agg =
        relational_aggregate_basis(adj, z, params.layer_coeffs[l - 1], params.layer_bases[l - 1]);
    z = relu(add(agg, matmul(z, params.layer_self[l - 1])));
  }
  return {z, sigmoid(matmul(z, params.halting))};
}

std::vector<Tensor> halting_distribution(const std::vector<Tensor>& lambdas) {
  if (lambdas.empty()) throw ContractError("halting_distribution: no steps");
  std::vector<Tensor> ps;
  ps.reserve(lambdas.size());
  Tensor survival;  // Π_{s<n} (1 − λ_s)
  for (std::size_t n = 0; n < lambdas.size(); ++n) {
    if (n == 0) {
      ps.push_back(lambdas[0]);
      survival = rsub_scalar(1.0, lambdas[0]);
    } else {
      ps.push_back(mul(lambdas[n], survival));
      if (n + 1 < lambdas.size()) survival = mul(survival, rsub_scalar(1.0, lambdas[n]));
    }
  }
  return ps;
}

Tensor aggregate_hidden(const std::vector<Tensor>& hiddens, const std::vector<Tensor>& lambdas,
                        std::size_t up_to) {
  if (up_to == 0 || up_to > hiddens.size() || hiddens.size() != lambdas.size()) {
    throw ContractError("aggregate_hidden: step range out of bounds");
  }
  Tensor acc = mul_col(hiddens[0], lambdas[0]);
  for (std::size_t s = 1; s < up_to; ++s) acc = add(acc, mul_col(hiddens[s], lambdas[s]));
  return acc;
}

DirichletOutput dirichlet_head(const ModelParams& params, const Tensor& h) {
  Tensor logits = params.class_proj.defined() ? matmul(h, params.class_proj) : h;
  Tensor alpha = add_scalar(relu(logits), 1.0);
  Tensor strength = row_sums(alpha);
  return {alpha, div_col(alpha, strength), strength};
}

ForwardResult forward(const ModelParams& params, const HyperParams& hp,
                      const RelationalAdjacency& adj, const std::vector<std::size_t>& rows) {
  const std::size_t steps = hp.resolved_steps();
  const std::size_t dl = hp.resolved_last_hidden();

  ForwardResult result;
  Tensor h_prev = Tensor::zeros({adj.num_nodes, dl});
  for (std::size_t n = 1; n <= steps; ++n) {
    StepResult step = markov_step(params, hp, adj, h_prev);
    result.trace.hiddens.push_back(step.hidden);
    // the final step is the truncation step: halting is certain there
    result.trace.lambdas.push_back(n < steps ? step.halting_prob
                                             : Tensor::full({adj.num_nodes, 1}, 1.0));
    h_prev = step.hidden;
  }
  result.trace.ps = halting_distribution(result.trace.lambdas);

  Tensor agg;
  for (std::size_t n = 1; n <= steps; ++n) {
    Tensor weighted = mul_col(result.trace.hiddens[n - 1], result.trace.lambdas[n - 1]);
    agg = (n == 1) ? weighted : add(agg, weighted);
    Tensor head_in = rows.empty() ? agg : gather_rows(agg, rows);
    result.step_features.push_back(head_in);
    result.step_outputs.push_back(dirichlet_head(params, head_in));
  }
  result.trace.aggregated = agg;
  return result;
}

SampledForward forward_sampled(const ModelParams& params, const HyperParams& hp,
                               const RelationalAdjacency& adj, Rng& rng) {
  const std::size_t steps = hp.resolved_steps();
  const std::size_t dl = hp.resolved_last_hidden();
  const std::size_t n_nodes = adj.num_nodes;

  SampledForward out;
  out.halt_step.assign(n_nodes, 0);
  Tensor agg = Tensor::zeros({n_nodes, dl});
  Tensor h_prev = Tensor::zeros({n_nodes, dl});
  for (std::size_t n = 1; n <= steps; ++n) {
    StepResult step = markov_step(params, hp, adj, h_prev);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      if (out.halt_step[i] != 0) continue;
      const double lam = n < steps ? step.halting_prob.values()[i] : 1.0;
      for (std::size_t j = 0; j < dl; ++j) {
        agg.mutable_values()[i * dl + j] += lam * step.hidden.values()[i * dl + j];
      }
      if (rng.uniform() < lam) out.halt_step[i] = n;
    }
    h_prev = step.hidden;
  }
  out.yhat = dirichlet_head(params, agg).yhat;
  return out;
}

void save_checkpoint(const ModelParams& params, const HyperParams& hp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write checkpoint " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  put_u64(out, hp.num_layers);
  put_u64(out, hp.hidden);
  put_u64(out, hp.last_hidden);
  put_u64(out, hp.num_bases);
  put_u64(out, hp.max_steps);
  put_u64(out, hp.num_classes);
  put_f64(out, hp.lambda_p);
  put_f64(out, hp.beta);
  put_u64(out, static_cast<std::uint64_t>(hp.mode));

  auto named = params.named();
  // shape manifest first, then the payload
  put_u64(out, named.size());
  for (const auto& [name, t] : named) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.shape().size());
    for (std::size_t d : t.shape()) put_u64(out, d);
  }
  for (const auto& [name, t] : named) {
    for (double v : t.values()) put_f64(out, v);
  }
  if (!out) throw IngestError("write failure on checkpoint " + path);
}

std::pair<ModelParams, HyperParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCkptMagic, 8)) {
    throw IngestError("bad checkpoint header in " + path);
  }
  HyperParams hp;
  hp.num_layers = get_u64(in);
  hp.hidden = get_u64(in);
  hp.last_hidden = get_u64(in);
  hp.num_bases = get_u64(in);
  hp.max_steps = get_u64(in);
  hp.num_classes = get_u64(in);
  hp.lambda_p = get_f64(in);
  hp.beta = get_f64(in);
  hp.mode = static_cast<TaskMode>(get_u64(in));

  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
  };
  std::vector<Entry> manifest(get_u64(in));
  for (Entry& e : manifest) {
    e.name.resize(get_u64(in));
    in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    e.shape.resize(get_u64(in));
    for (std::size_t& d : e.shape) d = get_u64(in);
  }

  ModelParams p;
  for (const Entry& e : manifest) {
    Tensor t = Tensor::zeros(e.shape, true);
    for (double& v : t.mutable_values()) v = get_f64(in);
    if (e.name.starts_with("input.emb_basis.")) {
      p.emb_bases.push_back(t);
    } else if (e.name.starts_with("input.hid_basis.")) {
      p.hid_bases.push_back(t);
    } else if (e.name == "input.coeffs") {
      p.coeffs0 = t;
    } else if (e.name == "input.self_emb") {
      p.self_emb = t;
    } else if (e.name == "input.self_hid") {
      p.self_hid = t;
    } else if (e.name.starts_with("layer")) {
      const std::size_t layer = std::stoul(e.name.substr(5));  // 1-based
      if (p.layer_bases.size() < layer) {
        p.layer_bases.resize(layer);
        p.layer_coeffs.resize(layer);
        p.layer_self.resize(layer);
      }
      if (e.name.find(".basis.") != std::string::npos) {
        p.layer_bases[layer - 1].push_back(t);
      } else if (e.name.ends_with(".coeffs")) {
        p.layer_coeffs[layer - 1] = t;
      } else if (e.name.ends_with(".self")) {
        p.layer_self[layer - 1] = t;
      }
    } else if (e.name == "halting") {
      p.halting = t;
    } else if (e.name == "class_proj") {
      p.class_proj = t;
    } else {
      throw IngestError("unknown checkpoint tensor '" + e.name + "' in " + path);
    }
  }
  if (!in) throw IngestError("truncated checkpoint " + path);
  return {std::move(p), hp};
}

}  // namespace mperl
