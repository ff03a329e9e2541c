#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "mperl/error.hpp"
#include "mperl/loss.hpp"
#include "mperl/model.hpp"
#include "mperl/rng.hpp"
#include "test_util.hpp"

using namespace mperl;
using testutil::check_gradients;
using testutil::close;
using testutil::random_tensor;

namespace {

KnowledgeGraph tiny_graph() {
  // 4 nodes, 2 original relations; node 3 is isolated
  KnowledgeGraph kg;
  for (int i = 0; i < 4; ++i) {
    kg.entity_names.push_back("n" + std::to_string(i));
    kg.entity_index.emplace("n" + std::to_string(i), i);
  }
  kg.relation_names = {"r0", "r1"};
  kg.relation_index = {{"r0", 0}, {"r1", 1}};
  kg.triples = {{0, 0, 1}, {2, 0, 1}, {1, 1, 2}, {0, 1, 2}};
  return kg;
}

HyperParams tiny_hp(std::size_t classes = 3, std::size_t steps = 3) {
  HyperParams hp;
  hp.num_layers = 2;
  hp.hidden = 5;
  hp.num_classes = classes;
  hp.num_bases = 2;
  hp.max_steps = steps;
  hp.lambda_p = 0.4;
  return hp;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// dense single-step reference: the input layer acts on the concatenation
// of a one-hot encoding with the previous hidden state
struct DenseStep {
  std::vector<std::vector<double>> hidden;  // nodes × dL
  std::vector<double> lambda;
};

DenseStep dense_step_oracle(const KnowledgeGraph& kg, const RelationalAdjacency& adj,
                            const ModelParams& p, const HyperParams& hp,
                            const std::vector<std::vector<double>>& h_prev) {
  const std::size_t n = kg.num_entities();
  const std::size_t d1 = hp.layer_width(0);
  const std::size_t dl = hp.resolved_last_hidden();
  const std::size_t in_w = n + dl;

  // full concatenated input-layer weights, d1 × (n + dL)
  std::vector<Tensor> w0;
  for (std::size_t r = 0; r < adj.num_relations(); ++r) {
    w0.push_back(compose_weight(p, hp, r, 0));
  }
  auto concat_input = [&](std::size_t j) {
    std::vector<double> x(in_w, 0.0);
    x[j] = 1.0;
    for (std::size_t d = 0; d < dl; ++d) x[n + d] = h_prev[j][d];
    return x;
  };
  auto apply = [&](const Tensor& w, const std::vector<double>& x) {
    std::vector<double> out(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < x.size(); ++j) out[i] += w(i, j) * x[j];
    }
    return out;
  };

  std::vector<std::vector<double>> z(n, std::vector<double>(d1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < adj.num_relations(); ++r) {
      auto nbrs = adj.neighbors(r, static_cast<std::uint32_t>(i));
      if (nbrs.empty()) continue;
      const double c = 1.0 / static_cast<double>(nbrs.size());
      for (std::uint32_t j : nbrs) {
        auto msg = apply(w0[r], concat_input(j));
        for (std::size_t d = 0; d < d1; ++d) z[i][d] += c * msg[d];
      }
    }
    // self-loop: embedding row plus dense transform of the previous hidden
    for (std::size_t d = 0; d < d1; ++d) z[i][d] += p.self_emb(i, d);
    for (std::size_t a = 0; a < dl; ++a) {
      for (std::size_t d = 0; d < d1; ++d) z[i][d] += h_prev[i][a] * p.self_hid(a, d);
    }
    for (double& v : z[i]) v = std::max(0.0, v);
  }

  std::vector<Tensor> w1;
  for (std::size_t r = 0; r < adj.num_relations(); ++r) {
    w1.push_back(compose_weight(p, hp, r, 1));
  }
  DenseStep out;
  out.hidden.assign(n, std::vector<double>(dl, 0.0));
  out.lambda.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < adj.num_relations(); ++r) {
      auto nbrs = adj.neighbors(r, static_cast<std::uint32_t>(i));
      if (nbrs.empty()) continue;
      const double c = 1.0 / static_cast<double>(nbrs.size());
      for (std::uint32_t j : nbrs) {
        auto msg = apply(w1[r], z[j]);
        for (std::size_t d = 0; d < dl; ++d) out.hidden[i][d] += c * msg[d];
      }
    }
    for (std::size_t a = 0; a < hp.layer_width(0); ++a) {
      for (std::size_t d = 0; d < dl; ++d) {
        out.hidden[i][d] += z[i][a] * p.layer_self[0](a, d);
      }
    }
    double dot = 0.0;
    for (std::size_t d = 0; d < dl; ++d) {
      out.hidden[i][d] = std::max(0.0, out.hidden[i][d]);
      dot += out.hidden[i][d] * p.halting.values()[d];
    }
    out.lambda[i] = sigmoid_ref(dot);
  }
  return out;
}

}  // namespace

TEST_CASE("init is deterministic and bounded") {
  HyperParams hp = tiny_hp();
  ModelParams a = init_params(hp, 10, 4, 99);
  ModelParams b = init_params(hp, 10, 4, 99);
  auto an = a.named(), bn = b.named();
  REQUIRE(an.size() == bn.size());
  for (std::size_t i = 0; i < an.size(); ++i) {
    CHECK(an[i].second.values() == bn[i].second.values());
    for (double v : an[i].second.values()) CHECK(std::abs(v) < 1.0);
  }
  ModelParams c = init_params(hp, 10, 4, 100);
  CHECK(c.coeffs0.values() != a.coeffs0.values());
}

TEST_CASE("basis mixing composes relation weights") {
  HyperParams hp = tiny_hp();
  hp.num_bases = 2;
  ModelParams p = init_params(hp, 4, 3, 7);

  SUBCASE("unit coefficient selects one basis") {
    p.layer_coeffs[0] = Tensor::from_data({3, 2}, {1, 0, 0, 1, 0, 0});
    Tensor w0 = compose_weight(p, hp, 0, 1);
    const Tensor& v0 = p.layer_bases[0][0];
    for (std::size_t i = 0; i < w0.rows(); ++i) {
      for (std::size_t j = 0; j < w0.cols(); ++j) {
        CHECK(close(w0(i, j), v0(j, i), 1e-15));  // stored transposed
      }
    }
  }
  SUBCASE("zero coefficients give the zero matrix") {
    p.layer_coeffs[0] = Tensor::zeros({3, 2});
    Tensor w = compose_weight(p, hp, 2, 1);
    for (double v : w.values()) CHECK(v == 0.0);
  }
  SUBCASE("half-half mix of I and 2I") {
    HyperParams square = tiny_hp();
    square.num_bases = 2;
    square.hidden = 3;  // layer 1 becomes 3x3
    ModelParams q = init_params(square, 4, 3, 7);
    std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::vector<double> eye2 = {2, 0, 0, 0, 2, 0, 0, 0, 2};
    q.layer_bases[0][0] = Tensor::from_data({3, 3}, eye);
    q.layer_bases[0][1] = Tensor::from_data({3, 3}, eye2);
    q.layer_coeffs[0] = Tensor::from_data({3, 2}, {0.5, 0.5, 0, 0, 0, 0});
    Tensor w = compose_weight(q, square, 0, 1);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(close(w(i, j), i == j ? 1.5 : 0.0, 1e-15));
      }
    }
  }
  SUBCASE("single basis collapses to a scaled basis") {
    HyperParams hb = tiny_hp();
    hb.num_bases = 1;
    ModelParams q = init_params(hb, 4, 3, 7);
    Tensor w = compose_weight(q, hb, 1, 1);
    const double a = q.layer_coeffs[0](1, 0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        CHECK(close(w(i, j), a * q.layer_bases[0][0](j, i), 1e-15));
      }
    }
  }
}

TEST_CASE("markov step matches the dense concatenation oracle") {
  KnowledgeGraph kg = tiny_graph();
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp();
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 13);
  const std::size_t n = kg.num_entities();
  const std::size_t dl = hp.resolved_last_hidden();

  // two chained steps so the hidden-state path is exercised as well
  std::vector<std::vector<double>> h_prev(n, std::vector<double>(dl, 0.0));
  Tensor h_prev_t = Tensor::zeros({n, dl});
  for (int step = 0; step < 2; ++step) {
    StepResult got = markov_step(p, hp, adj, h_prev_t);
    DenseStep want = dense_step_oracle(kg, adj, p, hp, h_prev);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dl; ++d) {
        CHECK(close(got.hidden(i, d), want.hidden[i][d], 1e-10));
      }
      CHECK(close(got.halting_prob.values()[i], want.lambda[i], 1e-10));
    }
    h_prev_t = got.hidden;
    h_prev = want.hidden;
  }
}

TEST_CASE("zero halting projection gives lambda one half") {
  KnowledgeGraph kg = tiny_graph();
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp();
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 5);
  p.halting = Tensor::zeros({hp.resolved_last_hidden(), 1}, true);
  StepResult step = markov_step(p, hp, adj, Tensor::zeros({4, hp.resolved_last_hidden()}));
  for (double v : step.halting_prob.values()) CHECK(v == 0.5);
}

TEST_CASE("isolated node is driven by its self-loop path alone") {
  KnowledgeGraph kg = tiny_graph();
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp();
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 21);
  StepResult step = markov_step(p, hp, adj, Tensor::zeros({4, hp.resolved_last_hidden()}));

  // node 3 has no neighbors in either direction: layer-0 output is just
  // relu(self-embedding row), then the layer-1 self transform
  const std::size_t d1 = hp.layer_width(0);
  std::vector<double> z(d1);
  for (std::size_t d = 0; d < d1; ++d) z[d] = std::max(0.0, p.self_emb(3, d));
  for (std::size_t c = 0; c < hp.resolved_last_hidden(); ++c) {
    double acc = 0.0;
    for (std::size_t d = 0; d < d1; ++d) acc += z[d] * p.layer_self[0](d, c);
    CHECK(close(step.hidden(3, c), std::max(0.0, acc), 1e-12));
  }
}

TEST_CASE("halting distribution reference values") {
  auto lam = [](std::initializer_list<double> vs) {
    std::vector<Tensor> out;
    for (double v : vs) out.push_back(Tensor::from_data({1, 1}, {v}));
    return out;
  };
  SUBCASE("half-half with truncation") {
    auto ps = halting_distribution(lam({0.5, 0.5, 1.0}));
    CHECK(close(ps[0].item(), 0.5));
    CHECK(close(ps[1].item(), 0.25));
    CHECK(close(ps[2].item(), 0.25));
  }
  SUBCASE("single step") {
    auto ps = halting_distribution(lam({1.0}));
    CHECK(ps.size() == 1);
    CHECK(ps[0].item() == 1.0);
  }
  SUBCASE("hand-evaluated chain") {
    auto ps = halting_distribution(lam({0.2, 0.3, 1.0}));
    CHECK(close(ps[0].item(), 0.2));
    CHECK(close(ps[1].item(), 0.24));
    CHECK(close(ps[2].item(), 0.56));
  }
  SUBCASE("mass sums to one for random rates") {
    Rng rng(4);
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t n = 1 + rng.index(7);
      std::vector<Tensor> lambdas;
      for (std::size_t s = 0; s + 1 < n; ++s) {
        lambdas.push_back(random_tensor({6, 1}, rng, 1e-4, 1.0, false));
      }
      lambdas.push_back(Tensor::full({6, 1}, 1.0));
      auto ps = halting_distribution(lambdas);
      for (std::size_t row = 0; row < 6; ++row) {
        double sum = 0.0;
        for (const Tensor& p : ps) sum += p.values()[row];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("hidden aggregation weights steps by their halting rate") {
  std::vector<Tensor> hiddens = {Tensor::from_data({1, 1}, {2.0}),
                                 Tensor::from_data({1, 1}, {4.0})};
  std::vector<Tensor> lambdas = {Tensor::from_data({1, 1}, {0.5}),
                                 Tensor::from_data({1, 1}, {1.0})};
  CHECK(close(aggregate_hidden(hiddens, lambdas, 2).item(), 5.0));
  CHECK(close(aggregate_hidden(hiddens, lambdas, 1).item(), 1.0));

  std::vector<Tensor> zero_l = {Tensor::zeros({1, 1}), Tensor::zeros({1, 1})};
  CHECK(aggregate_hidden(hiddens, zero_l, 2).item() == 0.0);

  std::vector<Tensor> one = {Tensor::from_data({1, 1}, {7.0})};
  std::vector<Tensor> lone = {Tensor::from_data({1, 1}, {1.0})};
  CHECK(aggregate_hidden(one, lone, 1).item() == 7.0);
}

TEST_CASE("dirichlet head reference values") {
  HyperParams hp = tiny_hp(4);
  ModelParams p;  // no projection: the head consumes the features directly

  SUBCASE("negative activations collapse to the uniform prior") {
    DirichletOutput out = dirichlet_head(p, Tensor::from_data({1, 4}, {-1, -2, -3, -4}));
    for (double a : out.alpha.values()) CHECK(a == 1.0);
    for (double y : out.yhat.values()) CHECK(close(y, 0.25));
    CHECK(out.strength.item() == 4.0);
  }
  SUBCASE("hand-evaluated two-class head") {
    DirichletOutput out = dirichlet_head(p, Tensor::from_data({1, 2}, {1.0, 0.0}));
    CHECK(close(out.alpha.values()[0], 2.0));
    CHECK(close(out.alpha.values()[1], 1.0));
    CHECK(close(out.yhat.values()[0], 2.0 / 3.0));
    CHECK(close(out.yhat.values()[1], 1.0 / 3.0));
  }
  SUBCASE("rows always sum to one and alpha stays at least one") {
    Rng rng(9);
    Tensor h = random_tensor({20, 5}, rng, -3, 3, false);
    DirichletOutput out = dirichlet_head(p, h);
    for (std::size_t i = 0; i < 20; ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        CHECK(out.alpha(i, k) >= 1.0);
        sum += out.yhat(i, k);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("forward trace properties") {
  KnowledgeGraph kg = tiny_graph();
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp();
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 3);

  ForwardResult fwd = forward(p, hp, adj);
  CHECK(fwd.trace.executed_steps() == 3);
  CHECK(fwd.step_outputs.size() == 3);
  for (double v : fwd.trace.lambdas.back().values()) CHECK(v == 1.0);
  for (std::size_t i = 0; i < kg.num_entities(); ++i) {
    double sum = 0.0;
    for (const Tensor& ps : fwd.trace.ps) sum += ps.values()[i];
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }

  // bitwise determinism of a repeated pass
  ForwardResult again = forward(p, hp, adj);
  const auto& a = fwd.final_output().yhat.values();
  const auto& b = again.final_output().yhat.values();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("single-step forward equals the plain evidential pass") {
  KnowledgeGraph kg = tiny_graph();
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp(3, 1);  // one Markov step
  hp.lambda_p = 1.0;
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 77);

  ForwardResult fwd = forward(p, hp, adj);
  REQUIRE(fwd.trace.executed_steps() == 1);

  const std::size_t n = kg.num_entities();
  const std::size_t dl = hp.resolved_last_hidden();
  std::vector<std::vector<double>> h0(n, std::vector<double>(dl, 0.0));
  DenseStep ref = dense_step_oracle(kg, adj, p, hp, h0);
  for (std::size_t i = 0; i < n; ++i) {
    // aggregated feature is h1 itself (the truncation step halts surely)
    double ssum = 0.0;
    std::vector<double> alpha(dl);
    for (std::size_t d = 0; d < dl; ++d) {
      alpha[d] = std::max(0.0, ref.hidden[i][d]) + 1.0;
      ssum += alpha[d];
    }
    std::size_t best = 0;
    for (std::size_t d = 0; d < dl; ++d) {
      CHECK(close(fwd.final_output().yhat(i, d), alpha[d] / ssum, 1e-12));
      if (alpha[d] > alpha[best]) best = d;
    }
    const double* row = fwd.final_output().yhat.values().data() + i * dl;
    const std::size_t got = std::max_element(row, row + dl) - row;
    CHECK(got == best);
  }
}

TEST_CASE("end-to-end gradients match finite differences on a small fixture") {
  KnowledgeGraph kg = tiny_graph();
  kg.class_names = {"c0", "c1", "c2"};
  kg.class_index = {{"c0", 0}, {"c1", 1}, {"c2", 2}};
  kg.labeled = {{0, {0}, Split::Train}, {1, {1}, Split::Train}, {2, {2}, Split::Train}};
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp(3, 2);
  hp.num_classes = 3;
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 123);

  LossConfig cfg;
  cfg.lambda_p = hp.lambda_p;
  std::vector<std::size_t> rows = {0, 1, 2};
  Tensor y = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});

  auto loss_fn = [&] {
    ForwardResult fwd = forward(p, hp, adj, rows);
    return total_loss(fwd, rows, y, cfg, 5, p).total;
  };
  check_gradients(loss_fn, p.all(), 1e-4, 1e-6);
}

TEST_CASE("checkpoint round-trips parameters and hyperparameters") {
  HyperParams hp = tiny_hp();
  hp.mode = TaskMode::SingleLabel;
  ModelParams p = init_params(hp, 6, 4, 55);
  const std::string path = "test_tmp_ckpt.bin";
  save_checkpoint(p, hp, path);
  auto [q, hq] = load_checkpoint(path);
  CHECK(hq.num_layers == hp.num_layers);
  CHECK(hq.hidden == hp.hidden);
  CHECK(hq.max_steps == hp.max_steps);
  CHECK(hq.lambda_p == hp.lambda_p);
  auto pn = p.named(), qn = q.named();
  REQUIRE(pn.size() == qn.size());
  for (std::size_t i = 0; i < pn.size(); ++i) {
    CHECK(pn[i].first == qn[i].first);
    CHECK(pn[i].second.shape() == qn[i].second.shape());
    CHECK(pn[i].second.values() == qn[i].second.values());
  }
  std::remove(path.c_str());
}

TEST_CASE("sampled halting stays within the horizon and is seed-stable") {
  KnowledgeGraph kg = tiny_graph();
  RelationalAdjacency adj = RelationalAdjacency::build(kg, true);
  HyperParams hp = tiny_hp();
  ModelParams p = init_params(hp, kg.num_entities(), adj.num_relations(), 31);
  Rng r1(42), r2(42);
  SampledForward a = forward_sampled(p, hp, adj, r1);
  SampledForward b = forward_sampled(p, hp, adj, r2);
  CHECK(a.halt_step == b.halt_step);
  for (std::size_t s : a.halt_step) {
    CHECK(s >= 1);
    CHECK(s <= hp.resolved_steps());
  }
  CHECK(a.yhat.values() == b.yhat.values());
}
