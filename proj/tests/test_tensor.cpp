#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "mperl/adam.hpp"
#include "mperl/error.hpp"
#include "mperl/rng.hpp"
#include "mperl/special.hpp"
#include "mperl/tensor.hpp"
#include "test_util.hpp"

using namespace mperl;
using testutil::check_gradients;
using testutil::close;
using testutil::random_tensor;
using testutil::rel_close;

TEST_CASE("tensor construction invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 6);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3, 4}).item(), ContractError);
}

TEST_CASE("relu and sigmoid reference values") {
  Tensor x = Tensor::from_data({3}, {-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.values() == std::vector<double>{0, 0, 2});
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
}

TEST_CASE("digamma reference value at 1") {
  // psi(1) = -Euler-Mascheroni
  CHECK(close(special::digamma(1.0), -0.5772156649015329, 1e-12));
  Tensor d = digamma_t(Tensor::scalar(1.0));
  CHECK(close(d.item(), -0.5772156649015329, 1e-12));
}

TEST_CASE("digamma is the derivative of log-gamma") {
  for (double x = 0.5; x <= 50.0; x += 0.5) {
    const double h = 1e-6 * std::max(1.0, x);
    const double fd = (special::log_gamma(x + h) - special::log_gamma(x - h)) / (2.0 * h);
    CHECK(rel_close(special::digamma(x), fd, 1e-5));
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::domain_error);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), std::domain_error);
  CHECK_THROWS_AS(lgamma_t(Tensor::scalar(-2.0)), std::domain_error);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimError);
}

TEST_CASE("backward on w*w") {
  Tape tape;
  TapeScope scope(tape);
  Tensor w = Tensor::from_data({1}, {3.0}, true);
  Tensor loss = sum_all(mul(w, w));
  tape.backward(loss);
  CHECK(close(w.grad()[0], 6.0));
}

TEST_CASE("backward through sigmoid at zero") {
  Tape tape;
  TapeScope scope(tape);
  const double c = 3.0;
  Tensor z = Tensor::from_data({1}, {0.0}, true);
  Tensor loss = sum_all(scale(sigmoid(z), c));
  tape.backward(loss);
  CHECK(close(z.grad()[0], 0.25 * c));
}

TEST_CASE("backward accumulation is additive") {
  Tape tape;
  Tensor w = Tensor::from_data({2}, {1.5, -2.0}, true);
  Tensor mid, loss;
  {
    TapeScope scope(tape);
    mid = relu(add(mul(w, w), Tensor::from_data({2}, {0.5, 0.5})));
    loss = sum_all(mid);
  }
  tape.backward(loss);
  std::vector<double> g1 = w.grad();
  std::vector<double> m1 = mid.grad();  // interior nodes hold gradients too
  CHECK(!m1.empty());
  tape.backward(loss);  // replay the same tape a second time without reset
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(close(w.grad()[i], 2.0 * g1[i], 1e-12));
  for (std::size_t i = 0; i < m1.size(); ++i) CHECK(close(mid.grad()[i], 2.0 * m1[i], 1e-12));
}

TEST_CASE("non-scalar backward rejected") {
  Tape tape;
  TapeScope scope(tape);
  Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y = mul(w, w);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("finite-difference gradients for every primitive") {
  Rng rng(12345);

  SUBCASE("matmul") {
    Tensor a = random_tensor({3, 4}, rng, -1, 1);
    Tensor b = random_tensor({4, 2}, rng, -1, 1);
    Tensor c = random_tensor({3, 2}, rng, -1, 1, false);
    check_gradients([&] { return sum_all(mul(matmul(a, b), c)); }, {a, b});
  }
  SUBCASE("add sub mul div") {
    Tensor a = random_tensor({2, 3}, rng, 0.5, 2.0);
    Tensor b = random_tensor({2, 3}, rng, 0.5, 2.0);
    check_gradients([&] { return sum_all(div(mul(add(a, b), sub(a, b)), b)); }, {a, b});
  }
  SUBCASE("scalar ops") {
    Tensor a = random_tensor({2, 2}, rng, -1, 1);
    check_gradients([&] { return sum_all(rsub_scalar(1.0, add_scalar(scale(a, 2.5), 0.75))); },
                    {a});
  }
  SUBCASE("relu away from kink") {
    Tensor a = random_tensor({3, 3}, rng, 0.2, 1.0);
    Tensor s = random_tensor({3, 3}, rng, -1.0, -0.2, false);
    check_gradients([&] { return sum_all(add(relu(a), relu(s))); }, {a});
  }
  SUBCASE("sigmoid log lgamma digamma") {
    Tensor a = random_tensor({2, 3}, rng, 0.5, 3.0);
    check_gradients(
        [&] {
          Tensor t = add(log(a), add(lgamma_t(a), digamma_t(a)));
          return mean_all(add(t, sigmoid(a)));
        },
        {a});
  }
  SUBCASE("softmax") {
    Tensor a = random_tensor({3, 4}, rng, -2, 2);
    Tensor c = random_tensor({3, 4}, rng, -1, 1, false);
    check_gradients([&] { return sum_all(mul(softmax_rows(a), c)); }, {a});
  }
  SUBCASE("clamp interior and exterior") {
    Tensor a = Tensor::from_data({4}, {-3.0, 0.3, 0.7, 4.0}, true);
    Tensor c = Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0});
    check_gradients([&] { return sum_all(mul(clamp(a, 0.0, 1.0), c)); }, {a});
  }
  SUBCASE("reductions and column broadcasts") {
    Tensor a = random_tensor({3, 4}, rng, 0.5, 2.0);
    Tensor v = random_tensor({3, 1}, rng, 0.5, 2.0);
    check_gradients(
        [&] {
          Tensor t = mul_col(a, v);
          t = div_col(t, add_scalar(v, 1.0));
          t = sub_col(t, row_sums(scale(a, 0.1)));
          return add(mean_all(t), sum_all(row_sums(t)));
        },
        {a, v});
  }
  SUBCASE("concat and gather") {
    Tensor a = random_tensor({3, 2}, rng, -1, 1);
    Tensor b = random_tensor({3, 3}, rng, -1, 1);
    Tensor c = random_tensor({2, 5}, rng, -1, 1, false);
    check_gradients(
        [&] { return sum_all(mul(gather_rows(concat_cols(a, b), {2, 0}), c)); }, {a, b});
  }
}

TEST_CASE("tape replay determinism is bitwise") {
  auto run = [] {
    Rng rng(777);
    Tape tape;
    TapeScope scope(tape);
    Tensor a = random_tensor({4, 4}, rng, -1, 1);
    Tensor b = random_tensor({4, 4}, rng, -1, 1);
    Tensor loss = mean_all(sigmoid(matmul(a, relu(b))));
    tape.backward(loss);
    return std::pair<double, std::vector<double>>(loss.item(), a.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("adam reference behavior") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    p.ensure_grad();
    Adam opt({p});
    std::vector<double> before = p.values();
    opt.step();
    CHECK(p.values() == before);
  }
  SUBCASE("first step with unit gradient moves by ~lr") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    p.ensure_grad();
    Tensor one = Tensor::scalar(1.0);
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum_all(mul(p, one)));
    }
    Adam::Options o;
    o.lr = 0.1;
    Adam opt({p}, o);
    opt.step();
    // m_hat = 1, v_hat = 1 after bias correction; update = lr/(1+eps)
    CHECK(std::abs(p.values()[0] - (1.0 - 0.1)) < 1e-6);
  }
  SUBCASE("identical parameters receive identical updates") {
    Tensor p1 = Tensor::from_data({2}, {0.3, -0.7}, true);
    Tensor p2 = Tensor::from_data({2}, {0.3, -0.7}, true);
    p1.ensure_grad();
    p2.ensure_grad();
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum_all(add(mul(p1, p1), mul(p2, p2))));
    }
    Adam opt({p1, p2});
    opt.step();
    CHECK(p1.values() == p2.values());
  }
  SUBCASE("missing gradient is a contract error") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    Adam opt({p});
    CHECK_THROWS_AS(opt.step(), ContractError);
  }
}
