#include <doctest.h>

#include <cmath>
#include <cstring>

#include "faithbench/tensor.hpp"
#include "support/finite_diff.hpp"
#include "support/op_gradcheck.hpp"

using namespace faithbench;
using namespace faithbench::testsupport;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("softmax of equal scores is uniform") {
  Tensor p = softmax(Tensor::from_vector({0.0, 0.0}));
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and stay inside (0,1)") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-8.0, 8.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(12);
    for (double& x : v) x = dist(rng);
    Tensor p = softmax(Tensor::from_matrix(3, 4, v), 1);
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double x = p.at(r, c);
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        s += x;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("matmul of an identity-extended matrix picks the leading entries") {
  // hand evaluation of the 2x3 . 3x1 product
  Tensor a = Tensor::from_matrix(2, 3, {1, 0, 0, 0, 1, 0});
  Tensor x = Tensor::from_vector({1, 2, 3});
  Tensor y = matmul(a, x);
  REQUIRE(y.shape() == std::vector<int>{2});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("tanh at the origin is zero") {
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
}

TEST_CASE("shape mismatches are rejected with the offending shapes named") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,2)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2, 2})), std::invalid_argument);
}

TEST_CASE("backward of sum(x*x) doubles the input") {
  Tape tape;
  Tensor x = tape.watch(Tensor::from_vector({1.0, 2.0}));
  Tensor root = sum_all(mul(x, x));
  tape.backward(root);
  const std::vector<double>& g = tape.gradient(x);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("backward of softmax-then-pick matches central differences") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> v(6);
  for (double& x : v) x = dist(rng);

  Tape tape;
  Tensor s = tape.watch(Tensor::from_vector(v));
  Tensor root = pick(softmax(s), 2);
  tape.backward(root);
  const std::vector<double> analytic = tape.gradient(s);

  auto f = [](const std::vector<double>& x) {
    return pick(softmax(Tensor::from_vector(x)), 2).item();
  };
  const std::vector<double> numeric = central_difference(f, v, 1e-5);
  CHECK(max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("a node the root does not depend on numerically gets a zero gradient") {
  Tape tape;
  Tensor x = tape.watch(Tensor::from_vector({3.0, -1.0}));
  Tensor y = tape.watch(Tensor::from_vector({1.0, 1.0}));
  Tensor killed = mul(x, Tensor::from_vector({0.0, 0.0}));
  Tensor root = sum_all(add(killed, y));
  tape.backward(root);
  const std::vector<double>& gx = tape.gradient(x);
  CHECK(gx[0] == 0.0);
  CHECK(gx[1] == 0.0);
}

TEST_CASE("nodes not reachable from the root carry no gradient") {
  Tape tape;
  Tensor x = tape.watch(Tensor::from_vector({1.0}));
  Tensor unused = tape.watch(Tensor::from_vector({5.0}));
  Tensor root = sum_all(x);
  tape.backward(root);
  CHECK(tape.has_gradient(x));
  CHECK_FALSE(tape.has_gradient(unused));
  CHECK_THROWS_AS(tape.gradient(unused), std::invalid_argument);
}

TEST_CASE("non-scalar backward roots are rejected") {
  Tape tape;
  Tensor x = tape.watch(Tensor::from_vector({1.0, 2.0}));
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("finite-difference oracle sanity: sum and quadratic form") {
  auto sum_f = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  };
  std::vector<double> g = central_difference(sum_f, {0.3, -0.7, 2.0}, 1e-5);
  for (double v : g) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

  auto quad = [](const std::vector<double>& x) { return x[0] * x[0] + x[1] * x[1]; };
  g = central_difference(quad, {1.0, 2.0}, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("every op kind passes a quick gradient check") {
  for (const OpCase& op : op_gradcheck_matrix()) {
    CAPTURE(op.name);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const double err = gradcheck_op(op, seed);
      CAPTURE(seed);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("identical inputs replay to bitwise-identical forward values") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> a(12), b(12);
  for (double& x : a) x = dist(rng);
  for (double& x : b) x = dist(rng);

  auto run = [&]() {
    Tape tape;
    Tensor ta = tape.watch(Tensor::from_matrix(3, 4, a));
    Tensor tb = tape.watch(Tensor::from_matrix(3, 4, b));
    Tensor out = softmax(matmul(tanh(ta), transpose(sigmoid(tb))), 1);
    return out.values();
  };
  const std::vector<double> first = run();
  const std::vector<double> second = run();
  REQUIRE(first.size() == second.size());
  CHECK(std::memcmp(first.data(), second.data(), first.size() * sizeof(double)) == 0);
}

TEST_CASE("max backward routes ties to the first maximal index") {
  Tape tape;
  Tensor x = tape.watch(Tensor::from_matrix(1, 3, {2.0, 5.0, 5.0}));
  Tensor root = sum_all(max(x, 1));
  tape.backward(root);
  const std::vector<double>& g = tape.gradient(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("backward can run more than once on the same tape") {
  Tape tape;
  Tensor x = tape.watch(Tensor::from_vector({2.0}));
  Tensor a = mul(x, x);
  Tensor b = mul(a, x);
  tape.backward(sum_all(a));
  CHECK(tape.gradient(x)[0] == doctest::Approx(4.0));
  tape.backward(sum_all(b));
  CHECK(tape.gradient(x)[0] == doctest::Approx(12.0));
}

TEST_SUITE_END();
