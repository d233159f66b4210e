#include <doctest.h>

#include "segfool/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace segfool;
namespace ts = segfool::testsupport;

namespace {

template <typename S>
Var<S> leafv(Graph<S>& g, std::vector<int> shape, std::vector<S> data) {
  return g.leaf(Tensor<S>(std::move(shape), std::move(data)));
}

}  // namespace

TEST_CASE("elementwise arithmetic") {
  Graph<float> g;
  auto a = leafv<float>(g, {2}, {1, 2});
  auto b = leafv<float>(g, {2}, {3, 4});
  auto sum = add(a, b);
  CHECK(g.value(sum).data == std::vector<float>{4, 6});

  auto zero = g.constant(Tensor<float>::zeros({2}));
  auto prod = mul(a, zero);
  CHECK(g.value(prod).data == std::vector<float>{0, 0});
  g.backward(reduce_mean(prod));
  CHECK(g.grad(a).data == std::vector<float>{0, 0});
}

TEST_CASE("sub of a tensor from itself cancels in value and gradient") {
  Graph<float> g;
  auto x = leafv<float>(g, {3}, {1.5f, -2.0f, 0.25f});
  auto d = sub(x, x);
  CHECK(g.value(d).data == std::vector<float>{0, 0, 0});
  g.backward(reduce_mean(d));
  CHECK(g.grad(x).data == std::vector<float>{0, 0, 0});
}

TEST_CASE("elementwise shape mismatch is a contract violation") {
  Graph<float> g;
  auto a = leafv<float>(g, {2}, {1, 2});
  auto b = leafv<float>(g, {3}, {1, 2, 3});
  CHECK_THROWS_AS(add(a, b), ContractViolation);
  CHECK_THROWS_AS(mse(a, b), ContractViolation);
}

TEST_CASE("matmul identity and small fixture") {
  Graph<float> g;
  auto eye = g.constant(Tensor<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto m = leafv<float>(g, {3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto r = matmul(eye, m);
  CHECK(g.value(r).data == g.value(m).data);

  auto a = leafv<float>(g, {2, 2}, {1, 2, 3, 4});
  auto ones = g.constant(Tensor<float>({2, 1}, {1, 1}));
  auto v = matmul(a, ones);
  CHECK(g.value(v).data == std::vector<float>{3, 7});

  auto bad = g.constant(Tensor<float>::zeros({3, 2}));
  CHECK_THROWS_AS(matmul(a, bad), ContractViolation);
}

TEST_CASE("matmul gradient agrees with central differences on 4x5 * 5x3") {
  Rng rng(42);
  auto a = ts::random_signed({4, 5}, rng);
  auto b = ts::random_signed({5, 3}, rng);
  auto w = ts::random_signed({4, 3}, rng, 0.5, 1.5);
  auto res = ts::grad_check({a, b},
                            ts::through_functional(
                                [](Graph<double>&, const std::vector<Var<double>>& l) {
                                  return matmul(l[0], l[1]);
                                },
                                w));
  CHECK(res.max_rel_err <= 1e-3);
}

TEST_CASE("conv2d identity and constant-field fixtures") {
  Graph<float> g;
  Rng rng(7);
  Tensor<float> x = Tensor<float>::zeros({1, 5, 5});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  auto xv = g.leaf(x);

  // 1x1 kernel with weight 1 is the identity map
  auto w1 = g.constant(Tensor<float>({1, 1, 1, 1}, {1.0f}));
  auto y = conv2d(xv, w1, 1, 0);
  CHECK(g.value(y).data == x.data);

  // 3x3 all-ones kernel on a constant image: interior of the same-pad output is 9c
  const float c = 0.37f;
  auto xc = g.constant(Tensor<float>::full({1, 6, 6}, c));
  auto w9 = g.constant(Tensor<float>::full({1, 1, 3, 3}, 1.0f));
  auto yc = conv2d(xc, w9, 1, 1);
  const Tensor<float>& out = g.value(yc);
  for (int i = 1; i < 5; ++i) {
    for (int j = 1; j < 5; ++j) {
      CHECK(out(0, i, j) == doctest::Approx(9 * c).epsilon(1e-6));
    }
  }

  CHECK_THROWS_AS(conv2d(xv, g.constant(Tensor<float>::zeros({1, 1, 2, 2})), 1, 0),
                  ContractViolation);
  CHECK_THROWS_AS(conv2d(xv, g.constant(Tensor<float>::zeros({1, 2, 3, 3})), 1, 1),
                  ContractViolation);
}

TEST_CASE("conv2d gradient agrees with central differences on 2x8x8, 4 filters") {
  Rng rng(11);
  auto x = ts::random_signed({2, 8, 8}, rng);
  auto w = ts::random_signed({4, 2, 3, 3}, rng);
  auto lin = ts::random_signed({4, 8, 8}, rng, 0.5, 1.5);
  auto res = ts::grad_check({x, w},
                            ts::through_functional(
                                [](Graph<double>&, const std::vector<Var<double>>& l) {
                                  return conv2d(l[0], l[1], 1, 1);
                                },
                                lin));
  CHECK(res.max_rel_err <= 1e-3);
}

TEST_CASE("activations and reductions") {
  Graph<float> g;
  auto x = leafv<float>(g, {2}, {-1.0f, 2.0f});
  CHECK(g.value(relu(x)).data == std::vector<float>{0.0f, 2.0f});
  auto s = leafv<float>(g, {1}, {0.0f});
  CHECK(g.value(sigmoid(s)).data[0] == doctest::Approx(0.5));
  auto m = leafv<float>(g, {4}, {1, 2, 3, 4});
  CHECK(g.value(reduce_mean(m)).item() == doctest::Approx(2.5));
}

TEST_CASE("mse fixtures and analytic gradient") {
  Graph<float> g;
  auto x = leafv<float>(g, {3}, {0.5f, -1.0f, 2.0f});
  CHECK(g.value(mse(x, x)).item() == 0.0f);

  auto a = leafv<float>(g, {2}, {0, 0});
  auto b = g.constant(Tensor<float>({2}, {1, 1}));
  CHECK(g.value(mse(a, b)).item() == doctest::Approx(1.0));

  // gradient wrt a equals 2(a-b)/N
  Rng rng(5);
  auto ad = ts::random_signed({6}, rng);
  auto bd = ts::random_signed({6}, rng);
  Graph<double> gd;
  auto av = gd.leaf(ad);
  auto bv = gd.constant(bd);
  gd.backward(mse(av, bv));
  for (long i = 0; i < 6; ++i) {
    double expect = 2.0 * (ad.data[i] - bd.data[i]) / 6.0;
    CHECK(gd.grad(av).data[i] == doctest::Approx(expect).epsilon(1e-9));
  }
  auto res = ts::grad_check({ad}, [bd](Graph<double>&, const std::vector<Var<double>>& l) {
    return mse(l[0], l[0].graph->constant(bd));
  });
  CHECK(res.max_rel_err <= 1e-3);
}

TEST_CASE("backward basics") {
  // loss = mean(x) gives every leaf gradient 1/n
  Graph<float> g;
  auto x = leafv<float>(g, {4}, {4, 3, 2, 1});
  g.backward(reduce_mean(x));
  for (float v : g.grad(x).data) CHECK(v == doctest::Approx(0.25));

  // loss = mse(x, 0) at x = [3] gives gradient 6
  Graph<float> g2;
  auto y = leafv<float>(g2, {1}, {3.0f});
  auto zero = g2.constant(Tensor<float>::zeros({1}));
  g2.backward(mse(y, zero));
  CHECK(g2.grad(y).data[0] == doctest::Approx(6.0));

  // non-scalar loss is rejected
  Graph<float> g3;
  auto z = leafv<float>(g3, {2}, {1, 2});
  CHECK_THROWS_AS(g3.backward(z), ContractViolation);

  // leaves not on the loss path keep a zero gradient buffer
  Graph<float> g4;
  auto used = leafv<float>(g4, {2}, {1, 2});
  auto unused = leafv<float>(g4, {2}, {5, 5});
  g4.backward(reduce_mean(used));
  CHECK(g4.grad(unused).data == std::vector<float>{0, 0});
}

TEST_CASE("every registered op passes central finite differences at 10 random shapes") {
  auto results = ts::op_gradcheck_suite();
  for (const auto& r : results) {
    INFO(r.name);
    CHECK(r.max_rel_err <= 1e-3);
  }
  CHECK(results.size() >= 18);  // all ops represented
}

TEST_CASE("tape determinism: identical inputs give bit-identical values and gradients") {
  auto run = [] {
    Rng rng(99);
    Graph<float> g;
    auto x = g.leaf(ts::random_signed({3, 6, 6}, rng).cast<float>());
    auto w = g.leaf(ts::random_signed({4, 3, 3, 3}, rng).cast<float>());
    auto y = relu(conv2d(x, w, 1, 1));
    auto loss = mse(reshape(y, {4 * 36}), g.constant(Tensor<float>::zeros({4 * 36})));
    g.backward(loss);
    return std::make_tuple(g.value(loss).data, g.grad(x).data, g.grad(w).data);
  };
  auto [l1, gx1, gw1] = run();
  auto [l2, gx2, gw2] = run();
  CHECK(l1 == l2);
  CHECK(gx1 == gx2);
  CHECK(gw1 == gw2);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(123);
  auto xd = ts::random_signed({5}, rng);
  auto target = ts::random_signed({5}, rng);
  const double alpha = 0.7, beta = -1.3;

  auto grad_of = [&](double a, double b) {
    Graph<double> g;
    auto x = g.leaf(xd);
    auto l1 = mse(x, g.constant(target));
    auto l2 = reduce_mean(mul(x, x));
    g.backward(add(scale(l1, a), scale(l2, b)));
    return g.grad(x).data;
  };
  auto combined = grad_of(alpha, beta);
  auto g1 = grad_of(1.0, 0.0);
  auto g2 = grad_of(0.0, 1.0);
  for (std::size_t i = 0; i < combined.size(); ++i) {
    CHECK(std::abs(combined[i] - (alpha * g1[i] + beta * g2[i])) <= 1e-6);
  }
}

TEST_CASE("gradient accumulates across multiple consumers") {
  Graph<float> g;
  auto x = leafv<float>(g, {2}, {1.0f, 2.0f});
  auto y = add(x, x);  // dy/dx = 2
  g.backward(reduce_mean(y));
  CHECK(g.grad(x).data == std::vector<float>{1.0f, 1.0f});
}
