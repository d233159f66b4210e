#include <doctest.h>

#include <Eigen/Dense>

#include "segfool/wavelets.hpp"
#include "support/gradcheck.hpp"

using namespace segfool;
namespace ts = segfool::testsupport;

namespace {

// Independent oracle: build the filter matrices by hand with Eigen and apply
// plain matrix products, no shared code with the implementation path.
struct OracleFilters {
  Eigen::MatrixXd low, high;
  explicit OracleFilters(int n) {
    const double r = 1.0 / std::sqrt(2.0);
    low = Eigen::MatrixXd::Zero(n / 2, n);
    high = Eigen::MatrixXd::Zero(n / 2, n);
    for (int i = 0; i < n / 2; ++i) {
      low(i, 2 * i) = r;
      low(i, 2 * i + 1) = r;
      high(i, 2 * i) = r;
      high(i, 2 * i + 1) = -r;
    }
  }
};

Eigen::MatrixXd channel_of(const Tensor<double>& t, int ch) {
  int n = t.shape[1];
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = t(ch, i, j);
  return m;
}

Tensor<double> single_channel(std::initializer_list<double> vals, int n) {
  Tensor<double> t = Tensor<double>::zeros({1, n, n});
  std::copy(vals.begin(), vals.end(), t.data.begin());
  return t;
}

}  // namespace

TEST_CASE("filter matrices are orthonormal and cross-orthogonal") {
  for (int n : {2, 4, 8, 64, 128}) {
    auto f = HaarFilters<double>::make(n);
    Eigen::MatrixXd ll = f.low * f.low.transpose();
    Eigen::MatrixXd hh = f.high * f.high.transpose();
    Eigen::MatrixXd lh = f.low * f.high.transpose();
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n / 2, n / 2);
    CHECK((ll - eye).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((hh - eye).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(lh.cwiseAbs().maxCoeff() <= 1e-6);
  }
  CHECK_THROWS_AS(HaarFilters<double>::make(3), ContractViolation);
}

TEST_CASE("2x2 fixture [[1,2],[3,4]] against the direct matrix oracle") {
  Tensor<double> x = single_channel({1, 2, 3, 4}, 2);
  auto d = dwt2(x);

  OracleFilters f(2);
  Eigen::MatrixXd xm = channel_of(x, 0);
  Eigen::MatrixXd c_ll = f.low * xm * f.low.transpose();
  Eigen::MatrixXd c_hh = f.high * xm * f.high.transpose();
  CHECK(c_ll(0, 0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(c_hh(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.c_ll(0, 0, 0) == doctest::Approx(c_ll(0, 0)).epsilon(1e-12));
  CHECK(d.c_hh(0, 0, 0) == doctest::Approx(c_hh(0, 0)).epsilon(1e-12));
  CHECK(d.c_lh(0, 0, 0) == doctest::Approx((f.low * xm * f.high.transpose())(0, 0)).epsilon(1e-12));
  CHECK(d.c_hl(0, 0, 0) == doctest::Approx((f.high * xm * f.low.transpose())(0, 0)).epsilon(1e-12));

  // low reconstruction is the constant 2.5, high reconstruction vanishes
  Tensor<double> lo = idwt_low(d);
  Tensor<double> hi = idwt_high(d);
  Eigen::MatrixXd lo_oracle = f.low.transpose() * c_ll * f.low;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(lo(0, i, j) == doctest::Approx(2.5).epsilon(1e-12));
      CHECK(lo(0, i, j) == doctest::Approx(lo_oracle(i, j)).epsilon(1e-12));
      CHECK(hi(0, i, j) == doctest::Approx(0.0).epsilon(1e-12));
    }
  }

  // exact recovery from all four bands
  Tensor<double> rec = reconstruct_full(d);
  for (long i = 0; i < 4; ++i) CHECK(rec.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}

TEST_CASE("constant images are pure low frequency") {
  const double c = 0.625;
  Tensor<double> x = Tensor<double>::full({1, 2, 2}, c);
  auto d = dwt2(x);
  CHECK(d.c_ll(0, 0, 0) == doctest::Approx(2 * c).epsilon(1e-12));
  CHECK(d.c_lh(0, 0, 0) == doctest::Approx(0.0));
  CHECK(d.c_hl(0, 0, 0) == doctest::Approx(0.0));
  CHECK(d.c_hh(0, 0, 0) == doctest::Approx(0.0));

  Tensor<double> big = Tensor<double>::full({3, 16, 16}, c);
  Tensor<double> lo = low_component(big);
  Tensor<double> hi = high_component(big);
  for (long i = 0; i < big.numel(); ++i) {
    CHECK(lo.data[i] == doctest::Approx(c).epsilon(1e-9));
    CHECK(hi.data[i] == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("checkerboard at period two is pure high frequency") {
  Tensor<double> x = single_channel({1, -1, -1, 1}, 2);
  auto d = dwt2(x);
  CHECK(d.c_ll(0, 0, 0) == doctest::Approx(0.0));
  Tensor<double> hi = idwt_high(d);
  for (long i = 0; i < 4; ++i) CHECK(hi.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}

TEST_CASE("dwt2 is linear") {
  Rng rng(31);
  Tensor<double> x = ts::random_signed({2, 8, 8}, rng);
  const double alpha = -2.75;
  Tensor<double> ax = x;
  for (auto& v : ax.data) v *= alpha;
  auto d1 = dwt2(x);
  auto d2 = dwt2(ax);
  for (long i = 0; i < d1.c_hh.numel(); ++i) {
    CHECK(d2.c_ll.data[i] == doctest::Approx(alpha * d1.c_ll.data[i]).epsilon(1e-9));
    CHECK(d2.c_hh.data[i] == doctest::Approx(alpha * d1.c_hh.data[i]).epsilon(1e-9));
  }

  // additivity of the low reconstruction
  Tensor<double> y = ts::random_signed({2, 8, 8}, rng);
  Tensor<double> xy = x;
  for (long i = 0; i < xy.numel(); ++i) xy.data[i] += y.data[i];
  Tensor<double> lx = low_component(x), ly = low_component(y), lxy = low_component(xy);
  for (long i = 0; i < lxy.numel(); ++i) {
    CHECK(lxy.data[i] == doctest::Approx(lx.data[i] + ly.data[i]).epsilon(1e-9));
  }
}

TEST_CASE("odd side length is rejected") {
  Tensor<double> x = Tensor<double>::zeros({1, 3, 3});
  CHECK_THROWS_AS(dwt2(x), ContractViolation);
}

TEST_CASE("perfect reconstruction and band split on random images") {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor<float> x = Tensor<float>::zeros({3, 64, 64});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    auto d = dwt2(x);
    Tensor<float> rec = reconstruct_full(d);
    float max_err = 0;
    for (long i = 0; i < x.numel(); ++i) {
      max_err = std::max(max_err, std::abs(rec.data[i] - x.data[i]));
    }
    CHECK(max_err <= 1e-5f);

    // energy conservation across the four bands
    auto energy = [](const Tensor<float>& t) {
      double e = 0;
      for (float v : t.data) e += static_cast<double>(v) * v;
      return e;
    };
    double ex = energy(x);
    double eb = energy(d.c_ll) + energy(d.c_lh) + energy(d.c_hl) + energy(d.c_hh);
    CHECK(std::abs(ex - eb) / ex <= 1e-4);

    // low + high + mid-band reconstructions equal the input
    auto f = HaarFilters<float>::make(64);
    Tensor<float> sum = idwt_low(d);
    Tensor<float> hi = idwt_high(d);
    Tensor<float> mid_lh = synthesize_band(d.c_lh, Band::LH, f);
    Tensor<float> mid_hl = synthesize_band(d.c_hl, Band::HL, f);
    float max_err2 = 0;
    for (long i = 0; i < x.numel(); ++i) {
      float s = sum.data[i] + hi.data[i] + mid_lh.data[i] + mid_hl.data[i];
      max_err2 = std::max(max_err2, std::abs(s - x.data[i]));
    }
    CHECK(max_err2 <= 1e-5f);
  }

  Tensor<float> zero = Tensor<float>::zeros({3, 8, 8});
  Tensor<float> rec0 = reconstruct_full(dwt2(zero));
  for (float v : rec0.data) CHECK(v == 0.0f);
}

TEST_CASE("high-band distance to a perturbed image is differentiable") {
  Rng rng(14);
  Tensor<double> x = ts::random_positive({2, 6, 6}, rng);
  Tensor<double> delta = ts::random_signed({2, 6, 6}, rng, 0.01, 0.05);
  auto res = ts::grad_check({delta}, [x](Graph<double>& g, const std::vector<Var<double>>& l) {
    Var<double> adv = add(g.constant(x), l[0]);
    return mse(high_component(adv), g.constant(high_component(x)));
  });
  CHECK(res.max_rel_err <= 1e-3);
}
