#pragma once

// Central finite-difference oracle for the reverse-mode ops. Runs in double
// precision (h = 1e-3) so oracle truncation error stays far below the 1e-3
// acceptance threshold, independent of the float32 production storage.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "segfool/attack.hpp"
#include "segfool/minisam.hpp"
#include "segfool/rng.hpp"
#include "segfool/tensor.hpp"
#include "segfool/wavelets.hpp"

namespace segfool::testsupport {

using BuildFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  long checked = 0;
};

/// Random values with magnitude in [lo, hi] and random sign, keeping inputs
/// away from relu/clamp kinks so the difference quotient stays two-sided.
inline Tensor<double> random_signed(std::vector<int> shape, Rng& rng, double lo = 0.2,
                                    double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data) {
    double mag = rng.uniform(lo, hi);
    v = rng.coin(0.5) ? mag : -mag;
  }
  return t;
}

inline Tensor<double> random_positive(std::vector<int> shape, Rng& rng, double lo = 0.1,
                                      double hi = 0.9) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline GradCheckResult grad_check(const std::vector<Tensor<double>>& inputs, const BuildFn& build,
                                  double h = 1e-3) {
  Graph<double> g;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(g.leaf(t));
  Var<double> loss = build(g, leaves);
  g.backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(leaves.size());
  for (Var<double> v : leaves) analytic.push_back(g.grad(v));

  auto eval = [&build](const std::vector<Tensor<double>>& in) {
    Graph<double> g2;
    std::vector<Var<double>> l2;
    l2.reserve(in.size());
    for (const auto& t : in) l2.push_back(g2.leaf(t));
    return g2.value(build(g2, l2)).item();
  };

  GradCheckResult res;
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t li = 0; li < inputs.size(); ++li) {
    for (long i = 0; i < inputs[li].numel(); ++i) {
      auto idx = static_cast<std::size_t>(i);
      double orig = work[li].data[idx];
      work[li].data[idx] = orig + h;
      double fp = eval(work);
      work[li].data[idx] = orig - h;
      double fm = eval(work);
      work[li].data[idx] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double a = analytic[li].data[idx];
      double rel = std::abs(a - fd) / (std::abs(a) + 1e-8);
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

/// Scalarize a non-scalar op output through a fixed random linear functional
/// so every output element contributes to the checked gradient.
inline BuildFn through_functional(std::function<Var<double>(Graph<double>&,
                                                            const std::vector<Var<double>>&)>
                                      op,
                                  const Tensor<double>& weights) {
  return [op, weights](Graph<double>& g, const std::vector<Var<double>>& leaves) {
    Var<double> y = op(g, leaves);
    return reduce_mean(mul(y, g.constant(weights)));
  };
}

struct OpCheck {
  std::string name;
  double max_rel_err;
};

/// Finite-difference sweep over every registered differentiable op, ten
/// random shapes each. Returns per-op worst relative error.
inline std::vector<OpCheck> op_gradcheck_suite(std::uint64_t seed = 20240901) {
  Rng rng(seed);
  std::vector<OpCheck> results;

  auto run_shapes = [&](const std::string& name, int reps,
                        std::function<GradCheckResult(Rng&)> once) {
    double worst = 0.0;
    for (int r = 0; r < reps; ++r) worst = std::max(worst, once(rng).max_rel_err);
    results.push_back({name, worst});
  };

  auto rand_dim = [](Rng& r, int lo, int hi) { return r.uniform_int(lo, hi); };

  // elementwise binary ops
  for (const std::string name : {"add", "sub", "mul"}) {
    run_shapes(name, 10, [&name, &rand_dim](Rng& r) {
      std::vector<int> shape{rand_dim(r, 1, 4), rand_dim(r, 1, 5)};
      auto a = random_signed(shape, r);
      auto b = random_signed(shape, r);
      auto w = random_signed(shape, r, 0.5, 1.5);
      return grad_check({a, b}, through_functional(
                                    [&name](Graph<double>&, const std::vector<Var<double>>& l) {
                                      if (name == "add") return add(l[0], l[1]);
                                      if (name == "sub") return sub(l[0], l[1]);
                                      return mul(l[0], l[1]);
                                    },
                                    w));
    });
  }

  run_shapes("scale", 10, [&rand_dim](Rng& r) {
    std::vector<int> shape{rand_dim(r, 2, 6)};
    auto a = random_signed(shape, r);
    double c = r.uniform(-2.0, 2.0);
    auto w = random_signed(shape, r, 0.5, 1.5);
    return grad_check({a}, through_functional(
                               [c](Graph<double>&, const std::vector<Var<double>>& l) {
                                 return scale(l[0], c);
                               },
                               w));
  });

  run_shapes("add_scalar", 10, [&rand_dim](Rng& r) {
    std::vector<int> shape{rand_dim(r, 2, 6)};
    auto a = random_signed(shape, r);
    double c = r.uniform(-1.0, 1.0);
    auto w = random_signed(shape, r, 0.5, 1.5);
    return grad_check({a}, through_functional(
                               [c](Graph<double>&, const std::vector<Var<double>>& l) {
                                 return add_scalar(l[0], c);
                               },
                               w));
  });

  for (const std::string name : {"relu", "sigmoid"}) {
    run_shapes(name, 10, [&name, &rand_dim](Rng& r) {
      std::vector<int> shape{rand_dim(r, 2, 4), rand_dim(r, 2, 4)};
      auto a = random_signed(shape, r);  // magnitudes >= 0.2, away from the kink
      auto w = random_signed(shape, r, 0.5, 1.5);
      return grad_check({a}, through_functional(
                                 [&name](Graph<double>&, const std::vector<Var<double>>& l) {
                                   return name == "relu" ? relu(l[0]) : sigmoid(l[0]);
                                 },
                                 w));
    });
  }

  run_shapes("clamp01", 10, [&rand_dim](Rng& r) {
    std::vector<int> shape{rand_dim(r, 2, 5)};
    auto a = random_signed(shape, r, 0.2, 0.9);  // inside or firmly outside [0,1]
    auto w = random_signed(shape, r, 0.5, 1.5);
    return grad_check({a}, through_functional(
                               [](Graph<double>&, const std::vector<Var<double>>& l) {
                                 return clamp01(l[0]);
                               },
                               w));
  });

  run_shapes("reshape", 10, [&rand_dim](Rng& r) {
    int rows = rand_dim(r, 2, 4), cols = rand_dim(r, 2, 4);
    auto a = random_signed({rows, cols}, r);
    auto w = random_signed({rows * cols}, r, 0.5, 1.5);
    return grad_check({a}, through_functional(
                               [rows, cols](Graph<double>&, const std::vector<Var<double>>& l) {
                                 return reshape(l[0], {rows * cols});
                               },
                               w));
  });

  run_shapes("reduce_mean", 10, [&rand_dim](Rng& r) {
    auto a = random_signed({rand_dim(r, 2, 5), rand_dim(r, 1, 4)}, r);
    return grad_check({a}, [](Graph<double>&, const std::vector<Var<double>>& l) {
      return reduce_mean(l[0]);
    });
  });

  run_shapes("mse", 10, [&rand_dim](Rng& r) {
    std::vector<int> shape{rand_dim(r, 2, 4), rand_dim(r, 2, 4)};
    auto a = random_signed(shape, r);
    auto b = random_signed(shape, r);
    return grad_check({a, b}, [](Graph<double>&, const std::vector<Var<double>>& l) {
      return mse(l[0], l[1]);
    });
  });

  run_shapes("weighted_bce_with_logits", 10, [&rand_dim](Rng& r) {
    std::vector<int> shape{rand_dim(r, 2, 4), rand_dim(r, 2, 4)};
    auto logits = random_signed(shape, r, 0.2, 2.0);
    Tensor<double> targets = Tensor<double>::zeros(shape);
    for (auto& v : targets.data) v = r.coin(0.5) ? 1.0 : 0.0;
    Tensor<double> weights = random_positive(shape, r, 0.2, 1.0);
    return grad_check({logits},
                      [targets, weights](Graph<double>&, const std::vector<Var<double>>& l) {
                        return weighted_bce_with_logits(l[0], targets, weights);
                      });
  });

  run_shapes("matmul", 10, [&rand_dim](Rng& r) {
    int m = rand_dim(r, 1, 4), k = rand_dim(r, 1, 4), n = rand_dim(r, 1, 4);
    auto a = random_signed({m, k}, r);
    auto b = random_signed({k, n}, r);
    auto w = random_signed({m, n}, r, 0.5, 1.5);
    return grad_check({a, b}, through_functional(
                                  [](Graph<double>&, const std::vector<Var<double>>& l) {
                                    return matmul(l[0], l[1]);
                                  },
                                  w));
  });

  run_shapes("conv2d", 10, [&rand_dim](Rng& r) {
    int c_in = rand_dim(r, 1, 3), c_out = rand_dim(r, 1, 3);
    int kernel = r.coin(0.5) ? 1 : 3;
    int stride = r.coin(0.5) ? 1 : 2;
    int hw = stride == 2 ? 2 * rand_dim(r, 2, 4) : rand_dim(r, 3, 6);
    int pad = (kernel - 1) / 2;
    auto x = random_signed({c_in, hw, hw}, r);
    auto w = random_signed({c_out, c_in, kernel, kernel}, r);
    int oh = (hw + 2 * pad - kernel) / stride + 1;
    auto lin = random_signed({c_out, oh, oh}, r, 0.5, 1.5);
    return grad_check({x, w}, through_functional(
                                  [stride, pad](Graph<double>&, const std::vector<Var<double>>& l) {
                                    return conv2d(l[0], l[1], stride, pad);
                                  },
                                  lin));
  });

  run_shapes("bias_add", 10, [&rand_dim](Rng& r) {
    int c = rand_dim(r, 1, 4), hw = rand_dim(r, 2, 4);
    auto x = random_signed({c, hw, hw}, r);
    auto b = random_signed({c}, r);
    auto w = random_signed({c, hw, hw}, r, 0.5, 1.5);
    return grad_check({x, b}, through_functional(
                                  [](Graph<double>&, const std::vector<Var<double>>& l) {
                                    return bias_add(l[0], l[1]);
                                  },
                                  w));
  });

  run_shapes("upsample_bilinear", 10, [&rand_dim](Rng& r) {
    int c = rand_dim(r, 1, 2), hw = rand_dim(r, 2, 4);
    int factor = r.coin(0.5) ? 2 : 4;
    auto x = random_signed({c, hw, hw}, r);
    auto w = random_signed({c, hw * factor, hw * factor}, r, 0.5, 1.5);
    return grad_check({x}, through_functional(
                               [factor](Graph<double>&, const std::vector<Var<double>>& l) {
                                 return upsample_bilinear(l[0], factor);
                               },
                               w));
  });

  for (Band band : {Band::LL, Band::LH, Band::HL, Band::HH}) {
    std::string name = "dwt_band_" + std::to_string(static_cast<int>(band));
    run_shapes(name, 10, [band, &rand_dim](Rng& r) {
      int c = rand_dim(r, 1, 2), n = 2 * rand_dim(r, 1, 4);
      auto x = random_signed({c, n, n}, r);
      auto w = random_signed({c, n / 2, n / 2}, r, 0.5, 1.5);
      return grad_check({x}, through_functional(
                                 [band](Graph<double>&, const std::vector<Var<double>>& l) {
                                   return dwt_band(l[0], band);
                                 },
                                 w));
    });
  }

  for (Band band : {Band::LL, Band::HH}) {
    std::string name = "idwt_band_" + std::to_string(static_cast<int>(band));
    run_shapes(name, 10, [band, &rand_dim](Rng& r) {
      int c = rand_dim(r, 1, 2), m = rand_dim(r, 1, 3);
      auto coeff = random_signed({c, m, m}, r);
      auto w = random_signed({c, 2 * m, 2 * m}, r, 0.5, 1.5);
      return grad_check({coeff}, through_functional(
                                     [band](Graph<double>&, const std::vector<Var<double>>& l) {
                                       return idwt_band(l[0], band);
                                     },
                                     w));
    });
  }

  return results;
}

/// Full objective chain (decoupled spatial targets plus the frequency term)
/// on a small random model and image, differentiated with respect to the
/// perturbation.
inline GradCheckResult composite_loss_gradcheck(std::uint64_t seed = 77001) {
  Rng rng(seed);
  const int size = 8;
  MiniSam<double> model = MiniSam<double>::init(size, seed);

  Tensor<double> image = random_positive({3, size, size}, rng, 0.1, 0.9);
  Rng shadow_rng(derive_seed(seed, "shadow"));
  ShadowTarget target = build_shadow_target(model, image, 3, ShadowPromptKind::Mixed, shadow_rng);
  FakeMasks<double> fakes = make_fake_masks<double>(target.blueprint, 1.0);
  Tensor<double> clean_low = low_component(image);
  Tensor<double> clean_high = high_component(image);

  Tensor<double> delta = random_signed({3, size, size}, rng, 0.001, 0.02);
  const double lambda = 0.1, mu = 0.01;

  BuildFn build = [&, size](Graph<double>& g, const std::vector<Var<double>>& leaves) {
    Var<double> dv = leaves[0];
    ModelVars<double> mv = register_model(g, model, false);
    Var<double> adv = add(g.constant(image), dv);  // inputs stay interior to [0,1]
    Var<double> sa =
        spatial_loss(g, mv, size, adv, target.prompts, target.blueprint, fakes, true, true);
    Var<double> fa = frequency_loss(g, image, dv, mu, true, true, &clean_low, &clean_high);
    return total_loss(sa, fa, lambda);
  };
  return grad_check({delta}, build);
}

}  // namespace segfool::testsupport
