#pragma once

#include <cmath>
#include <memory>

#include "segfool/tensor.hpp"

namespace segfool {

/// One-level orthonormal Haar analysis filter pair, materialized as explicit
/// (N/2) x N matrices so the transforms are literal matrix products.
template <typename S>
struct HaarFilters {
  MatX<S> low;   // rows [..., 1/sqrt2, 1/sqrt2, ...]
  MatX<S> high;  // rows [..., 1/sqrt2, -1/sqrt2, ...]

  static HaarFilters make(int n) {
    SEGFOOL_REQUIRE(n >= 2 && n % 2 == 0, "HaarFilters: side length must be even");
    const S r = static_cast<S>(1.0 / std::sqrt(2.0));
    HaarFilters f;
    f.low = MatX<S>::Zero(n / 2, n);
    f.high = MatX<S>::Zero(n / 2, n);
    for (int i = 0; i < n / 2; ++i) {
      f.low(i, 2 * i) = r;
      f.low(i, 2 * i + 1) = r;
      f.high(i, 2 * i) = r;
      f.high(i, 2 * i + 1) = -r;
    }
    return f;
  }
};

enum class Band { LL, LH, HL, HH };

namespace wavdetail {

/// Row/column analysis matrices for a band: c = F1 * x * F2^T.
template <typename S>
std::pair<const MatX<S>*, const MatX<S>*> band_filters(const HaarFilters<S>& f, Band b) {
  switch (b) {
    case Band::LL: return {&f.low, &f.low};
    case Band::LH: return {&f.low, &f.high};
    case Band::HL: return {&f.high, &f.low};
    case Band::HH: return {&f.high, &f.high};
  }
  return {&f.low, &f.low};
}

}  // namespace wavdetail

/// Plain (no-graph) per-channel band analysis of x [C, N, N] -> [C, N/2, N/2].
template <typename S>
Tensor<S> analyze_band(const Tensor<S>& x, Band band, const HaarFilters<S>& f) {
  SEGFOOL_REQUIRE(x.rank() == 3 && x.shape[1] == x.shape[2], "analyze_band: need [C,N,N]");
  SEGFOOL_REQUIRE(x.shape[1] % 2 == 0, "analyze_band: side length must be even");
  auto [f1, f2] = wavdetail::band_filters(f, band);
  int c = x.shape[0], n = x.shape[1], m = n / 2;
  Tensor<S> out = Tensor<S>::zeros({c, m, m});
  for (int ch = 0; ch < c; ++ch) {
    CMapMat<S> xm(x.data.data() + static_cast<std::size_t>(ch) * n * n, n, n);
    MapMat<S> om(out.data.data() + static_cast<std::size_t>(ch) * m * m, m, m);
    om.noalias() = (*f1) * xm * f2->transpose();
  }
  return out;
}

/// Plain per-channel band synthesis [C, M, M] -> [C, 2M, 2M]: F1^T * c * F2.
template <typename S>
Tensor<S> synthesize_band(const Tensor<S>& coeff, Band band, const HaarFilters<S>& f) {
  SEGFOOL_REQUIRE(coeff.rank() == 3 && coeff.shape[1] == coeff.shape[2],
                  "synthesize_band: need [C,M,M]");
  auto [f1, f2] = wavdetail::band_filters(f, band);
  int c = coeff.shape[0], m = coeff.shape[1], n = 2 * m;
  Tensor<S> out = Tensor<S>::zeros({c, n, n});
  for (int ch = 0; ch < c; ++ch) {
    CMapMat<S> cm(coeff.data.data() + static_cast<std::size_t>(ch) * m * m, m, m);
    MapMat<S> om(out.data.data() + static_cast<std::size_t>(ch) * n * n, n, n);
    om.noalias() = f1->transpose() * cm * (*f2);
  }
  return out;
}

/// Four-band decomposition of a square multi-channel image.
template <typename S>
struct FrequencyDecomposition {
  Tensor<S> c_ll, c_lh, c_hl, c_hh;
};

template <typename S>
FrequencyDecomposition<S> dwt2(const Tensor<S>& x) {
  SEGFOOL_REQUIRE(x.rank() == 3 && x.shape[1] == x.shape[2] && x.shape[1] % 2 == 0,
                  "dwt2: need [C,N,N] with N even");
  auto f = HaarFilters<S>::make(x.shape[1]);
  return {analyze_band(x, Band::LL, f), analyze_band(x, Band::LH, f),
          analyze_band(x, Band::HL, f), analyze_band(x, Band::HH, f)};
}

/// Low-frequency reconstruction, keeping only c_ll.
template <typename S>
Tensor<S> idwt_low(const FrequencyDecomposition<S>& d) {
  auto f = HaarFilters<S>::make(2 * d.c_ll.shape[1]);
  return synthesize_band(d.c_ll, Band::LL, f);
}

/// High-frequency reconstruction, keeping only c_hh.
template <typename S>
Tensor<S> idwt_high(const FrequencyDecomposition<S>& d) {
  auto f = HaarFilters<S>::make(2 * d.c_hh.shape[1]);
  return synthesize_band(d.c_hh, Band::HH, f);
}

/// Sum of all four band reconstructions; recovers the input exactly.
template <typename S>
Tensor<S> reconstruct_full(const FrequencyDecomposition<S>& d) {
  auto f = HaarFilters<S>::make(2 * d.c_ll.shape[1]);
  Tensor<S> out = synthesize_band(d.c_ll, Band::LL, f);
  const Tensor<S> parts[3] = {synthesize_band(d.c_lh, Band::LH, f),
                              synthesize_band(d.c_hl, Band::HL, f),
                              synthesize_band(d.c_hh, Band::HH, f)};
  for (const auto& p : parts) {
    for (long i = 0; i < out.numel(); ++i) out.data[i] += p.data[i];
  }
  return out;
}

/// Convenience: low/high band image components of x.
template <typename S>
Tensor<S> low_component(const Tensor<S>& x) {
  auto f = HaarFilters<S>::make(x.shape[1]);
  return synthesize_band(analyze_band(x, Band::LL, f), Band::LL, f);
}

template <typename S>
Tensor<S> high_component(const Tensor<S>& x) {
  auto f = HaarFilters<S>::make(x.shape[1]);
  return synthesize_band(analyze_band(x, Band::HH, f), Band::HH, f);
}

// ---------------------------------------------------------------------------
// Differentiable graph ops
// ---------------------------------------------------------------------------

/// Band analysis as a recorded op. Gradient of c = F1 x F2^T is F1^T G F2.
template <typename S>
Var<S> dwt_band(Var<S> x, Band band) {
  Graph<S>& g = *x.graph;
  const Tensor<S>& xv = g.value(x);
  SEGFOOL_REQUIRE(xv.rank() == 3 && xv.shape[1] == xv.shape[2] && xv.shape[1] % 2 == 0,
                  "dwt_band: need [C,N,N] with N even");
  auto filters = std::make_shared<HaarFilters<S>>(HaarFilters<S>::make(xv.shape[1]));
  Tensor<S> out = analyze_band(xv, band, *filters);
  int channels = xv.shape[0], n = xv.shape[1], m = n / 2;
  return g.record(std::move(out), {x.id}, [filters, band, channels, n, m](Graph<S>& g, int self) {
    auto& nd = g.node(self);
    auto& px = g.node(nd.parents[0]);
    if (!px.tracked) return;
    auto [f1, f2] = wavdetail::band_filters(*filters, band);
    for (int ch = 0; ch < channels; ++ch) {
      CMapMat<S> gm(nd.grad.data.data() + static_cast<std::size_t>(ch) * m * m, m, m);
      MapMat<S> dx(px.grad.data.data() + static_cast<std::size_t>(ch) * n * n, n, n);
      dx.noalias() += f1->transpose() * gm * (*f2);
    }
  });
}

/// Band synthesis as a recorded op. Gradient of y = F1^T c F2 is F1 G F2^T.
template <typename S>
Var<S> idwt_band(Var<S> coeff, Band band) {
  Graph<S>& g = *coeff.graph;
  const Tensor<S>& cv = g.value(coeff);
  SEGFOOL_REQUIRE(cv.rank() == 3 && cv.shape[1] == cv.shape[2], "idwt_band: need [C,M,M]");
  auto filters = std::make_shared<HaarFilters<S>>(HaarFilters<S>::make(2 * cv.shape[1]));
  Tensor<S> out = synthesize_band(cv, band, *filters);
  int channels = cv.shape[0], m = cv.shape[1], n = 2 * m;
  return g.record(std::move(out), {coeff.id}, [filters, band, channels, n, m](Graph<S>& g, int self) {
    auto& nd = g.node(self);
    auto& pc = g.node(nd.parents[0]);
    if (!pc.tracked) return;
    auto [f1, f2] = wavdetail::band_filters(*filters, band);
    for (int ch = 0; ch < channels; ++ch) {
      CMapMat<S> gm(nd.grad.data.data() + static_cast<std::size_t>(ch) * n * n, n, n);
      MapMat<S> dc(pc.grad.data.data() + static_cast<std::size_t>(ch) * m * m, m, m);
      dc.noalias() += (*f1) * gm * f2->transpose();
    }
  });
}

template <typename S>
Var<S> low_component(Var<S> x) {
  return idwt_band(dwt_band(x, Band::LL), Band::LL);
}

template <typename S>
Var<S> high_component(Var<S> x) {
  return idwt_band(dwt_band(x, Band::HH), Band::HH);
}

}  // namespace segfool
