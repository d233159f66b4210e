#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segfool/dataset.hpp"
#include "segfool/minisam.hpp"
#include "segfool/wavelets.hpp"

namespace segfool {

enum class ShadowPromptKind { Point, Box, Mixed };

struct AttackConfig {
  int shadow_prompts = 10;          // prompts merged into each image's blueprint
  float fake_magnitude = 1.0f;      // target logit magnitude tau
  float frequency_weight = 0.1f;    // weight of the frequency term in the total loss
  float hfc_weight = 0.01f;         // weight of the high-band term inside it
  float epsilon = 10.0f / 255.0f;   // L-inf budget
  float step_size = 1.0f / 255.0f;  // signed-gradient step per image
  int epochs = 20;
  ShadowPromptKind prompt_type = ShadowPromptKind::Point;
  std::uint64_t seed = 100;
  bool use_fe = true;   // drive merged-foreground logits negative
  bool use_bm = true;   // drive background logits positive
  bool use_hfc = true;  // push perturbation energy into the high band
  bool use_lfc = true;  // pin the low band of adversarial images
};

/// Merged foreground mask over a batch of prompts; the fixed per-image target
/// the perturbation is optimized against.
struct SemanticBlueprint {
  Mask foreground;
  Mask background() const { return foreground.complement(); }
};

/// Target logit maps: -tau on the blueprint foreground, +tau on its
/// complement, zero elsewhere.
template <typename S>
struct FakeMasks {
  Tensor<S> negative;  // <= 0 everywhere, support = foreground
  Tensor<S> positive;  // >= 0 everywhere, support = background
};

template <typename S>
FakeMasks<S> make_fake_masks(const SemanticBlueprint& bp, S magnitude) {
  const Mask& fg = bp.foreground;
  FakeMasks<S> f;
  f.negative = Tensor<S>::zeros({fg.rows, fg.cols});
  f.positive = Tensor<S>::zeros({fg.rows, fg.cols});
  for (std::size_t i = 0; i < fg.on.size(); ++i) {
    if (fg.on[i]) {
      f.negative.data[i] = -magnitude;
    } else {
      f.positive.data[i] = magnitude;
    }
  }
  return f;
}

struct ShadowTarget {
  std::vector<Prompt> prompts;
  SemanticBlueprint blueprint;
};

/// Sample k prompts uniformly (points anywhere; boxes with side >= S/8) and
/// merge the model's binarized clean predictions into one foreground mask.
/// Computed once per image on the clean input; the target stays fixed while
/// the perturbation moves.
template <typename S>
ShadowTarget build_shadow_target(const MiniSam<S>& model, const Tensor<S>& image, int k,
                                 ShadowPromptKind kind, Rng& rng) {
  SEGFOOL_REQUIRE(k >= 1, "build_shadow_target: k must be >= 1");
  int size = model.image_size;
  ShadowTarget out;
  out.prompts.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    bool want_box = kind == ShadowPromptKind::Box ||
                    (kind == ShadowPromptKind::Mixed && i % 2 == 1);
    if (!want_box) {
      out.prompts.emplace_back(Point{rng.uniform_int(0, size - 1), rng.uniform_int(0, size - 1)});
    } else {
      int min_side = std::max(1, size / 8);
      int h = rng.uniform_int(min_side, size);
      int w = rng.uniform_int(min_side, size);
      int r0 = rng.uniform_int(0, size - h);
      int c0 = rng.uniform_int(0, size - w);
      out.prompts.emplace_back(Box{r0, c0, r0 + h - 1, c0 + w - 1});
    }
  }
  out.blueprint.foreground = Mask(size, size);
  Predictor<S> pred(model, image);
  for (const Prompt& p : out.prompts) {
    out.blueprint.foreground.unite(binarize(pred.logits(p)));
  }
  return out;
}

namespace attackdetail {

template <typename S>
Tensor<S> mask01(const Mask& m) {
  Tensor<S> t = Tensor<S>::zeros({m.rows, m.cols});
  for (std::size_t i = 0; i < m.on.size(); ++i) t.data[i] = m.on[i] ? S(1) : S(0);
  return t;
}

}  // namespace attackdetail

/// Per-prompt decoupled targets, averaged over the prompt set:
/// distance of masked-foreground logits to the negative fake mask plus
/// distance of masked-background logits to the positive fake mask.
template <typename S>
Var<S> spatial_loss(Graph<S>& g, const ModelVars<S>& mv, int image_size, Var<S> adv,
                    const std::vector<Prompt>& prompts, const SemanticBlueprint& bp,
                    const FakeMasks<S>& fakes, bool use_fe, bool use_bm) {
  if ((!use_fe && !use_bm) || prompts.empty()) {
    return g.constant(Tensor<S>::scalar(S(0)));
  }
  Var<S> fg = g.constant(attackdetail::mask01<S>(bp.foreground));
  Var<S> bg = g.constant(attackdetail::mask01<S>(bp.background()));
  Var<S> fake_neg = g.constant(fakes.negative);
  Var<S> fake_pos = g.constant(fakes.positive);
  Var<S> feats = encode_image(g, mv, image_size, adv);
  Var<S> total;
  for (const Prompt& p : prompts) {
    Var<S> logits = decode_mask(g, mv, image_size, feats, p);
    Var<S> term;
    if (use_fe) term = mse(mul(logits, fg), fake_neg);
    if (use_bm) {
      Var<S> t = mse(mul(logits, bg), fake_pos);
      term = term.valid() ? add(term, t) : t;
    }
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, static_cast<S>(1.0 / prompts.size()));
}

/// Low-band consistency minus weighted high-band dissimilarity between the
/// clean image and its perturbed counterpart (perturbation applied unclamped;
/// the clamp belongs to the model input path).
template <typename S>
Var<S> frequency_loss(Graph<S>& g, const Tensor<S>& clean, Var<S> delta, S hfc_weight,
                      bool use_hfc, bool use_lfc, const Tensor<S>* clean_low = nullptr,
                      const Tensor<S>* clean_high = nullptr) {
  if (!use_hfc && !use_lfc) return g.constant(Tensor<S>::scalar(S(0)));
  Var<S> adv = add(g.constant(clean), delta);
  Var<S> loss;
  if (use_lfc) {
    Tensor<S> ref = clean_low ? *clean_low : low_component(clean);
    loss = mse(low_component(adv), g.constant(std::move(ref)));
  }
  if (use_hfc) {
    Tensor<S> ref = clean_high ? *clean_high : high_component(clean);
    Var<S> h = scale(mse(high_component(adv), g.constant(std::move(ref))), -hfc_weight);
    loss = loss.valid() ? add(loss, h) : h;
  }
  return loss;
}

template <typename S>
Var<S> total_loss(Var<S> spatial, Var<S> frequency, S frequency_weight) {
  return add(spatial, scale(frequency, frequency_weight));
}

/// clamp(x + delta, 0, 1)
template <typename S>
Tensor<S> apply_uap(const Tensor<S>& x, const Tensor<S>& delta) {
  SEGFOOL_REQUIRE(x.same_shape(delta), "apply_uap: shape mismatch");
  Tensor<S> out = x;
  for (long i = 0; i < out.numel(); ++i) {
    S v = out.data[i] + delta.data[i];
    out.data[i] = v < S(0) ? S(0) : (v > S(1) ? S(1) : v);
  }
  return out;
}

template <typename S>
Var<S> apply_uap_var(Graph<S>& g, const Tensor<S>& x, Var<S> delta) {
  return clamp01(add(g.constant(x), delta));
}

struct Uap {
  Tensor<float> delta;  // [3, S, S], max-norm within epsilon
  float epsilon = 0.0f;
  std::string method = "darksam";
  AttackConfig config;
  std::vector<float> epoch_mean_loss;
};

/// Everything computed once per training image on clean inputs, shared by all
/// crafting objectives so method comparisons see identical prompt draws.
struct CraftContext {
  std::vector<Prompt> prompts;
  SemanticBlueprint blueprint;
  FakeMasks<float> fakes;
  std::vector<Tensor<float>> clean_logits;  // one per prompt
  Tensor<float> clean_features;
  Tensor<float> clean_low, clean_high;
};

struct CraftStep {
  int epoch = 0;
  int epochs_total = 0;
  int image_index = 0;
};

using LossBuilder =
    std::function<Var<float>(Graph<float>&, const ModelVars<float>&, const CraftContext&,
                             const Sample&, Var<float> adv, Var<float> delta, const CraftStep&)>;

struct CraftHooks {
  /// Called after each image update with the loss value, the signed step that
  /// was applied (before projection) and the projected perturbation.
  std::function<void(const CraftStep&, float loss, const Tensor<float>& step,
                     const Tensor<float>& delta)>
      on_step;
  std::function<void(int epoch, float mean_loss)> on_epoch;
};

/// Shared crafting loop: batch-size-1 passes over the training images, one
/// signed-gradient step per image, projection onto the L-inf ball after every
/// step. The objective is injected so baselines run the identical loop.
Uap craft_with_loss(const MiniSam<float>& model, const std::vector<Sample>& train,
                    const AttackConfig& cfg, const std::string& method, const LossBuilder& builder,
                    const CraftHooks& hooks = {});

LossBuilder darksam_loss(const AttackConfig& cfg);

Uap craft_uap(const MiniSam<float>& model, const std::vector<Sample>& train,
              const AttackConfig& cfg, const CraftHooks& hooks = {});

}  // namespace segfool
