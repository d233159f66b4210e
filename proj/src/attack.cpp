#include "segfool/attack.hpp"

#include <cmath>

namespace segfool {

namespace {

CraftContext build_context(const MiniSam<float>& model, const Sample& sample,
                           const AttackConfig& cfg, std::uint64_t image_index) {
  CraftContext ctx;
  Rng rng(derive_seed(derive_seed(cfg.seed, "shadow"), image_index));
  ShadowTarget target =
      build_shadow_target(model, sample.image, cfg.shadow_prompts, cfg.prompt_type, rng);
  ctx.prompts = std::move(target.prompts);
  ctx.blueprint = std::move(target.blueprint);
  ctx.fakes = make_fake_masks<float>(ctx.blueprint, cfg.fake_magnitude);

  Predictor<float> pred(model, sample.image);
  ctx.clean_features = pred.features();
  ctx.clean_logits.reserve(ctx.prompts.size());
  for (const Prompt& p : ctx.prompts) ctx.clean_logits.push_back(pred.logits(p));

  ctx.clean_low = low_component(sample.image);
  ctx.clean_high = high_component(sample.image);
  return ctx;
}

}  // namespace

LossBuilder darksam_loss(const AttackConfig& cfg) {
  return [cfg](Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
               const Sample& sample, Var<float> adv, Var<float> delta,
               const CraftStep&) -> Var<float> {
    Var<float> sa = spatial_loss(g, mv, sample.image.shape[1], adv, ctx.prompts, ctx.blueprint,
                                 ctx.fakes, cfg.use_fe, cfg.use_bm);
    Var<float> fa = frequency_loss(g, sample.image, delta, cfg.hfc_weight, cfg.use_hfc,
                                   cfg.use_lfc, &ctx.clean_low, &ctx.clean_high);
    return total_loss(sa, fa, cfg.frequency_weight);
  };
}

Uap craft_with_loss(const MiniSam<float>& model, const std::vector<Sample>& train,
                    const AttackConfig& cfg, const std::string& method, const LossBuilder& builder,
                    const CraftHooks& hooks) {
  SEGFOOL_REQUIRE(!train.empty(), "craft: need at least one training image");
  SEGFOOL_REQUIRE(cfg.epsilon > 0.0f, "craft: epsilon must be positive");
  SEGFOOL_REQUIRE(cfg.step_size > 0.0f, "craft: step size must be positive");
  SEGFOOL_REQUIRE(cfg.epochs >= 0, "craft: epoch count must be non-negative");
  SEGFOOL_REQUIRE(cfg.shadow_prompts >= 1, "craft: prompt count must be >= 1");
  const int size = model.image_size;
  for (const Sample& s : train) {
    SEGFOOL_REQUIRE(s.image.shape[1] == size && s.image.shape[2] == size,
                    "craft: image size does not match the model");
  }

  std::vector<CraftContext> contexts;
  contexts.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    contexts.push_back(build_context(model, train[i], cfg, i));
  }

  Uap uap;
  uap.delta = Tensor<float>::zeros({3, size, size});
  uap.epsilon = cfg.epsilon;
  uap.method = method;
  uap.config = cfg;

  Tensor<float> step = Tensor<float>::zeros({3, size, size});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      CraftStep st{epoch, cfg.epochs, static_cast<int>(i)};
      Graph<float> g;
      ModelVars<float> mv = register_model(g, model, false);
      Var<float> delta = g.leaf(uap.delta);
      Var<float> adv = apply_uap_var(g, train[i].image, delta);
      Var<float> loss = builder(g, mv, contexts[i], train[i], adv, delta, st);
      float loss_value = g.value(loss).item();
      if (!std::isfinite(loss_value)) {
        throw ComputeError("craft: non-finite loss at image " + std::to_string(i) + " (epoch " +
                           std::to_string(epoch) + ")");
      }
      loss_sum += loss_value;
      g.backward(loss);
      const Tensor<float>& grad = g.grad(delta);
      for (long k = 0; k < uap.delta.numel(); ++k) {
        float gk = grad.data[static_cast<std::size_t>(k)];
        float sk = gk > 0.0f ? -cfg.step_size : (gk < 0.0f ? cfg.step_size : 0.0f);
        step.data[static_cast<std::size_t>(k)] = sk;
        float v = uap.delta.data[static_cast<std::size_t>(k)] + sk;
        v = v < -cfg.epsilon ? -cfg.epsilon : (v > cfg.epsilon ? cfg.epsilon : v);
        uap.delta.data[static_cast<std::size_t>(k)] = v;
      }
      if (hooks.on_step) hooks.on_step(st, loss_value, step, uap.delta);
    }
    float mean = static_cast<float>(loss_sum / train.size());
    uap.epoch_mean_loss.push_back(mean);
    if (hooks.on_epoch) hooks.on_epoch(epoch, mean);
  }
  return uap;
}

Uap craft_uap(const MiniSam<float>& model, const std::vector<Sample>& train,
              const AttackConfig& cfg, const CraftHooks& hooks) {
  SEGFOOL_REQUIRE(cfg.use_fe || cfg.use_bm || cfg.use_hfc || cfg.use_lfc,
                  "craft: at least one loss term must stay enabled");
  return craft_with_loss(model, train, cfg, "darksam", darksam_loss(cfg), hooks);
}

}  // namespace segfool
