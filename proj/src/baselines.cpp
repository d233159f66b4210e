#include "segfool/baselines.hpp"

namespace segfool {

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::Uap: return "uap";
    case BaselineKind::UapGd: return "uapgd";
    case BaselineKind::Ssp: return "ssp";
    case BaselineKind::SegPgd: return "segpgd";
    case BaselineKind::AttackSam: return "attacksam";
  }
  return "uap";
}

BaselineKind parse_baseline_kind(const std::string& name) {
  if (name == "uap") return BaselineKind::Uap;
  if (name == "uapgd") return BaselineKind::UapGd;
  if (name == "ssp") return BaselineKind::Ssp;
  if (name == "segpgd") return BaselineKind::SegPgd;
  if (name == "attacksam") return BaselineKind::AttackSam;
  throw ConfigError("unknown attack method: " + name);
}

namespace {

Tensor<float> mask01f(const Mask& m) {
  Tensor<float> t = Tensor<float>::zeros({m.rows, m.cols});
  for (std::size_t i = 0; i < m.on.size(); ++i) t.data[i] = m.on[i] ? 1.0f : 0.0f;
  return t;
}

/// Maximize deviation of prompted masks from their clean counterparts,
/// averaged over the auxiliary prompt set.
Var<float> uapgd_loss(Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                      const Sample& sample, Var<float> adv) {
  int size = sample.image.shape[1];
  Var<float> feats = encode_image(g, mv, size, adv);
  Var<float> total;
  for (std::size_t p = 0; p < ctx.prompts.size(); ++p) {
    Var<float> logits = decode_mask(g, mv, size, feats, ctx.prompts[p]);
    Var<float> dev = mse(logits, g.constant(ctx.clean_logits[p]));
    total = total.valid() ? add(total, dev) : dev;
  }
  return scale(total, -1.0f / static_cast<float>(ctx.prompts.size()));
}

/// Prompt-free feature distortion: maximize the gap between adversarial and
/// clean encoder features.
Var<float> ssp_loss(Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                    const Sample& sample, Var<float> adv) {
  int size = sample.image.shape[1];
  Var<float> feats = encode_image(g, mv, size, adv);
  return scale(mse(feats, g.constant(ctx.clean_features)), -1.0f);
}

/// Per-pixel cross-entropy toward the inverted clean mask with the published
/// schedule: pixels already flipped get weight t/(2T), the rest 1 - t/(2T).
Var<float> segpgd_loss(Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                       const Sample& sample, Var<float> adv, const CraftStep& st) {
  int size = sample.image.shape[1];
  float lambda_t = static_cast<float>(st.epoch) / (2.0f * static_cast<float>(st.epochs_total));
  Var<float> feats = encode_image(g, mv, size, adv);
  Var<float> total;
  for (std::size_t p = 0; p < ctx.prompts.size(); ++p) {
    Var<float> logits = decode_mask(g, mv, size, feats, ctx.prompts[p]);
    Mask clean = binarize(ctx.clean_logits[p]);
    Tensor<float> target = mask01f(clean.complement());
    const Tensor<float>& lv = g.value(logits);
    Tensor<float> weights = Tensor<float>::zeros(target.shape);
    for (long i = 0; i < lv.numel(); ++i) {
      bool pred_on = lv.data[static_cast<std::size_t>(i)] > 0.0f;
      bool flipped = pred_on == (target.data[static_cast<std::size_t>(i)] > 0.5f);
      weights.data[static_cast<std::size_t>(i)] = flipped ? lambda_t : 1.0f - lambda_t;
    }
    Var<float> term = weighted_bce_with_logits(logits, target, weights);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, 1.0f / static_cast<float>(ctx.prompts.size()));
}

/// Mask removal: push logits that are positive on the clean image down toward
/// -tau, through a clipped response so pressure stops at the boundary.
Var<float> attacksam_loss(Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                          const Sample& sample, Var<float> adv, float tau) {
  int size = sample.image.shape[1];
  Var<float> feats = encode_image(g, mv, size, adv);
  Var<float> total;
  int used = 0;
  for (std::size_t p = 0; p < ctx.prompts.size(); ++p) {
    Mask pos = binarize(ctx.clean_logits[p]);
    long count = pos.count();
    if (count == 0) continue;
    Var<float> logits = decode_mask(g, mv, size, feats, ctx.prompts[p]);
    Var<float> d = add_scalar(relu(logits), tau);
    Var<float> masked = mul(mul(d, d), g.constant(mask01f(pos)));
    float renorm = static_cast<float>(pos.rows) * static_cast<float>(pos.cols) /
                   static_cast<float>(count);
    Var<float> term = scale(reduce_mean(masked), renorm);
    total = total.valid() ? add(total, term) : term;
    ++used;
  }
  if (!total.valid()) return g.constant(Tensor<float>::scalar(0.0f));
  return scale(total, 1.0f / static_cast<float>(used));
}

/// Greedy per-image deviation: one fresh random prompt per visit, signed step
/// accumulated straight into the shared perturbation.
Var<float> uap_classic_loss(Graph<float>& g, const ModelVars<float>& mv, const MiniSam<float>& model,
                            const Sample& sample, Var<float> adv, const AttackConfig& cfg,
                            const CraftStep& st) {
  int size = sample.image.shape[1];
  Rng rng(derive_seed(derive_seed(cfg.seed, "uap-classic"),
                      static_cast<std::uint64_t>(st.epoch) * 1000003ull +
                          static_cast<std::uint64_t>(st.image_index)));
  Prompt p = Point{rng.uniform_int(0, size - 1), rng.uniform_int(0, size - 1)};
  Tensor<float> clean = predict(model, sample.image, p);
  Var<float> feats = encode_image(g, mv, size, adv);
  Var<float> logits = decode_mask(g, mv, size, feats, p);
  return scale(mse(logits, g.constant(clean)), -1.0f);
}

}  // namespace

LossBuilder baseline_loss(BaselineKind kind, const AttackConfig& cfg) {
  switch (kind) {
    case BaselineKind::UapGd:
      return [](Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                const Sample& s, Var<float> adv, Var<float>, const CraftStep&) {
        return uapgd_loss(g, mv, ctx, s, adv);
      };
    case BaselineKind::Ssp:
      return [](Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                const Sample& s, Var<float> adv, Var<float>, const CraftStep&) {
        return ssp_loss(g, mv, ctx, s, adv);
      };
    case BaselineKind::SegPgd:
      return [](Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                const Sample& s, Var<float> adv, Var<float>, const CraftStep& st) {
        return segpgd_loss(g, mv, ctx, s, adv, st);
      };
    case BaselineKind::AttackSam: {
      float tau = cfg.fake_magnitude;
      return [tau](Graph<float>& g, const ModelVars<float>& mv, const CraftContext& ctx,
                   const Sample& s, Var<float> adv, Var<float>, const CraftStep&) {
        return attacksam_loss(g, mv, ctx, s, adv, tau);
      };
    }
    case BaselineKind::Uap:
      break;
  }
  // classic UAP needs the model for fresh clean predictions; bound below
  return {};
}

Uap craft_baseline(BaselineKind kind, const MiniSam<float>& model,
                   const std::vector<Sample>& train, const AttackConfig& cfg,
                   const CraftHooks& hooks) {
  LossBuilder builder;
  if (kind == BaselineKind::Uap) {
    const MiniSam<float>* model_ptr = &model;
    AttackConfig cfg_copy = cfg;
    builder = [model_ptr, cfg_copy](Graph<float>& g, const ModelVars<float>& mv,
                                    const CraftContext&, const Sample& s, Var<float> adv,
                                    Var<float>, const CraftStep& st) {
      return uap_classic_loss(g, mv, *model_ptr, s, adv, cfg_copy, st);
    };
  } else {
    builder = baseline_loss(kind, cfg);
  }
  return craft_with_loss(model, train, cfg, to_string(kind), builder, hooks);
}

}  // namespace segfool
