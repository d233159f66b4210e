#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "segfool/prompt.hpp"
#include "segfool/rng.hpp"
#include "segfool/tensor.hpp"

namespace segfool {

/// Compact prompt-guided mask predictor: conv encoder, sinusoidal prompt
/// encoder, additive fusion, small conv decoder with x4 bilinear upsample.
/// Logits threshold at zero. Templated on scalar so gradient-check suites can
/// run the identical forward pass in double precision.
template <typename S>
struct MiniSam {
  int image_size = 64;  // divisible by 4

  Tensor<S> conv1_w, conv1_b;  // 16 x 3 x 3 x 3, stride 2
  Tensor<S> conv2_w, conv2_b;  // 32 x 16 x 3 x 3, stride 2
  Tensor<S> conv3_w, conv3_b;  // 32 x 32 x 3 x 3, stride 1
  Tensor<S> point_proj_w, point_proj_b;  // 32 x 64
  Tensor<S> box_proj_w, box_proj_b;      // 32 x 128
  Tensor<S> dconv1_w, dconv1_b;  // 16 x 32 x 3 x 3
  Tensor<S> dconv2_w, dconv2_b;  // 1 x 16 x 3 x 3

  static constexpr int kFrequencies = 16;
  static constexpr int kCodeDim = 4 * kFrequencies;  // sin/cos per axis
  static constexpr int kEmbedDim = 32;

  int grid() const { return image_size / 4; }

  static MiniSam init(int image_size, std::uint64_t seed) {
    SEGFOOL_REQUIRE(image_size >= 8 && image_size % 4 == 0,
                    "MiniSam: image size must be divisible by 4");
    MiniSam m;
    m.image_size = image_size;
    Rng rng(derive_seed(seed, "victim-init"));
    auto he = [&rng](std::vector<int> shape, int fan_in) {
      Tensor<S> t = Tensor<S>::zeros(shape);
      S std_dev = static_cast<S>(std::sqrt(2.0 / fan_in));
      for (auto& v : t.data) v = static_cast<S>(rng.normal()) * std_dev;
      return t;
    };
    m.conv1_w = he({16, 3, 3, 3}, 3 * 9);
    m.conv1_b = Tensor<S>::zeros({16});
    m.conv2_w = he({32, 16, 3, 3}, 16 * 9);
    m.conv2_b = Tensor<S>::zeros({32});
    // Channel allocation at init: texture features start on channels 0..15
    // (conv3 silent on the rest), position codes start on channels 16..31
    // (projection rows near zero elsewhere). The decoder then sees the two
    // signals in disjoint subspaces from the first step; training is free to
    // remix them.
    m.conv3_w = he({32, 32, 3, 3}, 32 * 9);
    for (int o = 16; o < 32; ++o) {
      for (int i = 0; i < 32 * 9; ++i) m.conv3_w.data[static_cast<std::size_t>(o * 32 * 9 + i)] = S(0);
    }
    m.conv3_b = Tensor<S>::zeros({32});
    // Rows 16..31 select sin/cos at 1, 2, 3 and 4 cycles per image for each
    // axis, a matching basis whose kernel separates neighboring instances.
    // The box projection starts as the average of the two corner projections
    // in the same basis. Small noise breaks symmetry; training refines freely.
    m.point_proj_w = he({kEmbedDim, kCodeDim}, 16 * kCodeDim);
    m.box_proj_w = he({kEmbedDim, 2 * kCodeDim}, 16 * 2 * kCodeDim);
    for (int j = 0; j < 16; ++j) {
      int axis = j / 8;           // 0: row coordinate, 1: column coordinate
      int pair = (j % 8) / 2;     // frequency slot 0..3
      int trig = j % 2;           // sin or cos
      int freq_index = 4 * pair + 3;  // f = 1, 2, 3, 4 when base is 0.25..4
      int code_index = axis * 2 * kFrequencies + 2 * freq_index + trig;
      m.point_proj_w(16 + j, code_index) += S(1);
      m.box_proj_w(16 + j, code_index) += S(0.5);
      m.box_proj_w(16 + j, kCodeDim + code_index) += S(0.5);
    }
    m.point_proj_b = Tensor<S>::zeros({kEmbedDim});
    m.box_proj_b = Tensor<S>::zeros({kEmbedDim});
    m.dconv1_w = he({16, 32, 3, 3}, 32 * 9);
    m.dconv1_b = Tensor<S>::zeros({16});
    // zero-init the logit head: training starts from neutral predictions,
    // which keeps the early background-heavy gradient from killing the
    // decoder relus
    m.dconv2_w = Tensor<S>::zeros({1, 16, 3, 3});
    m.dconv2_b = Tensor<S>::zeros({1});
    return m;
  }

  std::vector<std::pair<std::string, Tensor<S>*>> parameters() {
    return {{"conv1_w", &conv1_w}, {"conv1_b", &conv1_b}, {"conv2_w", &conv2_w},
            {"conv2_b", &conv2_b}, {"conv3_w", &conv3_w}, {"conv3_b", &conv3_b},
            {"point_proj_w", &point_proj_w}, {"point_proj_b", &point_proj_b},
            {"box_proj_w", &box_proj_w}, {"box_proj_b", &box_proj_b},
            {"dconv1_w", &dconv1_w}, {"dconv1_b", &dconv1_b},
            {"dconv2_w", &dconv2_w}, {"dconv2_b", &dconv2_b}};
  }
  std::vector<std::pair<std::string, const Tensor<S>*>> parameters() const {
    auto mut = const_cast<MiniSam*>(this)->parameters();
    std::vector<std::pair<std::string, const Tensor<S>*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
  }
};

namespace samdetail {

/// Sinusoidal code of one normalized coordinate pair, frequencies 0.25..4
/// cycles per image, low enough that the position-matching kernel spans a
/// whole instance around the prompt.
template <typename S>
void write_code(S u, S v, S* dst) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  int k = MiniSam<S>::kFrequencies;
  for (int i = 0; i < k; ++i) {
    double f = 0.25 * (i + 1);
    dst[2 * i] = static_cast<S>(std::sin(kTwoPi * f * static_cast<double>(u)));
    dst[2 * i + 1] = static_cast<S>(std::cos(kTwoPi * f * static_cast<double>(u)));
  }
  S* dv = dst + 2 * k;
  for (int i = 0; i < k; ++i) {
    double f = 0.25 * (i + 1);
    dv[2 * i] = static_cast<S>(std::sin(kTwoPi * f * static_cast<double>(v)));
    dv[2 * i + 1] = static_cast<S>(std::cos(kTwoPi * f * static_cast<double>(v)));
  }
}

template <typename S>
Tensor<S> point_code(const Point& p, int size) {
  Tensor<S> code = Tensor<S>::zeros({MiniSam<S>::kCodeDim, 1});
  S u = static_cast<S>((p.row + 0.5) / size);
  S v = static_cast<S>((p.col + 0.5) / size);
  write_code(u, v, code.data.data());
  return code;
}

template <typename S>
Tensor<S> box_code(const Box& b, int size) {
  Tensor<S> code = Tensor<S>::zeros({2 * MiniSam<S>::kCodeDim, 1});
  write_code(static_cast<S>((b.r0 + 0.5) / size), static_cast<S>((b.c0 + 0.5) / size),
             code.data.data());
  write_code(static_cast<S>((b.r1 + 0.5) / size), static_cast<S>((b.c1 + 0.5) / size),
             code.data.data() + MiniSam<S>::kCodeDim);
  return code;
}

/// Codes of every feature-grid cell center, one column per cell.
template <typename S>
Tensor<S> grid_codes(int size) {
  int g = size / 4;
  Tensor<S> codes = Tensor<S>::zeros({MiniSam<S>::kCodeDim, g * g});
  std::vector<S> buf(static_cast<std::size_t>(MiniSam<S>::kCodeDim));
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      S u = static_cast<S>((4.0 * i + 2.0) / size);
      S v = static_cast<S>((4.0 * j + 2.0) / size);
      write_code(u, v, buf.data());
      for (int d = 0; d < MiniSam<S>::kCodeDim; ++d) {
        codes(d, i * g + j) = buf[static_cast<std::size_t>(d)];
      }
    }
  }
  return codes;
}

}  // namespace samdetail

/// Weight handles of a model registered as leaves (trainable) or constants
/// (frozen) on a graph.
template <typename S>
struct ModelVars {
  Var<S> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  Var<S> point_proj_w, point_proj_b, box_proj_w, box_proj_b;
  Var<S> dconv1_w, dconv1_b, dconv2_w, dconv2_b;
};

template <typename S>
ModelVars<S> register_model(Graph<S>& g, const MiniSam<S>& m, bool trainable) {
  auto put = [&](const Tensor<S>& t) { return trainable ? g.leaf(t) : g.constant(t); };
  ModelVars<S> v;
  v.conv1_w = put(m.conv1_w);
  v.conv1_b = put(m.conv1_b);
  v.conv2_w = put(m.conv2_w);
  v.conv2_b = put(m.conv2_b);
  v.conv3_w = put(m.conv3_w);
  v.conv3_b = put(m.conv3_b);
  v.point_proj_w = put(m.point_proj_w);
  v.point_proj_b = put(m.point_proj_b);
  v.box_proj_w = put(m.box_proj_w);
  v.box_proj_b = put(m.box_proj_b);
  v.dconv1_w = put(m.dconv1_w);
  v.dconv1_b = put(m.dconv1_b);
  v.dconv2_w = put(m.dconv2_w);
  v.dconv2_b = put(m.dconv2_b);
  return v;
}

/// Image encoder: three conv blocks (stride 2, 2, 1) plus a fixed-position
/// code map projected through the point projection and added to the features,
/// giving the decoder per-cell absolute position to compare prompts against.
template <typename S>
Var<S> encode_image(Graph<S>& g, const ModelVars<S>& m, int image_size, Var<S> x) {
  int grid = image_size / 4;
  Var<S> h1 = relu(bias_add(conv2d(x, m.conv1_w, 2, 1), m.conv1_b));
  Var<S> h2 = relu(bias_add(conv2d(h1, m.conv2_w, 2, 1), m.conv2_b));
  Var<S> h3 = relu(bias_add(conv2d(h2, m.conv3_w, 1, 1), m.conv3_b));
  Var<S> codes = g.constant(samdetail::grid_codes<S>(image_size));
  Var<S> pe = reshape(matmul(m.point_proj_w, codes),
                      {MiniSam<S>::kEmbedDim, grid, grid});
  return add(h3, pe);
}

/// Prompt embedding: projected sinusoidal code; a box embeds both corners,
/// a multipoint averages its point embeddings.
template <typename S>
Var<S> embed_prompt(Graph<S>& g, const ModelVars<S>& m, int image_size, const Prompt& prompt) {
  check_prompt_bounds(prompt, image_size);
  SEGFOOL_REQUIRE(!std::holds_alternative<EverythingGrid>(prompt),
                  "predict: grid prompts are expanded by the evaluator, not the model");
  if (const auto* pt = std::get_if<Point>(&prompt)) {
    Var<S> code = g.constant(samdetail::point_code<S>(*pt, image_size));
    return bias_add(reshape(matmul(m.point_proj_w, code), {MiniSam<S>::kEmbedDim}),
                    m.point_proj_b);
  }
  if (const auto* bx = std::get_if<Box>(&prompt)) {
    Var<S> code = g.constant(samdetail::box_code<S>(*bx, image_size));
    return bias_add(reshape(matmul(m.box_proj_w, code), {MiniSam<S>::kEmbedDim}), m.box_proj_b);
  }
  const auto& mp = std::get<MultiPoint>(prompt);
  Var<S> acc;
  for (const Point& p : mp.points) {
    Var<S> code = g.constant(samdetail::point_code<S>(p, image_size));
    Var<S> e = bias_add(reshape(matmul(m.point_proj_w, code), {MiniSam<S>::kEmbedDim}),
                        m.point_proj_b);
    acc = acc.valid() ? add(acc, e) : e;
  }
  return scale(acc, static_cast<S>(1.0 / mp.points.size()));
}

/// Decode fused features into S x S logits.
template <typename S>
Var<S> decode_mask(Graph<S>& g, const ModelVars<S>& m, int image_size, Var<S> features,
                   const Prompt& prompt) {
  Var<S> emb = embed_prompt(g, m, image_size, prompt);
  Var<S> fused = bias_add(features, emb);
  Var<S> d1 = relu(bias_add(conv2d(fused, m.dconv1_w, 1, 1), m.dconv1_b));
  Var<S> d2 = bias_add(conv2d(d1, m.dconv2_w, 1, 1), m.dconv2_b);
  Var<S> up = upsample_bilinear(d2, 4);
  return reshape(up, {image_size, image_size});
}

template <typename S>
Var<S> predict_logits(Graph<S>& g, const ModelVars<S>& m, int image_size, Var<S> x,
                      const Prompt& prompt) {
  return decode_mask(g, m, image_size, encode_image(g, m, image_size, x), prompt);
}

/// Plain inference: image in, prompt in, real-valued mask logits out.
template <typename S>
Tensor<S> predict(const MiniSam<S>& model, const Tensor<S>& image, const Prompt& prompt) {
  SEGFOOL_REQUIRE(image.rank() == 3 && image.shape[0] == 3 &&
                      image.shape[1] == model.image_size && image.shape[2] == model.image_size,
                  "predict: image shape mismatch");
  Graph<S> g;
  ModelVars<S> mv = register_model(g, model, false);
  Var<S> logits = predict_logits(g, mv, model.image_size, g.constant(image), prompt);
  return g.value(logits);
}

/// Shared-encoder batch of prompt predictions on one image.
template <typename S>
class Predictor {
 public:
  Predictor(const MiniSam<S>& model, const Tensor<S>& image) : size_(model.image_size) {
    vars_ = register_model(g_, model, false);
    features_ = encode_image(g_, vars_, size_, g_.constant(image));
  }

  Tensor<S> logits(const Prompt& prompt) {
    return g_.value(decode_mask(g_, vars_, size_, features_, prompt));
  }

  const Tensor<S>& features() const { return g_.value(features_); }

 private:
  Graph<S> g_;
  ModelVars<S> vars_;
  Var<S> features_;
  int size_;
};

/// Mask pixels are the strictly positive logits.
template <typename S>
Mask binarize(const Tensor<S>& logits) {
  SEGFOOL_REQUIRE(logits.rank() == 2, "binarize: logits must be rank 2");
  Mask m(logits.shape[0], logits.shape[1]);
  for (std::size_t i = 0; i < m.on.size(); ++i) m.on[i] = logits.data[i] > S(0) ? 1 : 0;
  return m;
}

// --- float-only training and persistence, implemented in minisam_train.cpp ---

struct TrainConfig {
  int epochs = 30;
  float learning_rate = 4e-3f;
  // heavy-ball momentum; plain descent either collapses to constant
  // predictions or stalls far below usable accuracy on this objective
  float momentum = 0.9f;
  // prompt draws per image within one epoch; a single draw per image leaves
  // prompt coverage too sparse to close the last mIoU points in 30 epochs
  int steps_per_image = 16;
  std::uint64_t seed = 100;
  double background_prompt_prob = 0.0;
  // weight of foreground pixels in the per-pixel cross-entropy; instances
  // cover only a few percent of each image, so unweighted training collapses
  // to all-background predictions
  float positive_weight = 10.0f;
  // extra weight on pixels within two pixels of the target mask edge; the
  // upsampled logit ramp needs concentrated supervision to land the zero
  // crossing on the true boundary
  float boundary_weight = 5.0f;
};

struct Sample;  // dataset.hpp

using TrainProgress = std::function<void(int epoch, float mean_loss)>;

MiniSam<float> train_victim(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                            const TrainProgress& progress = {});

void save_weights(const MiniSam<float>& model, const std::string& path);
MiniSam<float> load_weights(const std::string& path);

}  // namespace segfool
