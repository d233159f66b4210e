#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "segfool/dataset.hpp"
#include "segfool/minisam.hpp"

namespace segfool {

namespace {

Tensor<float> mask_to_target(const Mask& m) {
  Tensor<float> t = Tensor<float>::zeros({m.rows, m.cols});
  for (std::size_t i = 0; i < m.on.size(); ++i) t.data[i] = m.on[i] ? 1.0f : 0.0f;
  return t;
}

Mask union_of(const std::vector<Mask>& masks, int size) {
  Mask u(size, size);
  for (const auto& m : masks) u.unite(m);
  return u;
}

/// One of the eight axis symmetries of the square, applied to image, masks
/// and prompt coordinates alike.
struct Dihedral {
  bool flip_r = false, flip_c = false, transpose = false;

  std::pair<int, int> map(int r, int c, int size) const {
    if (transpose) std::swap(r, c);
    if (flip_r) r = size - 1 - r;
    if (flip_c) c = size - 1 - c;
    return {r, c};
  }

  Tensor<float> apply(const Tensor<float>& img) const {
    int size = img.shape[1];
    Tensor<float> out = Tensor<float>::zeros(img.shape);
    for (int ch = 0; ch < img.shape[0]; ++ch) {
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          auto [nr, nc] = map(r, c, size);
          out(ch, nr, nc) = img(ch, r, c);
        }
      }
    }
    return out;
  }

  Mask apply(const Mask& m) const {
    Mask out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c) {
        auto [nr, nc] = map(r, c, m.rows);
        out.at(nr, nc) = m.at(r, c);
      }
    }
    return out;
  }
};

/// Pixels within `radius` (Chebyshev) of the mask edge, on either side.
Mask boundary_band(const Mask& m, int radius) {
  Mask band(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      bool edge = false;
      std::uint8_t v = m.at(r, c);
      for (int dr = -radius; dr <= radius && !edge; ++dr) {
        for (int dc = -radius; dc <= radius && !edge; ++dc) {
          int nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= m.rows || nc < 0 || nc >= m.cols) continue;
          if (m.at(nr, nc) != v) edge = true;
        }
      }
      if (edge) band.at(r, c) = 1;
    }
  }
  return band;
}

}  // namespace

MiniSam<float> train_victim(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                            const TrainProgress& progress) {
  SEGFOOL_REQUIRE(!dataset.empty(), "train_victim: dataset is empty");
  for (const auto& s : dataset) {
    SEGFOOL_REQUIRE(!s.instances.empty(), "train_victim: sample without instance masks");
  }
  int size = dataset.front().image.shape[1];
  MiniSam<float> model = MiniSam<float>::init(size, cfg.seed);
  Rng rng(derive_seed(cfg.seed, "train"));

  const Tensor<float> empty_target = Tensor<float>::zeros({size, size});

  std::vector<Tensor<float>> velocity;
  for (const auto& [name, t] : model.parameters()) {
    (void)name;
    velocity.push_back(Tensor<float>::zeros(t->shape));
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Foreground weight anneals to 1 over the first 60% of training: the
    // boost un-sticks the all-background start, the decay removes the
    // decision-boundary dilation it would otherwise leave behind.
    float anneal = 1.0f;
    if (cfg.epochs > 1) {
      float horizon = 0.6f * static_cast<float>(cfg.epochs);
      anneal = std::max(0.0f, 1.0f - static_cast<float>(epoch) / horizon);
    }
    float pos_weight = 2.0f + (cfg.positive_weight - 2.0f) * anneal;
    // warmup keeps the first epochs from killing decoder relus outright;
    // step decay later sharpens boundaries once the coarse solution is in
    float lr = cfg.learning_rate;
    if (epoch == 0) lr *= 0.3f;
    if (cfg.epochs >= 10 && epoch >= (7 * cfg.epochs) / 10) lr *= 0.2f;

    double loss_sum = 0.0;
    long steps = 0;
    for (int rep = 0; rep < cfg.steps_per_image; ++rep) {
      for (std::size_t idx = 0; idx < dataset.size(); ++idx) {
        const Sample& s = dataset[idx];
        // Random square symmetry per step; eight views per scene close most
        // of the train/test gap that 100 images leave.
        Dihedral aug{rng.coin(0.5), rng.coin(0.5), rng.coin(0.5)};
        Tensor<float> image = aug.apply(s.image);

        // One prompt per step: a random instance with a random prompt type,
        // or occasionally a background point trained toward the empty mask.
        Prompt prompt;
        const Tensor<float>* target = nullptr;
        Tensor<float> inst_target;
        Mask inst_mask;
        if (rng.coin(cfg.background_prompt_prob)) {
          Mask bg = union_of(s.instances, size).complement();
          bg = aug.apply(bg);
          prompt = bg.empty_mask() ? Prompt{Point{0, 0}} : Prompt{extract_point_prompt(bg, rng)};
          target = &empty_target;
        } else {
          int inst = rng.uniform_int(0, static_cast<int>(s.instances.size()) - 1);
          inst_mask = aug.apply(s.instances[static_cast<std::size_t>(inst)]);
          if (rng.coin(0.5)) {
            prompt = extract_point_prompt(inst_mask, rng);
          } else {
            prompt = extract_box_prompt(inst_mask);
          }
          inst_target = mask_to_target(inst_mask);
          target = &inst_target;
        }

        Graph<float> g;
        ModelVars<float> mv = register_model(g, model, true);
        Var<float> logits = predict_logits(g, mv, size, g.constant(image), prompt);
        Tensor<float> weights = Tensor<float>::full(target->shape, 1.0f);
        for (long i = 0; i < target->numel(); ++i) {
          if (target->data[static_cast<std::size_t>(i)] > 0.5f) {
            weights.data[static_cast<std::size_t>(i)] = pos_weight;
          }
        }
        if (target == &inst_target) {
          // concentrate supervision where the mask boundary must land
          Mask band = boundary_band(inst_mask, 2);
          for (std::size_t i = 0; i < band.on.size(); ++i) {
            if (band.on[i]) weights.data[i] += cfg.boundary_weight;
          }
        }
        Var<float> loss = weighted_bce_with_logits(logits, *target, weights);
        float loss_value = g.value(loss).item();
        if (!std::isfinite(loss_value)) {
          throw ComputeError("train_victim: loss diverged (non-finite) at epoch " +
                             std::to_string(epoch) + ", image " + std::to_string(idx));
        }
        loss_sum += loss_value;
        ++steps;
        g.backward(loss);

        auto params = model.parameters();
        auto vars = {mv.conv1_w, mv.conv1_b, mv.conv2_w, mv.conv2_b, mv.conv3_w, mv.conv3_b,
                     mv.point_proj_w, mv.point_proj_b, mv.box_proj_w, mv.box_proj_b,
                     mv.dconv1_w,  mv.dconv1_b, mv.dconv2_w, mv.dconv2_b};
        std::size_t pi = 0;
        for (Var<float> v : vars) {
          Tensor<float>* p = params[pi].second;
          Tensor<float>& vel = velocity[pi];
          ++pi;
          const Tensor<float>& grad = g.grad(v);
          for (long i = 0; i < p->numel(); ++i) {
            auto k = static_cast<std::size_t>(i);
            vel.data[k] = cfg.momentum * vel.data[k] + grad.data[k];
            p->data[k] -= lr * vel.data[k];
          }
        }
      }
    }
    if (progress) progress(epoch, static_cast<float>(loss_sum / steps));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Weights file: "MSAM", version byte, then per-parameter records of
// (u32 name length, name, u8 rank, u32 dims..., little-endian f32 payload).
// The image size rides along as a scalar record so a file fully determines
// the model.
// ---------------------------------------------------------------------------

namespace {

constexpr char kWeightsMagic[4] = {'M', 'S', 'A', 'M'};
constexpr std::uint8_t kWeightsVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(std::string("weights file truncated reading ") + what + " at offset " +
                        std::to_string(offset_));
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint8_t u8(const char* what) {
    unsigned char b;
    bytes(&b, 1, what);
    return b;
  }

  bool at_eof() {
    return is_.peek() == std::char_traits<char>::eof();
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

void write_record(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 4));
}

}  // namespace

void save_weights(const MiniSam<float>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kWeightsMagic, 4);
  os.write(reinterpret_cast<const char*>(&kWeightsVersion), 1);
  Tensor<float> size_rec({1}, {static_cast<float>(model.image_size)});
  write_record(os, "image_size", size_rec);
  for (const auto& [name, t] : model.parameters()) write_record(os, name, *t);
  if (!os) throw IoError("write failed: " + path);
}

MiniSam<float> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights file: " + path);
  Reader r(is);

  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw FormatError("weights file has bad magic at offset 0");
  }
  std::uint8_t version = r.u8("version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weights file version " + std::to_string(version));
  }

  std::vector<std::pair<std::string, Tensor<float>>> records;
  while (!r.at_eof()) {
    std::uint32_t name_len = r.u32("name length");
    if (name_len > 4096) {
      throw FormatError("implausible name length at offset " + std::to_string(r.offset() - 4));
    }
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "name");
    std::uint8_t rank = r.u8("rank");
    std::vector<int> shape(rank);
    long numel = 1;
    for (int i = 0; i < rank; ++i) {
      shape[static_cast<std::size_t>(i)] = static_cast<int>(r.u32("dimension"));
      numel *= shape[static_cast<std::size_t>(i)];
    }
    if (numel < 0 || numel > (1L << 28)) {
      throw FormatError("implausible tensor size at offset " + std::to_string(r.offset()));
    }
    Tensor<float> t = Tensor<float>::zeros(shape);
    r.bytes(t.data.data(), static_cast<std::size_t>(numel) * 4, "payload");
    records.emplace_back(std::move(name), std::move(t));
  }

  auto find = [&records](const std::string& name) -> Tensor<float>& {
    for (auto& [n, t] : records) {
      if (n == name) return t;
    }
    throw FormatError("weights file is missing parameter: " + name);
  };

  int image_size = static_cast<int>(find("image_size").item());
  MiniSam<float> model = MiniSam<float>::init(image_size, 0);
  for (auto& [name, t] : model.parameters()) {
    Tensor<float>& rec = find(name);
    if (rec.shape != t->shape) {
      throw FormatError("weights file parameter " + name + " has unexpected shape " +
                        shape_string(rec.shape));
    }
    *t = rec;
  }
  return model;
}

}  // namespace segfool
