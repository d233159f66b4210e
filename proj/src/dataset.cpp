#include "segfool/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

namespace segfool {

namespace {

using Color = std::array<float, 3>;

float quantize(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  return std::round(v * 255.0f) / 255.0f;
}

/// Complementary color pair around mid gray, so per-channel region means match
/// the background and local texture is the only reliable cue.
std::pair<Color, Color> draw_color_pair(Rng& rng) {
  Color a, b;
  for (int c = 0; c < 3; ++c) {
    float d = static_cast<float>(rng.uniform(0.18, 0.32));
    if (rng.coin(0.5)) d = -d;
    a[c] = 0.5f + d;
    b[c] = 0.5f - d;
  }
  return {a, b};
}

Color draw_solid_color(Rng& rng) {
  Color c;
  for (int i = 0; i < 3; ++i) {
    float d = static_cast<float>(rng.uniform(0.25, 0.4));
    c[i] = rng.coin(0.5) ? 0.5f + d : 0.5f - d;
  }
  return c;
}

struct TexturePaint {
  std::string kind;
  Color c1, c2;
  int cell = 1;  // pixel period / 2 for checker and stripes

  Color at(int r, int c, Rng& pixel_rng) const {
    if (kind == "solid") return c1;
    if (kind == "checker") return ((r / cell + c / cell) % 2 == 0) ? c1 : c2;
    if (kind == "stripes-horizontal") return ((r / cell) % 2 == 0) ? c1 : c2;
    if (kind == "stripes-vertical") return ((c / cell) % 2 == 0) ? c1 : c2;
    // noise: independent blend per pixel
    float t = static_cast<float>(pixel_rng.uniform());
    return {c1[0] + t * (c2[0] - c1[0]), c1[1] + t * (c2[1] - c1[1]),
            c1[2] + t * (c2[2] - c1[2])};
  }
};

TexturePaint make_paint(const std::string& kind, Rng& rng) {
  TexturePaint p;
  p.kind = kind;
  if (kind == "solid") {
    p.c1 = draw_solid_color(rng);
    p.c2 = p.c1;
  } else {
    auto [a, b] = draw_color_pair(rng);
    p.c1 = a;
    p.c2 = b;
    p.cell = rng.coin(0.7) ? 1 : 2;
  }
  return p;
}

struct PlacedShape {
  Mask mask;
  int r0, c0, r1, c1;  // tight bounds
};

Mask rasterize_shape(const std::string& shape, int size, int r0, int c0, int h, int w, Rng& rng) {
  Mask m(size, size);
  if (shape == "rectangle") {
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) m.at(r, c) = 1;
  } else if (shape == "ellipse") {
    double cy = r0 + (h - 1) / 2.0, cx = c0 + (w - 1) / 2.0;
    double ry = h / 2.0, rx = w / 2.0;
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) {
        double dy = (r - cy) / ry, dx = (c - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) m.at(r, c) = 1;
      }
    }
  } else if (shape == "triangle") {
    // three vertices on the bounding box with a jittered apex
    double ax = c0 + rng.uniform(0.2, 0.8) * (w - 1), ay = r0;
    double bx = c0, by = r0 + h - 1;
    double cx = c0 + w - 1, cy = r0 + h - 1;
    auto edge = [](double x0, double y0, double x1, double y1, double px, double py) {
      return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
    };
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) {
        double e0 = edge(ax, ay, bx, by, c, r);
        double e1 = edge(bx, by, cx, cy, c, r);
        double e2 = edge(cx, cy, ax, ay, c, r);
        bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        if (inside) m.at(r, c) = 1;
      }
    }
  } else {
    throw ConfigError("unknown shape kind: " + shape);
  }
  return m;
}

bool boxes_too_close(int ar0, int ac0, int ar1, int ac1, const PlacedShape& b, int gap) {
  return !(ar0 > b.r1 + gap || b.r0 > ar1 + gap || ac0 > b.c1 + gap || b.c0 > ac1 + gap);
}

bool mask_connected(const Mask& m) {
  long total = m.count();
  if (total == 0) return false;
  std::vector<std::uint8_t> seen(m.on.size(), 0);
  std::deque<std::pair<int, int>> q;
  for (int r = 0; r < m.rows && q.empty(); ++r)
    for (int c = 0; c < m.cols && q.empty(); ++c)
      if (m.at(r, c)) {
        q.emplace_back(r, c);
        seen[static_cast<std::size_t>(r) * m.cols + c] = 1;
      }
  long reached = 0;
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop_front();
    ++reached;
    const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= m.rows || nc < 0 || nc >= m.cols) continue;
      std::size_t idx = static_cast<std::size_t>(nr) * m.cols + nc;
      if (m.on[idx] && !seen[idx]) {
        seen[idx] = 1;
        q.emplace_back(nr, nc);
      }
    }
  }
  return reached == total;
}

Sample generate_sample(const SceneSpec& spec, std::uint64_t sample_seed) {
  const int size = spec.size;
  Rng rng(sample_seed);

  // Per-sample photometric variation keeps the victim from keying on one
  // absolute contrast or brightness level.
  float amp = static_cast<float>(rng.uniform(0.7, 1.0));
  float offset = static_cast<float>(rng.uniform(-0.12, 0.12));
  float bg_value = static_cast<float>(rng.uniform(0.45, 0.55));

  for (int attempt_scene = 0; attempt_scene < 8; ++attempt_scene) {
    int want = rng.uniform_int(spec.instances_min, spec.instances_max);
    // fewer instances after repeated placement failure
    want = std::max(1, want - attempt_scene);

    std::vector<PlacedShape> placed;
    std::vector<std::string> tags;
    std::vector<TexturePaint> paints;

    // distinct texture per instance when possible
    std::vector<std::string> texture_order = spec.textures;
    for (std::size_t i = texture_order.size(); i > 1; --i) {
      std::swap(texture_order[i - 1], texture_order[rng.next_below(static_cast<std::uint32_t>(i))]);
    }

    bool scene_ok = true;
    for (int inst = 0; inst < want; ++inst) {
      bool placed_ok = false;
      for (int attempt = 0; attempt < 1000 && !placed_ok; ++attempt) {
        double area_frac = rng.uniform(0.07, 0.16);
        double aspect = rng.uniform(0.6, 1.667);
        int h = static_cast<int>(std::lround(std::sqrt(area_frac * size * size / aspect)));
        int w = static_cast<int>(std::lround(h * aspect));
        h = std::clamp(h, 7, size - 2);
        w = std::clamp(w, 7, size - 2);
        int r0 = rng.uniform_int(1, size - 1 - h);
        int c0 = rng.uniform_int(1, size - 1 - w);
        const int gap = 12;
        bool clash = false;
        for (const auto& p : placed) {
          if (boxes_too_close(r0, c0, r0 + h - 1, c0 + w - 1, p, gap)) {
            clash = true;
            break;
          }
        }
        if (clash) continue;
        const std::string& shape = spec.shapes[rng.next_below(
            static_cast<std::uint32_t>(spec.shapes.size()))];
        Mask m = rasterize_shape(shape, size, r0, c0, h, w, rng);
        long area = m.count();
        double frac = static_cast<double>(area) / (size * size);
        if (frac < 0.02 || frac > 0.30 || !mask_connected(m)) continue;
        placed.push_back({std::move(m), r0, c0, r0 + h - 1, c0 + w - 1});
        const std::string& tex = texture_order[inst % texture_order.size()];
        tags.push_back(tex);
        paints.push_back(make_paint(tex, rng));
        placed_ok = true;
      }
      if (!placed_ok) {
        scene_ok = false;
        break;
      }
    }
    if (!scene_ok) continue;

    // paint background then instances
    TexturePaint bg = make_paint(spec.background, rng);
    if (spec.background == "solid") {
      bg.c1 = {bg_value, bg_value, bg_value};
      bg.c2 = bg.c1;
    }
    Sample s;
    s.image = Tensor<float>::zeros({3, size, size});
    Rng pixel_rng(derive_seed(sample_seed, "pixels"));
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        Color col = bg.at(r, c, pixel_rng);
        for (std::size_t i = 0; i < placed.size(); ++i) {
          if (placed[i].mask.at(r, c)) {
            col = paints[i].at(r, c, pixel_rng);
            break;
          }
        }
        for (int ch = 0; ch < 3; ++ch) {
          s.image(ch, r, c) = quantize(0.5f + amp * (col[ch] - 0.5f) + offset);
        }
      }
    }
    for (auto& p : placed) s.instances.push_back(std::move(p.mask));
    s.texture_tags = std::move(tags);
    return s;
  }
  throw ComputeError("scene generation failed repeatedly; spec is over-constrained");
}

}  // namespace

void SceneSpec::validate() const {
  if (size < 8 || size % 4 != 0) throw ConfigError("data.size must be >= 8 and divisible by 4");
  if (instances_min < 1 || instances_max < instances_min)
    throw ConfigError("bad instance count range");
  if (shapes.empty() || textures.empty()) throw ConfigError("shape/texture sets must be non-empty");
  for (const auto& s : shapes) {
    if (s != "rectangle" && s != "ellipse" && s != "triangle")
      throw ConfigError("unknown shape kind: " + s);
  }
  auto tex_ok = [](const std::string& t) {
    return t == "checker" || t == "stripes-horizontal" || t == "stripes-vertical" ||
           t == "noise" || t == "solid";
  };
  for (const auto& t : textures) {
    if (!tex_ok(t)) throw ConfigError("unknown texture kind: " + t);
  }
  if (!tex_ok(background)) throw ConfigError("unknown background texture: " + background);
}

std::vector<Sample> generate_dataset(const SceneSpec& spec, int n) {
  SEGFOOL_REQUIRE(n >= 1, "generate_dataset: n must be >= 1");
  spec.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(generate_sample(spec, derive_seed(spec.seed, static_cast<std::uint64_t>(i))));
  }
  return out;
}

Point extract_point_prompt(const Mask& mask, Rng& rng) {
  SEGFOOL_REQUIRE(mask.count() > 0, "extract_point_prompt: mask is empty");
  // strictly inside: prefer pixels whose 4-neighborhood is also masked,
  // falling back to the mask itself for thin or single-pixel regions
  Mask interior(mask.rows, mask.cols);
  long interior_count = 0;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      bool inner = r > 0 && r + 1 < mask.rows && c > 0 && c + 1 < mask.cols &&
                   mask.at(r - 1, c) && mask.at(r + 1, c) && mask.at(r, c - 1) &&
                   mask.at(r, c + 1);
      if (inner) {
        interior.at(r, c) = 1;
        ++interior_count;
      }
    }
  }
  const Mask& pool = interior_count > 0 ? interior : mask;
  long total = interior_count > 0 ? interior_count : mask.count();
  long pick = static_cast<long>(rng.next_below(static_cast<std::uint32_t>(total)));
  for (int r = 0; r < pool.rows; ++r) {
    for (int c = 0; c < pool.cols; ++c) {
      if (pool.at(r, c) && pick-- == 0) return {r, c};
    }
  }
  return {0, 0};  // unreachable
}

Box extract_box_prompt(const Mask& mask) {
  SEGFOOL_REQUIRE(mask.count() > 0, "extract_box_prompt: mask is empty");
  int r0 = mask.rows, c0 = mask.cols, r1 = -1, c1 = -1;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      r0 = std::min(r0, r);
      c0 = std::min(c0, c);
      r1 = std::max(r1, r);
      c1 = std::max(c1, c);
    }
  }
  return {r0, c0, r1, c1};
}

}  // namespace segfool
