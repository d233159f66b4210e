#include <doctest.h>

#include <filesystem>
#include <set>

#include "segfool/dataset.hpp"
#include "segfool/image_io.hpp"

using namespace segfool;

namespace {

bool connected(const Mask& m) {
  long total = m.count();
  if (total == 0) return false;
  std::vector<std::uint8_t> seen(m.on.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < m.rows && stack.empty(); ++r)
    for (int c = 0; c < m.cols && stack.empty(); ++c)
      if (m.at(r, c)) {
        stack.emplace_back(r, c);
        seen[static_cast<std::size_t>(r) * m.cols + c] = 1;
      }
  long reached = 0;
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    ++reached;
    const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= m.rows || nc < 0 || nc >= m.cols) continue;
      std::size_t i = static_cast<std::size_t>(nr) * m.cols + nc;
      if (m.on[i] && !seen[i]) {
        seen[i] = 1;
        stack.emplace_back(nr, nc);
      }
    }
  }
  return reached == total;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("segfool_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("same seed gives byte-identical datasets") {
  SceneSpec spec;
  spec.seed = 4242;
  auto a = generate_dataset(spec, 8);
  auto b = generate_dataset(spec, 8);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    REQUIRE(a[i].instances.size() == b[i].instances.size());
    for (std::size_t m = 0; m < a[i].instances.size(); ++m) {
      CHECK(a[i].instances[m] == b[i].instances[m]);
    }
    CHECK(a[i].texture_tags == b[i].texture_tags);
  }
}

TEST_CASE("generated scenes satisfy the documented invariants") {
  SceneSpec spec;
  spec.seed = 77;
  spec.instances_min = 2;
  spec.instances_max = 4;
  auto samples = generate_dataset(spec, 100);
  REQUIRE(samples.size() == 100);
  for (const Sample& s : samples) {
    REQUIRE(!s.instances.empty());
    CHECK(s.instances.size() >= 1);
    CHECK(s.instances.size() <= 4);
    CHECK(s.texture_tags.size() == s.instances.size());
    for (float v : s.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    Mask seen(spec.size, spec.size);
    for (const Mask& m : s.instances) {
      long area = m.count();
      CHECK(area > 0);
      double frac = static_cast<double>(area) / (spec.size * spec.size);
      CHECK(frac >= 0.02);
      CHECK(frac <= 0.30);
      CHECK(connected(m));
      CHECK(mask_intersection(seen, m) == 0);  // pairwise disjoint
      seen.unite(m);
    }
  }
}

TEST_CASE("point prompts land strictly inside the mask") {
  Rng rng(5);

  // full-image mask: any pixel is valid
  Mask full(8, 8);
  for (auto& v : full.on) v = 1;
  Point p = extract_point_prompt(full, rng);
  CHECK(full.at(p.row, p.col) == 1);

  // single-pixel mask is forced
  Mask single(16, 16);
  single.at(5, 7) = 1;
  for (int i = 0; i < 5; ++i) {
    Point q = extract_point_prompt(single, rng);
    CHECK(q.row == 5);
    CHECK(q.col == 7);
  }

  // ring-shaped mask: 1000 draws all stay on the ring
  Mask ring(32, 32);
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      double d = std::sqrt((r - 16.0) * (r - 16.0) + (c - 16.0) * (c - 16.0));
      if (d >= 8 && d <= 12) ring.at(r, c) = 1;
    }
  }
  for (int i = 0; i < 1000; ++i) {
    Point q = extract_point_prompt(ring, rng);
    CHECK(ring.at(q.row, q.col) == 1);
  }

  Mask empty(4, 4);
  CHECK_THROWS_AS(extract_point_prompt(empty, rng), ContractViolation);
}

TEST_CASE("box prompts are tight bounding boxes") {
  Mask single(16, 16);
  single.at(5, 7) = 1;
  Box b = extract_box_prompt(single);
  CHECK(b == Box{5, 7, 5, 7});

  Mask rect(40, 40);
  for (int r = 10; r <= 20; ++r)
    for (int c = 4; c <= 30; ++c) rect.at(r, c) = 1;
  CHECK(extract_box_prompt(rect) == Box{10, 4, 20, 30});

  // the box of a union contains the box of each part
  Mask other(40, 40);
  for (int r = 25; r <= 28; ++r)
    for (int c = 2; c <= 6; ++c) other.at(r, c) = 1;
  Mask both = rect;
  both.unite(other);
  Box u = extract_box_prompt(both);
  Box b1 = extract_box_prompt(rect);
  Box b2 = extract_box_prompt(other);
  for (const Box& part : {b1, b2}) {
    CHECK(u.r0 <= part.r0);
    CHECK(u.c0 <= part.c0);
    CHECK(u.r1 >= part.r1);
    CHECK(u.c1 >= part.c1);
  }

  Mask empty(4, 4);
  CHECK_THROWS_AS(extract_box_prompt(empty), ContractViolation);
}

TEST_CASE("images and masks round-trip bit-exactly through ppm/pgm") {
  SceneSpec spec;
  spec.seed = 9;
  auto samples = generate_dataset(spec, 3);
  auto dir = temp_dir("roundtrip");

  save_dataset(dir.string(), samples, spec);
  auto [loaded, spec2] = load_dataset(dir.string());
  REQUIRE(loaded.size() == samples.size());
  CHECK(spec2.seed == spec.seed);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].image.data == samples[i].image.data);  // values on the 1/255 grid
    REQUIRE(loaded[i].instances.size() == samples[i].instances.size());
    for (std::size_t m = 0; m < samples[i].instances.size(); ++m) {
      CHECK(loaded[i].instances[m] == samples[i].instances[m]);
    }
    CHECK(loaded[i].texture_tags == samples[i].texture_tags);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset writes are deterministic on disk") {
  SceneSpec spec;
  spec.seed = 31337;
  auto dir1 = temp_dir("det1");
  auto dir2 = temp_dir("det2");
  save_dataset(dir1.string(), generate_dataset(spec, 4), spec);
  save_dataset(dir2.string(), generate_dataset(spec, 4), spec);
  for (const auto& entry : std::filesystem::directory_iterator(dir1)) {
    auto name = entry.path().filename();
    CHECK(read_text_file((dir1 / name).string()) == read_text_file((dir2 / name).string()));
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}
