#pragma once

#include <variant>
#include <vector>

#include "segfool/common.hpp"

namespace segfool {

struct Point {
  int row = 0;
  int col = 0;
  bool operator==(const Point&) const = default;
};

/// Inclusive axis-aligned box, r0 <= r1, c0 <= c1.
struct Box {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  bool operator==(const Box&) const = default;
};

struct MultiPoint {
  std::vector<Point> points;
};

/// Grid query; expanded by the evaluator into grid*grid point prompts.
struct EverythingGrid {
  int grid = 0;
};

using Prompt = std::variant<Point, Box, MultiPoint, EverythingGrid>;

inline void check_prompt_bounds(const Prompt& p, int size) {
  auto in = [size](int r, int c) { return r >= 0 && r < size && c >= 0 && c < size; };
  if (const auto* pt = std::get_if<Point>(&p)) {
    SEGFOOL_REQUIRE(in(pt->row, pt->col), "point prompt out of image bounds");
  } else if (const auto* bx = std::get_if<Box>(&p)) {
    SEGFOOL_REQUIRE(bx->r0 <= bx->r1 && bx->c0 <= bx->c1, "box prompt corners out of order");
    SEGFOOL_REQUIRE(in(bx->r0, bx->c0) && in(bx->r1, bx->c1), "box prompt out of image bounds");
  } else if (const auto* mp = std::get_if<MultiPoint>(&p)) {
    SEGFOOL_REQUIRE(!mp->points.empty(), "multipoint prompt needs at least one point");
    for (const Point& q : mp->points) {
      SEGFOOL_REQUIRE(in(q.row, q.col), "multipoint prompt out of image bounds");
    }
  }
}

}  // namespace segfool
