#pragma once

#include <string>
#include <vector>

#include "segfool/common.hpp"
#include "segfool/prompt.hpp"
#include "segfool/rng.hpp"
#include "segfool/tensor.hpp"

namespace segfool {

/// Parameters of the synthetic scene generator. Instances are textured shapes
/// on a plainer background; the texture carries the class signal, so channel
/// means stay close to the background and segmentation has to rely on
/// high-frequency structure.
struct SceneSpec {
  int size = 64;  // must be divisible by 4 (victim stride) and even (wavelets)
  int instances_min = 2;
  int instances_max = 2;
  std::vector<std::string> shapes = {"rectangle", "ellipse", "triangle"};
  std::vector<std::string> textures = {"checker", "stripes-horizontal", "stripes-vertical",
                                       "noise"};
  std::string background = "solid";
  std::uint64_t seed = 100;

  void validate() const;
};

struct Sample {
  Tensor<float> image;             // [3, S, S], values on the 1/255 grid in [0,1]
  std::vector<Mask> instances;     // non-empty, connected, pairwise disjoint
  std::vector<std::string> texture_tags;
};

/// Deterministic for a fixed spec: sample i depends only on (spec.seed, i).
std::vector<Sample> generate_dataset(const SceneSpec& spec, int n);

/// Uniformly random pixel strictly inside the mask.
Point extract_point_prompt(const Mask& mask, Rng& rng);

/// Tight axis-aligned bounding box of the mask.
Box extract_box_prompt(const Mask& mask);

}  // namespace segfool
