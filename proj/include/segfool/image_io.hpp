#pragma once

#include <string>
#include <utility>
#include <vector>

#include "segfool/attack.hpp"
#include "segfool/dataset.hpp"

namespace segfool {

// Binary netpbm: P6 with maxval 255 for images, P5 with values {0, 255} for
// masks. Image floats live on the 1/255 grid so the round trip is exact.

void save_ppm(const std::string& path, const Tensor<float>& image);
Tensor<float> load_ppm(const std::string& path);

void save_pgm(const std::string& path, const Mask& mask);
Mask load_pgm(const std::string& path);

/// Writes sample_NNNN.ppm / sample_NNNN_mask_MM.pgm plus manifest.json.
void save_dataset(const std::string& dir, const std::vector<Sample>& samples,
                  const SceneSpec& spec);
std::pair<std::vector<Sample>, SceneSpec> load_dataset(const std::string& dir);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);

std::string attack_config_to_json(const AttackConfig& cfg);

/// Perturbation file: "DUAP", version byte, f32 budget, shape dims, f32
/// payload, then a JSON trailer echoing the crafting configuration.
void save_uap(const std::string& path, const Uap& uap);
Uap load_uap(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace segfool
