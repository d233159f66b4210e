#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segfool/attack.hpp"
#include "segfool/dataset.hpp"
#include "segfool/minisam.hpp"

namespace segfool {

enum class PromptMode { Point, Box, MultiPoint, Everything };

std::string to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& name);

/// Mean intersection-over-union over paired masks (percent is applied at the
/// report layer; this returns a value in [0, 1]). Both masks empty counts as
/// a perfect match, exactly one empty as a total miss.
double miou(const std::vector<Mask>& predictions, const std::vector<Mask>& truths);

enum class CorruptionKind { Contrast, Brightness };

struct Corruption {
  CorruptionKind kind = CorruptionKind::Contrast;
  int severity = 1;  // 1..5
};

std::string to_string(const Corruption& c);

/// Photometric input corruption with pinned severity tables:
/// contrast factors {0.8, 0.6, 0.4, 0.3, 0.2}, brightness offsets
/// {0.1, 0.2, 0.3, 0.4, 0.5}.
Tensor<float> corrupt(const Tensor<float>& image, CorruptionKind kind, int severity);

/// One row of results: paired clean/adversarial mIoU in percent plus their
/// difference. The asr field always equals clean minus adversarial.
struct ReportCell {
  std::string split;
  std::string mode;
  double clean_miou = 0.0;
  double adv_miou = 0.0;
  double asr = 0.0;
};

struct EvalReport {
  int schema_version = 1;
  std::uint64_t seed = 0;
  std::string config_echo_json = "{}";  // serialized run configuration
  std::vector<ReportCell> cells;
  double wall_clock_seconds = 0.0;  // progress-log datum; not serialized
};

struct EvalOptions {
  PromptMode mode = PromptMode::Point;
  int multipoint_count = 3;
  int everything_grid = 6;
  std::optional<Corruption> defense;  // preprocessing applied to the model input
  int workers = 1;
  std::uint64_t seed = 100;
  std::string split = "test";
  std::string mode_label;  // optional override for the emitted cell's mode
};

/// Paired clean/adversarial evaluation over a sample list. Prompts derive
/// deterministically from (seed, sample, instance) and are shared between the
/// clean and adversarial passes, so a zero perturbation gives asr == 0
/// exactly. Worker count never changes the result: per-sample scores merge in
/// index order.
ReportCell evaluate(const MiniSam<float>& model, const std::vector<Sample>& samples,
                    const Tensor<float>* uap, const EvalOptions& options);

/// Union of binarized predictions over a uniform grid of point prompts,
/// dropping fragments smaller than 0.5% of the image.
Mask everything_union(const MiniSam<float>& model, const Tensor<float>& image, int grid);

/// Evaluate a perturbation crafted under one prompt type with prompts of
/// another; the cell is labeled "craft->test".
ReportCell cross_prompt_eval(const MiniSam<float>& model, const std::vector<Sample>& samples,
                             const Uap& uap, const std::string& craft_mode, PromptMode test_mode,
                             const EvalOptions& base);

// --- report emission ---

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
std::string report_to_csv(const EvalReport& report);
std::string report_to_svg(const EvalReport& report);

}  // namespace segfool
