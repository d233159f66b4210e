#include "segfool/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include <json.hpp>

namespace segfool {

std::string to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::Point: return "point";
    case PromptMode::Box: return "box";
    case PromptMode::MultiPoint: return "multipoint";
    case PromptMode::Everything: return "everything";
  }
  return "point";
}

PromptMode parse_prompt_mode(const std::string& name) {
  if (name == "point") return PromptMode::Point;
  if (name == "box") return PromptMode::Box;
  if (name == "multipoint") return PromptMode::MultiPoint;
  if (name == "everything") return PromptMode::Everything;
  throw ConfigError("unknown prompt mode: " + name);
}

double miou(const std::vector<Mask>& predictions, const std::vector<Mask>& truths) {
  SEGFOOL_REQUIRE(predictions.size() == truths.size(), "miou: list length mismatch");
  SEGFOOL_REQUIRE(!predictions.empty(), "miou: empty lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Mask& p = predictions[i];
    const Mask& t = truths[i];
    SEGFOOL_REQUIRE(p.rows == t.rows && p.cols == t.cols, "miou: mask shape mismatch");
    long inter = mask_intersection(p, t);
    long uni = mask_union_count(p, t);
    acc += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return acc / static_cast<double>(predictions.size());
}

std::string to_string(const Corruption& c) {
  return (c.kind == CorruptionKind::Contrast ? "contrast" : "brightness") +
         std::to_string(c.severity);
}

Tensor<float> corrupt(const Tensor<float>& image, CorruptionKind kind, int severity) {
  SEGFOOL_REQUIRE(severity >= 1 && severity <= 5, "corrupt: severity must be in 1..5");
  static constexpr float kContrast[5] = {0.8f, 0.6f, 0.4f, 0.3f, 0.2f};
  static constexpr float kBrightness[5] = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
  Tensor<float> out = image;
  if (kind == CorruptionKind::Contrast) {
    double mean = 0.0;
    for (float v : image.data) mean += v;
    float m = static_cast<float>(mean / image.numel());
    float f = kContrast[severity - 1];
    for (auto& v : out.data) v = std::clamp((v - m) * f + m, 0.0f, 1.0f);
  } else {
    float b = kBrightness[severity - 1];
    for (auto& v : out.data) v = std::clamp(v + b, 0.0f, 1.0f);
  }
  return out;
}

namespace {

Mask union_of_instances(const Sample& s) {
  Mask u(s.image.shape[1], s.image.shape[2]);
  for (const Mask& m : s.instances) u.unite(m);
  return u;
}

Mask union_over_points(const MiniSam<float>& model, const Tensor<float>& image,
                       const std::vector<Point>& points) {
  int size = model.image_size;
  long min_area = static_cast<long>(0.005 * size * size);
  Mask u(size, size);
  Predictor<float> pred(model, image);
  for (const Point& p : points) {
    Mask m = binarize(pred.logits(p));
    if (m.count() < min_area) continue;
    u.unite(m);
  }
  return u;
}

std::vector<Point> grid_points(int size, int grid) {
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(grid) * grid);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      pts.push_back({static_cast<int>((i + 0.5) * size / grid),
                     static_cast<int>((j + 0.5) * size / grid)});
    }
  }
  return pts;
}

struct PairScore {
  std::vector<Mask> clean_preds, adv_preds, truths;
};

/// Per-sample paired predictions; prompts derive from (seed, sample index),
/// identical for the clean and the adversarial pass.
PairScore score_sample(const MiniSam<float>& model, const Sample& sample, std::size_t index,
                       const Tensor<float>* uap, const EvalOptions& opt) {
  PairScore out;
  int size = model.image_size;

  Tensor<float> clean_in = sample.image;
  Tensor<float> adv_in = uap ? apply_uap(sample.image, *uap) : sample.image;
  if (opt.defense) {
    clean_in = corrupt(clean_in, opt.defense->kind, opt.defense->severity);
    adv_in = corrupt(adv_in, opt.defense->kind, opt.defense->severity);
  }

  if (opt.mode == PromptMode::Everything) {
    SEGFOOL_REQUIRE(opt.everything_grid >= 2, "everything mode: grid must be >= 2");
    auto pts = grid_points(size, opt.everything_grid);
    out.clean_preds.push_back(union_over_points(model, clean_in, pts));
    out.adv_preds.push_back(union_over_points(model, adv_in, pts));
    out.truths.push_back(union_of_instances(sample));
    return out;
  }

  Rng rng(derive_seed(derive_seed(opt.seed, "eval-prompts"), index));
  Predictor<float> clean_pred(model, clean_in);
  Predictor<float> adv_pred(model, adv_in);
  for (const Mask& inst : sample.instances) {
    Prompt prompt;
    switch (opt.mode) {
      case PromptMode::Point:
        prompt = extract_point_prompt(inst, rng);
        break;
      case PromptMode::Box:
        prompt = extract_box_prompt(inst);
        break;
      case PromptMode::MultiPoint: {
        MultiPoint mp;
        for (int k = 0; k < opt.multipoint_count; ++k) {
          mp.points.push_back(extract_point_prompt(inst, rng));
        }
        prompt = std::move(mp);
        break;
      }
      case PromptMode::Everything:
        break;  // handled above
    }
    out.clean_preds.push_back(binarize(clean_pred.logits(prompt)));
    out.adv_preds.push_back(binarize(adv_pred.logits(prompt)));
    out.truths.push_back(inst);
  }
  return out;
}

}  // namespace

Mask everything_union(const MiniSam<float>& model, const Tensor<float>& image, int grid) {
  SEGFOOL_REQUIRE(grid >= 2, "everything mode: grid must be >= 2");
  return union_over_points(model, image, grid_points(model.image_size, grid));
}

ReportCell evaluate(const MiniSam<float>& model, const std::vector<Sample>& samples,
                    const Tensor<float>* uap, const EvalOptions& opt) {
  SEGFOOL_REQUIRE(!samples.empty(), "evaluate: no samples");
  std::vector<PairScore> scores(samples.size());
  int workers = std::max(1, opt.workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      scores[i] = score_sample(model, samples[i], i, uap, opt);
    }
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t i = static_cast<std::size_t>(w); i < samples.size();
             i += static_cast<std::size_t>(workers)) {
          scores[i] = score_sample(model, samples[i], i, uap, opt);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // merge in fixed index order for bit-stable means
  std::vector<Mask> clean_preds, adv_preds, truths;
  for (const auto& s : scores) {
    clean_preds.insert(clean_preds.end(), s.clean_preds.begin(), s.clean_preds.end());
    adv_preds.insert(adv_preds.end(), s.adv_preds.begin(), s.adv_preds.end());
    truths.insert(truths.end(), s.truths.begin(), s.truths.end());
  }

  ReportCell cell;
  cell.split = opt.split;
  cell.mode = opt.mode_label.empty() ? to_string(opt.mode) : opt.mode_label;
  if (opt.defense) cell.mode += "@" + to_string(*opt.defense);
  cell.clean_miou = 100.0 * miou(clean_preds, truths);
  cell.adv_miou = 100.0 * miou(adv_preds, truths);
  cell.asr = cell.clean_miou - cell.adv_miou;
  return cell;
}

ReportCell cross_prompt_eval(const MiniSam<float>& model, const std::vector<Sample>& samples,
                             const Uap& uap, const std::string& craft_mode, PromptMode test_mode,
                             const EvalOptions& base) {
  EvalOptions opt = base;
  opt.mode = test_mode;
  opt.mode_label = craft_mode + "->" + to_string(test_mode);
  return evaluate(model, samples, &uap.delta, opt);
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["schema_version"] = report.schema_version;
  j["seed"] = report.seed;
  j["config"] = nlohmann::ordered_json::parse(report.config_echo_json);
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const ReportCell& c : report.cells) {
    nlohmann::ordered_json jc;
    jc["split"] = c.split;
    jc["mode"] = c.mode;
    jc["clean_miou"] = c.clean_miou;
    jc["adv_miou"] = c.adv_miou;
    jc["asr"] = c.asr;
    cells.push_back(std::move(jc));
  }
  j["cells"] = std::move(cells);
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
  EvalReport r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_echo_json = j.at("config").dump();
    for (const auto& jc : j.at("cells")) {
      ReportCell c;
      c.split = jc.at("split").get<std::string>();
      c.mode = jc.at("mode").get<std::string>();
      c.clean_miou = jc.at("clean_miou").get<double>();
      c.adv_miou = jc.at("adv_miou").get<double>();
      c.asr = jc.at("asr").get<double>();
      if (c.asr != c.clean_miou - c.adv_miou) {
        throw FormatError("report cell violates asr = clean - adversarial for mode " + c.mode);
      }
      r.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON missing fields: ") + e.what());
  }
  if (r.schema_version != 1) {
    throw FormatError("unsupported report schema version " + std::to_string(r.schema_version));
  }
  return r;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string report_to_csv(const EvalReport& report) {
  std::string out = "split,mode,clean_miou,adv_miou,asr\n";
  for (const ReportCell& c : report.cells) {
    out += c.split + "," + c.mode + "," + fixed6(c.clean_miou) + "," + fixed6(c.adv_miou) + "," +
           fixed6(c.asr) + "\n";
  }
  return out;
}

std::string report_to_svg(const EvalReport& report) {
  const int bar_w = 34, gap = 14, left = 50, bottom = 240, top = 20;
  const double y_scale = 2.0;  // 100 points -> 200 px
  int width = left + static_cast<int>(report.cells.size()) * (bar_w + gap) + 30;
  int height = bottom + 60;
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
       std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
  s += "  <text x=\"" + std::to_string(left) + "\" y=\"14\" font-size=\"12\">attack success rate "
       "(mIoU points) per cell</text>\n";
  s += "  <line x1=\"" + std::to_string(left - 6) + "\" y1=\"" + std::to_string(bottom) +
       "\" x2=\"" + std::to_string(width - 10) + "\" y2=\"" + std::to_string(bottom) +
       "\" stroke=\"black\"/>\n";
  int x = left;
  for (const ReportCell& c : report.cells) {
    double v = std::max(0.0, std::min(100.0, c.asr));
    int h = static_cast<int>(v * y_scale);
    int y = bottom - h;
    s += "  <rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
         std::to_string(bar_w) + "\" height=\"" + std::to_string(h) +
         "\" fill=\"#4477aa\"/>\n";
    s += "  <text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y - 4) +
         "\" font-size=\"10\">" + fixed2(c.asr) + "</text>\n";
    s += "  <text x=\"" + std::to_string(x + bar_w / 2) + "\" y=\"" + std::to_string(bottom + 12) +
         "\" font-size=\"9\" transform=\"rotate(45 " + std::to_string(x + bar_w / 2) + " " +
         std::to_string(bottom + 12) + ")\">" + xml_escape(c.split + "/" + c.mode) + "</text>\n";
    x += bar_w + gap;
  }
  s += "</svg>\n";
  (void)top;
  return s;
}

}  // namespace segfool
