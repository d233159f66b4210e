#include "segfool/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace segfool {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string sample_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04d", index);
  return buf;
}

void skip_pnm_space(std::istream& is) {
  int c = is.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    c = is.peek();
  }
}

int read_pnm_int(std::istream& is, const std::string& path) {
  skip_pnm_space(is);
  int v = -1;
  is >> v;
  if (!is || v < 0) throw FormatError("bad netpbm header field in " + path);
  return v;
}

}  // namespace

void save_ppm(const std::string& path, const Tensor<float>& image) {
  SEGFOOL_REQUIRE(image.rank() == 3 && image.shape[0] == 3, "save_ppm: need [3,H,W] image");
  int h = image.shape[1], w = image.shape[2];
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        float v = std::clamp(image(ch, r, c), 0.0f, 1.0f);
        row[static_cast<std::size_t>(c) * 3 + ch] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

Tensor<float> load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '6') throw FormatError("not a P6 image: " + path);
  int w = read_pnm_int(is, path);
  int h = read_pnm_int(is, path);
  int maxval = read_pnm_int(is, path);
  if (maxval != 255) throw FormatError("unsupported maxval in " + path);
  is.get();  // single whitespace before payload
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
    throw FormatError("truncated image payload in " + path);
  }
  Tensor<float> out = Tensor<float>::zeros({3, h, w});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        out(ch, r, c) =
            static_cast<float>(buf[(static_cast<std::size_t>(r) * w + c) * 3 + ch]) / 255.0f;
      }
    }
  }
  return out;
}

void save_pgm(const std::string& path, const Mask& mask) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << mask.cols << " " << mask.rows << "\n255\n";
  std::vector<unsigned char> buf(mask.on.size());
  for (std::size_t i = 0; i < mask.on.size(); ++i) buf[i] = mask.on[i] ? 255 : 0;
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path);
}

Mask load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open mask: " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') throw FormatError("not a P5 mask: " + path);
  int w = read_pnm_int(is, path);
  int h = read_pnm_int(is, path);
  int maxval = read_pnm_int(is, path);
  if (maxval != 255) throw FormatError("unsupported maxval in " + path);
  is.get();
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
    throw FormatError("truncated mask payload in " + path);
  }
  Mask m(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) m.on[i] = buf[i] > 127 ? 1 : 0;
  return m;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
  ojson j;
  j["size"] = spec.size;
  j["instances_min"] = spec.instances_min;
  j["instances_max"] = spec.instances_max;
  j["shapes"] = spec.shapes;
  j["textures"] = spec.textures;
  j["background"] = spec.background;
  j["seed"] = spec.seed;
  return j.dump();
}

SceneSpec scene_spec_from_json(const std::string& text) {
  ojson j = ojson::parse(text);
  SceneSpec s;
  s.size = j.at("size").get<int>();
  s.instances_min = j.at("instances_min").get<int>();
  s.instances_max = j.at("instances_max").get<int>();
  s.shapes = j.at("shapes").get<std::vector<std::string>>();
  s.textures = j.at("textures").get<std::vector<std::string>>();
  s.background = j.at("background").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples,
                  const SceneSpec& spec) {
  fs::create_directories(dir);
  ojson manifest;
  manifest["schema_version"] = 1;
  manifest["spec"] = ojson::parse(scene_spec_to_json(spec));
  ojson list = ojson::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    std::string base = sample_name(static_cast<int>(i));
    save_ppm(dir + "/" + base + ".ppm", s.image);
    ojson entry;
    entry["image"] = base + ".ppm";
    ojson masks = ojson::array();
    for (std::size_t m = 0; m < s.instances.size(); ++m) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_mask_%02d.pgm", static_cast<int>(m));
      std::string mask_file = base + suffix;
      save_pgm(dir + "/" + mask_file, s.instances[m]);
      masks.push_back(mask_file);
    }
    entry["masks"] = std::move(masks);
    entry["textures"] = s.texture_tags;
    list.push_back(std::move(entry));
  }
  manifest["samples"] = std::move(list);
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::pair<std::vector<Sample>, SceneSpec> load_dataset(const std::string& dir) {
  std::string manifest_path = dir + "/manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("missing dataset manifest: " + manifest_path);
  ojson manifest;
  try {
    manifest = ojson::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("bad manifest " + manifest_path + ": " + e.what());
  }
  SceneSpec spec = scene_spec_from_json(manifest.at("spec").dump());
  std::vector<Sample> samples;
  for (const auto& entry : manifest.at("samples")) {
    Sample s;
    s.image = load_ppm(dir + "/" + entry.at("image").get<std::string>());
    for (const auto& mf : entry.at("masks")) {
      s.instances.push_back(load_pgm(dir + "/" + mf.get<std::string>()));
    }
    s.texture_tags = entry.at("textures").get<std::vector<std::string>>();
    samples.push_back(std::move(s));
  }
  return {std::move(samples), std::move(spec)};
}

namespace {

std::string prompt_kind_string(ShadowPromptKind k) {
  switch (k) {
    case ShadowPromptKind::Point: return "point";
    case ShadowPromptKind::Box: return "box";
    case ShadowPromptKind::Mixed: return "mixed";
  }
  return "point";
}

ShadowPromptKind prompt_kind_parse(const std::string& s) {
  if (s == "point") return ShadowPromptKind::Point;
  if (s == "box") return ShadowPromptKind::Box;
  if (s == "mixed") return ShadowPromptKind::Mixed;
  throw ConfigError("unknown attack prompt type: " + s);
}

}  // namespace

std::string attack_config_to_json(const AttackConfig& cfg) {
  ojson j;
  j["shadow_prompts"] = cfg.shadow_prompts;
  j["fake_magnitude"] = cfg.fake_magnitude;
  j["frequency_weight"] = cfg.frequency_weight;
  j["hfc_weight"] = cfg.hfc_weight;
  j["epsilon"] = cfg.epsilon;
  j["step_size"] = cfg.step_size;
  j["epochs"] = cfg.epochs;
  j["prompt_type"] = prompt_kind_string(cfg.prompt_type);
  j["seed"] = cfg.seed;
  j["use_fe"] = cfg.use_fe;
  j["use_bm"] = cfg.use_bm;
  j["use_hfc"] = cfg.use_hfc;
  j["use_lfc"] = cfg.use_lfc;
  return j.dump();
}

namespace {

constexpr char kUapMagic[4] = {'D', 'U', 'A', 'P'};
constexpr std::uint8_t kUapVersion = 1;

void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& is, std::size_t& offset, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) {
    throw FormatError(std::string("perturbation file truncated at ") + what + ", offset " +
                      std::to_string(offset));
  }
  offset += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_uap(const std::string& path, const Uap& uap) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kUapMagic, 4);
  os.write(reinterpret_cast<const char*>(&kUapVersion), 1);
  std::uint32_t eps_bits;
  static_assert(sizeof(float) == 4);
  std::memcpy(&eps_bits, &uap.epsilon, 4);
  write_u32le(os, eps_bits);
  std::uint8_t rank = static_cast<std::uint8_t>(uap.delta.rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int d : uap.delta.shape) write_u32le(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(uap.delta.data.data()),
           static_cast<std::streamsize>(uap.delta.data.size() * 4));
  ojson trailer;
  trailer["method"] = uap.method;
  trailer["config"] = ojson::parse(attack_config_to_json(uap.config));
  trailer["epoch_mean_loss"] = uap.epoch_mean_loss;
  std::string t = trailer.dump();
  os.write(t.data(), static_cast<std::streamsize>(t.size()));
  if (!os) throw IoError("write failed: " + path);
}

Uap load_uap(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open perturbation file: " + path);
  std::size_t offset = 0;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kUapMagic, 4) != 0) {
    throw FormatError("perturbation file has bad magic at offset 0");
  }
  offset += 4;
  char version = 0;
  is.get(version);
  if (!is || static_cast<std::uint8_t>(version) != kUapVersion) {
    throw FormatError("unsupported perturbation file version");
  }
  ++offset;
  Uap uap;
  std::uint32_t eps_bits = read_u32le(is, offset, "epsilon");
  std::memcpy(&uap.epsilon, &eps_bits, 4);
  char rank = 0;
  is.get(rank);
  if (!is) throw FormatError("perturbation file truncated at rank, offset " + std::to_string(offset));
  ++offset;
  std::vector<int> shape(static_cast<std::size_t>(rank));
  long numel = 1;
  for (auto& d : shape) {
    d = static_cast<int>(read_u32le(is, offset, "dimension"));
    numel *= d;
  }
  if (numel <= 0 || numel > (1L << 28)) {
    throw FormatError("implausible perturbation shape at offset " + std::to_string(offset));
  }
  uap.delta = Tensor<float>::zeros(shape);
  is.read(reinterpret_cast<char*>(uap.delta.data.data()),
          static_cast<std::streamsize>(numel * 4));
  if (is.gcount() != numel * 4) {
    throw FormatError("perturbation file truncated in payload at offset " +
                      std::to_string(offset));
  }
  offset += static_cast<std::size_t>(numel) * 4;
  std::string trailer((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ojson j;
  try {
    j = ojson::parse(trailer);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("perturbation file trailer is not valid JSON (offset " +
                      std::to_string(offset) + "): " + e.what());
  }
  uap.method = j.at("method").get<std::string>();
  const auto& jc = j.at("config");
  uap.config.shadow_prompts = jc.at("shadow_prompts").get<int>();
  uap.config.fake_magnitude = jc.at("fake_magnitude").get<float>();
  uap.config.frequency_weight = jc.at("frequency_weight").get<float>();
  uap.config.hfc_weight = jc.at("hfc_weight").get<float>();
  uap.config.epsilon = jc.at("epsilon").get<float>();
  uap.config.step_size = jc.at("step_size").get<float>();
  uap.config.epochs = jc.at("epochs").get<int>();
  uap.config.prompt_type = prompt_kind_parse(jc.at("prompt_type").get<std::string>());
  uap.config.seed = jc.at("seed").get<std::uint64_t>();
  uap.config.use_fe = jc.at("use_fe").get<bool>();
  uap.config.use_bm = jc.at("use_bm").get<bool>();
  uap.config.use_hfc = jc.at("use_hfc").get<bool>();
  uap.config.use_lfc = jc.at("use_lfc").get<bool>();
  uap.epoch_mean_loss = j.at("epoch_mean_loss").get<std::vector<float>>();
  return uap;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace segfool
