#include "segfool/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "segfool/baselines.hpp"
#include "segfool/image_io.hpp"

namespace segfool {

namespace {

using ojson = nlohmann::ordered_json;

void reject_unknown_keys(const ojson& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key \"" + key + "\" in " + where);
    }
  }
}

template <typename T>
void maybe(const ojson& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

ShadowPromptKind parse_shadow_kind(const std::string& s) {
  if (s == "point") return ShadowPromptKind::Point;
  if (s == "box") return ShadowPromptKind::Box;
  if (s == "mixed") return ShadowPromptKind::Mixed;
  throw ConfigError("attack.prompt_type must be point, box or mixed");
}

std::string shadow_kind_string(ShadowPromptKind k) {
  switch (k) {
    case ShadowPromptKind::Point: return "point";
    case ShadowPromptKind::Box: return "box";
    case ShadowPromptKind::Mixed: return "mixed";
  }
  return "point";
}

/// Stage seeds derive from the single run seed.
void fan_out_seeds(RunConfig& cfg) {
  cfg.data.seed = derive_seed(cfg.seed, "data");
  cfg.victim.seed = derive_seed(cfg.seed, "victim");
  cfg.attack.seed = derive_seed(cfg.seed, "attack");
}

std::uint64_t eval_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "eval"); }

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  fan_out_seeds(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (!path.empty()) {
    ojson j;
    try {
      j = ojson::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    try {
      reject_unknown_keys(j, {"seed", "data", "victim", "attack", "eval", "paths"}, "top level");
      maybe(j, "seed", cfg.seed);
      if (j.contains("data")) {
        const ojson& d = j.at("data");
        reject_unknown_keys(d,
                            {"size", "train_count", "test_count", "instances_min",
                             "instances_max", "shapes", "textures", "background"},
                            "data");
        maybe(d, "size", cfg.data.size);
        maybe(d, "train_count", cfg.train_count);
        maybe(d, "test_count", cfg.test_count);
        maybe(d, "instances_min", cfg.data.instances_min);
        maybe(d, "instances_max", cfg.data.instances_max);
        maybe(d, "shapes", cfg.data.shapes);
        maybe(d, "textures", cfg.data.textures);
        maybe(d, "background", cfg.data.background);
      }
      if (j.contains("victim")) {
        const ojson& v = j.at("victim");
        reject_unknown_keys(v, {"epochs", "learning_rate", "background_prompt_prob"}, "victim");
        maybe(v, "epochs", cfg.victim.epochs);
        maybe(v, "learning_rate", cfg.victim.learning_rate);
        maybe(v, "background_prompt_prob", cfg.victim.background_prompt_prob);
      }
      if (j.contains("attack")) {
        const ojson& a = j.at("attack");
        reject_unknown_keys(a,
                            {"shadow_prompts", "fake_magnitude", "frequency_weight", "hfc_weight",
                             "epsilon_255", "step_255", "epochs", "prompt_type"},
                            "attack");
        maybe(a, "shadow_prompts", cfg.attack.shadow_prompts);
        maybe(a, "fake_magnitude", cfg.attack.fake_magnitude);
        maybe(a, "frequency_weight", cfg.attack.frequency_weight);
        maybe(a, "hfc_weight", cfg.attack.hfc_weight);
        if (a.contains("epsilon_255")) {
          cfg.attack.epsilon = a.at("epsilon_255").get<float>() / 255.0f;
        }
        if (a.contains("step_255")) {
          cfg.attack.step_size = a.at("step_255").get<float>() / 255.0f;
        }
        maybe(a, "epochs", cfg.attack.epochs);
        if (a.contains("prompt_type")) {
          cfg.attack.prompt_type = parse_shadow_kind(a.at("prompt_type").get<std::string>());
        }
      }
      if (j.contains("eval")) {
        const ojson& e = j.at("eval");
        reject_unknown_keys(e, {"grid", "multipoint_count", "workers"}, "eval");
        maybe(e, "grid", cfg.eval.grid);
        maybe(e, "multipoint_count", cfg.eval.multipoint_count);
        maybe(e, "workers", cfg.eval.workers);
      }
      if (j.contains("paths")) {
        const ojson& p = j.at("paths");
        reject_unknown_keys(p, {"data_dir", "model_file", "uap_file", "report_file"}, "paths");
        maybe(p, "data_dir", cfg.paths.data_dir);
        maybe(p, "model_file", cfg.paths.model_file);
        maybe(p, "uap_file", cfg.paths.uap_file);
        maybe(p, "report_file", cfg.paths.report_file);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config field has the wrong type: " + std::string(e.what()));
    }
  }

  if (const char* env = std::getenv("SEGFOOL_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("SEGFOOL_SEED must be an integer");
    cfg.seed = static_cast<std::uint64_t>(v);
  }

  cfg.data.validate();
  if (cfg.train_count < 1 || cfg.test_count < 1) throw ConfigError("sample counts must be >= 1");
  if (cfg.victim.epochs < 0 || cfg.victim.learning_rate <= 0.0f)
    throw ConfigError("bad victim training settings");
  if (cfg.attack.shadow_prompts < 1) throw ConfigError("attack.shadow_prompts must be >= 1");
  if (cfg.attack.epsilon <= 0.0f || cfg.attack.step_size <= 0.0f)
    throw ConfigError("attack budget and step must be positive");
  if (cfg.attack.epochs < 0) throw ConfigError("attack.epochs must be >= 0");
  if (cfg.eval.grid < 2) throw ConfigError("eval.grid must be >= 2");
  if (cfg.eval.multipoint_count < 1) throw ConfigError("eval.multipoint_count must be >= 1");
  if (cfg.eval.workers < 1) throw ConfigError("eval.workers must be >= 1");

  fan_out_seeds(cfg);
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  ojson j;
  j["seed"] = cfg.seed;
  ojson d;
  d["size"] = cfg.data.size;
  d["train_count"] = cfg.train_count;
  d["test_count"] = cfg.test_count;
  d["instances_min"] = cfg.data.instances_min;
  d["instances_max"] = cfg.data.instances_max;
  d["shapes"] = cfg.data.shapes;
  d["textures"] = cfg.data.textures;
  d["background"] = cfg.data.background;
  j["data"] = std::move(d);
  ojson v;
  v["epochs"] = cfg.victim.epochs;
  v["learning_rate"] = cfg.victim.learning_rate;
  v["background_prompt_prob"] = cfg.victim.background_prompt_prob;
  j["victim"] = std::move(v);
  j["attack"] = ojson::parse(attack_config_to_json(cfg.attack));
  ojson e;
  e["grid"] = cfg.eval.grid;
  e["multipoint_count"] = cfg.eval.multipoint_count;
  e["workers"] = cfg.eval.workers;
  j["eval"] = std::move(e);
  return j.dump();
}

void run_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  SceneSpec train_spec = cfg.data;
  train_spec.seed = derive_seed(cfg.data.seed, "train-split");
  SceneSpec test_spec = cfg.data;
  test_spec.seed = derive_seed(cfg.data.seed, "test-split");

  std::cerr << "[gen-data] generating " << cfg.train_count << " train + " << cfg.test_count
            << " test samples at " << cfg.data.size << "x" << cfg.data.size << "\n";
  save_dataset(out_dir + "/train", generate_dataset(train_spec, cfg.train_count), train_spec);
  save_dataset(out_dir + "/test", generate_dataset(test_spec, cfg.test_count), test_spec);
  std::cerr << "[gen-data] wrote " << out_dir << "/train and " << out_dir << "/test\n";
}

MiniSam<float> run_train_victim(const RunConfig& cfg, const std::string& data_dir,
                                const std::string& model_out) {
  auto [train, spec] = load_dataset(data_dir + "/train");
  (void)spec;
  std::cerr << "[train-victim] " << train.size() << " samples, " << cfg.victim.epochs
            << " epochs\n";
  MiniSam<float> model =
      train_victim(train, cfg.victim, [](int epoch, float loss) {
        std::cerr << "[train-victim] epoch " << epoch << " mean loss " << loss << "\n";
      });
  if (!model_out.empty()) {
    std::filesystem::path p(model_out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    save_weights(model, model_out);
    std::cerr << "[train-victim] wrote " << model_out << "\n";
  }
  return model;
}

Uap run_craft(const RunConfig& cfg, const std::string& method,
              const std::set<std::string>& ablations, const std::string& data_dir,
              const std::string& model_file, const std::string& uap_out) {
  for (const auto& a : ablations) {
    if (a != "fe" && a != "bm" && a != "hfc" && a != "lfc") {
      throw ConfigError("unknown ablation flag: " + a + " (expected fe, bm, hfc, lfc)");
    }
  }
  AttackConfig acfg = cfg.attack;
  acfg.use_fe = !ablations.count("fe");
  acfg.use_bm = !ablations.count("bm");
  acfg.use_hfc = !ablations.count("hfc");
  acfg.use_lfc = !ablations.count("lfc");
  if (method == "darksam" && !(acfg.use_fe || acfg.use_bm || acfg.use_hfc || acfg.use_lfc)) {
    throw ConfigError("all loss terms ablated; at least one must stay enabled");
  }

  auto [train, spec] = load_dataset(data_dir + "/train");
  (void)spec;
  MiniSam<float> model = load_weights(model_file);

  CraftHooks hooks;
  hooks.on_epoch = [&method](int epoch, float mean) {
    std::cerr << "[craft:" << method << "] epoch " << epoch << " mean loss " << mean << "\n";
  };

  Uap uap;
  if (method == "darksam") {
    uap = craft_uap(model, train, acfg, hooks);
  } else {
    uap = craft_baseline(parse_baseline_kind(method), model, train, acfg, hooks);
  }
  if (!uap_out.empty()) {
    std::filesystem::path p(uap_out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    save_uap(uap_out, uap);
    std::cerr << "[craft:" << method << "] wrote " << uap_out << "\n";
  }
  return uap;
}

EvalReport run_eval(const RunConfig& cfg, const std::vector<std::string>& modes,
                    bool cross_prompt, const std::optional<Corruption>& defense,
                    const std::string& data_dir, const std::string& model_file,
                    const std::string& uap_file, const std::string& report_out) {
  auto start = std::chrono::steady_clock::now();
  auto [test, spec] = load_dataset(data_dir + "/test");
  (void)spec;
  MiniSam<float> model = load_weights(model_file);
  Uap uap = load_uap(uap_file);

  EvalOptions base;
  base.multipoint_count = cfg.eval.multipoint_count;
  base.everything_grid = cfg.eval.grid;
  base.workers = cfg.eval.workers;
  base.seed = eval_seed(cfg);
  base.split = "test";
  base.defense = defense;

  EvalReport report;
  report.seed = cfg.seed;
  report.config_echo_json = run_config_to_json(cfg);

  for (const std::string& mode_name : modes) {
    EvalOptions opt = base;
    opt.mode = parse_prompt_mode(mode_name);
    report.cells.push_back(evaluate(model, test, &uap.delta, opt));
    std::cerr << "[eval] " << report.cells.back().mode << ": clean "
              << report.cells.back().clean_miou << " adv " << report.cells.back().adv_miou
              << " asr " << report.cells.back().asr << "\n";
  }
  if (cross_prompt) {
    std::string craft_label = shadow_kind_string(uap.config.prompt_type);
    for (PromptMode test_mode : {PromptMode::Point, PromptMode::Box}) {
      report.cells.push_back(cross_prompt_eval(model, test, uap, craft_label, test_mode, base));
      std::cerr << "[eval] " << report.cells.back().mode << ": asr "
                << report.cells.back().asr << "\n";
    }
  }

  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start);
  report.wall_clock_seconds = elapsed.count();
  std::cerr << "[eval] wall clock " << report.wall_clock_seconds << " s\n";

  if (!report_out.empty()) {
    std::filesystem::path p(report_out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_text_file(report_out, report_to_json(report));
    std::cerr << "[eval] wrote " << report_out << "\n";
  }
  return report;
}

void run_report(const std::string& report_in, const std::string& format, const std::string& out) {
  if (!std::filesystem::exists(report_in)) throw IoError("missing report file: " + report_in);
  EvalReport report = report_from_json(read_text_file(report_in));
  std::string rendered;
  if (format == "json") {
    rendered = report_to_json(report);
  } else if (format == "csv") {
    rendered = report_to_csv(report);
  } else if (format == "svg") {
    rendered = report_to_svg(report);
  } else {
    throw ConfigError("unknown report format: " + format);
  }
  std::filesystem::path p(out);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  write_text_file(out, rendered);
  std::cerr << "[report] wrote " << out << "\n";
}

}  // namespace segfool
