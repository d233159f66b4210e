// segfool: workbench for universal adversarial perturbations against a
// prompt-guided segmentation model. Subcommands cover the whole pipeline:
// data generation, victim training, perturbation crafting, evaluation and
// report rendering. Progress goes to stderr; machine output goes to files.

#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segfool/pipeline.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"universal adversarial perturbation workbench for prompt-guided segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "run configuration JSON")->configurable(false);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/test datasets");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // train-victim
  auto* train = app.add_subcommand("train-victim", "train the victim segmentation model");
  std::string train_data, train_out;
  train->add_option("--data", train_data, "dataset directory (from gen-data)");
  train->add_option("--out", train_out, "weights file to write");

  // craft
  auto* craft = app.add_subcommand("craft", "craft a universal perturbation");
  std::string craft_method = "darksam";
  std::string craft_ablate, craft_data, craft_model, craft_out;
  craft->add_option("--method", craft_method, "darksam|uap|uapgd|ssp|segpgd|attacksam")
      ->check(CLI::IsMember({"darksam", "uap", "uapgd", "ssp", "segpgd", "attacksam"}));
  craft->add_option("--ablate", craft_ablate, "comma list of loss terms to disable: fe,bm,hfc,lfc");
  craft->add_option("--data", craft_data, "dataset directory");
  craft->add_option("--model", craft_model, "victim weights file");
  craft->add_option("--out", craft_out, "perturbation file to write");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a perturbation against the victim");
  std::string eval_mode = "point,box,multipoint,everything";
  bool eval_cross = false;
  std::string eval_defense;
  int eval_severity = 1;
  int eval_workers = 0;
  std::string eval_data, eval_model, eval_uap, eval_out;
  eval_cmd->add_option("--mode", eval_mode, "comma list of point|box|multipoint|everything");
  eval_cmd->add_flag("--cross-prompt", eval_cross,
                     "also test the perturbation under point and box prompts");
  eval_cmd->add_option("--defense", eval_defense, "input preprocessing: contrast|brightness")
      ->check(CLI::IsMember({"contrast", "brightness"}));
  eval_cmd->add_option("--severity", eval_severity, "defense severity 1..5")
      ->check(CLI::Range(1, 5));
  eval_cmd->add_option("--workers", eval_workers, "evaluation worker threads");
  eval_cmd->add_option("--data", eval_data, "dataset directory");
  eval_cmd->add_option("--model", eval_model, "victim weights file");
  eval_cmd->add_option("--uap", eval_uap, "perturbation file");
  eval_cmd->add_option("--out", eval_out, "report JSON to write");

  // report
  auto* rep = app.add_subcommand("report", "render a report as json, csv or an svg bar chart");
  std::string rep_in, rep_format = "json", rep_out;
  rep->add_option("--in", rep_in, "report JSON produced by eval");
  rep->add_option("--format", rep_format, "json|csv|svg")
      ->check(CLI::IsMember({"json", "csv", "svg"}));
  rep->add_option("--out", rep_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    segfool::RunConfig cfg = segfool::load_run_config(config_path);

    if (gen->parsed()) {
      segfool::run_gen_data(cfg, gen_out);
    } else if (train->parsed()) {
      if (train_data.empty()) train_data = cfg.paths.data_dir;
      if (train_out.empty()) train_out = cfg.paths.model_file;
      segfool::run_train_victim(cfg, train_data, train_out);
    } else if (craft->parsed()) {
      if (craft_data.empty()) craft_data = cfg.paths.data_dir;
      if (craft_model.empty()) craft_model = cfg.paths.model_file;
      if (craft_out.empty()) craft_out = cfg.paths.uap_file;
      std::set<std::string> ablations;
      for (const auto& a : split_list(craft_ablate)) ablations.insert(a);
      segfool::run_craft(cfg, craft_method, ablations, craft_data, craft_model, craft_out);
    } else if (eval_cmd->parsed()) {
      if (eval_data.empty()) eval_data = cfg.paths.data_dir;
      if (eval_model.empty()) eval_model = cfg.paths.model_file;
      if (eval_uap.empty()) eval_uap = cfg.paths.uap_file;
      if (eval_out.empty()) eval_out = cfg.paths.report_file;
      if (eval_workers > 0) cfg.eval.workers = eval_workers;
      std::optional<segfool::Corruption> defense;
      if (!eval_defense.empty()) {
        defense = segfool::Corruption{eval_defense == "contrast"
                                          ? segfool::CorruptionKind::Contrast
                                          : segfool::CorruptionKind::Brightness,
                                      eval_severity};
      }
      segfool::run_eval(cfg, split_list(eval_mode), eval_cross, defense, eval_data, eval_model,
                        eval_uap, eval_out);
    } else if (rep->parsed()) {
      if (rep_in.empty()) rep_in = cfg.paths.report_file;
      segfool::run_report(rep_in, rep_format, rep_out);
    }
  } catch (const segfool::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const segfool::ContractViolation& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
