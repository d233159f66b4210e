#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "segfool/attack.hpp"
#include "segfool/dataset.hpp"
#include "segfool/eval.hpp"
#include "segfool/minisam.hpp"

namespace segfool {

/// One seed fans out to every stage; stage seeds derive from (seed, purpose).
struct RunConfig {
  std::uint64_t seed = 100;

  SceneSpec data;  // data.seed is derived, not configured directly
  int train_count = 100;
  int test_count = 200;

  TrainConfig victim;
  AttackConfig attack;

  struct EvalSection {
    int grid = 6;
    int multipoint_count = 3;
    int workers = 1;
  } eval;

  struct Paths {
    std::string data_dir = "out/data";
    std::string model_file = "out/victim.msam";
    std::string uap_file = "out/uap.duap";
    std::string report_file = "out/report.json";
  } paths;
};

/// Parse + strictly validate a config file (unknown keys rejected); empty
/// path yields the defaults. SEGFOOL_SEED in the environment overrides the
/// configured seed either way.
RunConfig load_run_config(const std::string& path);
RunConfig default_run_config();

std::string run_config_to_json(const RunConfig& cfg);

// Pipeline stages. Each reads/writes only the paths it is given and logs
// progress to stderr.

void run_gen_data(const RunConfig& cfg, const std::string& out_dir);

MiniSam<float> run_train_victim(const RunConfig& cfg, const std::string& data_dir,
                                const std::string& model_out);

Uap run_craft(const RunConfig& cfg, const std::string& method,
              const std::set<std::string>& ablations, const std::string& data_dir,
              const std::string& model_file, const std::string& uap_out);

EvalReport run_eval(const RunConfig& cfg, const std::vector<std::string>& modes,
                    bool cross_prompt, const std::optional<Corruption>& defense,
                    const std::string& data_dir, const std::string& model_file,
                    const std::string& uap_file, const std::string& report_out);

void run_report(const std::string& report_in, const std::string& format, const std::string& out);

}  // namespace segfool
