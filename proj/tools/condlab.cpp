// condlab — layer-wise conditioning laboratory CLI.
//
//   condlab run    --config <file> [--out <dir>]
//   condlab sweep  --config <file> [--lrs 0.05,0.1,0.5,1] [--out <dir>]
//   condlab verify [--suite prop1|theorem1|theorem2|bn-grad|blocks|all]
//   condlab probe  --checkpoint <file> --data <dir> [--out <dir>]
//
// The environment variable CONDLAB_SEED, when set, overrides the config seed.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "condlab/error.h"
#include "condlab/runner.h"
#include "condlab/suites.h"

namespace {

// Applies the CONDLAB_SEED override, if present, to a loaded config.
void apply_seed_env(condlab::ExperimentConfig& cfg) {
  const char* env = std::getenv("CONDLAB_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || end == env || *end != '\0')
    throw condlab::ConfigError(std::string("environment variable CONDLAB_SEED: '") + env +
                               "' is not an unsigned integer");
  cfg.seed = static_cast<std::uint64_t>(v);
}

int cmd_run(const std::string& config_path, const std::string& out_override) {
  condlab::ExperimentConfig cfg = condlab::load_config(config_path);
  apply_seed_env(cfg);
  if (!out_override.empty()) cfg.out = out_override;
  const condlab::RunResult res = condlab::run_experiment(cfg);
  std::printf("run complete: %zu probe records -> %s\n", res.records.size(),
              res.out_dir.c_str());
  std::printf("final train loss %.6g, train error %.4f", res.final_train_loss,
              res.final_train_error);
  if (res.final_test_error >= 0.0) std::printf(", test error %.4f", res.final_test_error);
  std::printf("\n");
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<double>& lrs,
              const std::string& out_override) {
  condlab::ExperimentConfig cfg = condlab::load_config(config_path);
  apply_seed_env(cfg);
  if (!out_override.empty()) cfg.out = out_override;
  const condlab::SweepResult res = condlab::sweep(cfg, lrs);
  for (std::size_t i = 0; i < res.lrs.size(); ++i)
    std::printf("  lr %-8g final train loss %.6g%s\n", res.lrs[i], res.final_losses[i],
                static_cast<int>(i) == res.best_index ? "  <- best" : "");
  std::printf("best learning rate: %g\n", res.best_lr);
  return 0;
}

int cmd_verify(const std::string& suite) {
  std::vector<std::string> names;
  if (suite == "all")
    names = condlab::suites::suite_names();
  else
    names.push_back(suite);
  bool all_pass = true;
  for (const std::string& name : names) {
    const condlab::suites::SuiteResult r = condlab::suites::run_suite(name);
    std::printf("[%s] %-9s worst %.3g vs bound %.3g — %s\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.worst, r.bound, r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_probe(const std::string& checkpoint, const std::string& data_dir,
              const std::string& out_dir) {
  condlab::ProbeConfig probe;     // defaults: all probes on, batch 1024
  probe.schedule = {0};
  probe.every_epoch = false;
  const condlab::RunResult res =
      condlab::probe_checkpoint(checkpoint, data_dir, out_dir, probe);
  std::printf("probe complete: %zu record(s) -> %s\n", res.records.size(),
              res.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"condlab — layer-wise conditioning analysis for deep networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, data_dir;
  std::string suite = "all";
  std::vector<double> lrs = {0.05, 0.1, 0.5, 1.0};

  CLI::App* run = app.add_subcommand("run", "Train per config and emit trace files");
  run->add_option("--config", config_path, "JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory (overrides config)");

  CLI::App* sw = app.add_subcommand("sweep", "Run the config across learning rates");
  sw->add_option("--config", config_path, "JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  sw->add_option("--lrs", lrs, "comma-separated learning rates")->delimiter(',');
  sw->add_option("--out", out_dir, "output directory (overrides config)");

  CLI::App* verify = app.add_subcommand("verify", "Run seeded verification suites");
  verify->add_option("--suite", suite, "suite name or 'all'")
      ->check(CLI::IsMember({"prop1", "theorem1", "theorem2", "bn-grad", "blocks", "all"}));

  CLI::App* probe = app.add_subcommand("probe", "Probe a checkpoint against a dataset");
  probe->add_option("--checkpoint", checkpoint, "checkpoint JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  probe->add_option("--data", data_dir, "dataset directory")->required();
  probe->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir);
    if (sw->parsed()) return cmd_sweep(config_path, lrs, out_dir);
    if (verify->parsed()) return cmd_verify(suite);
    if (probe->parsed())
      return cmd_probe(checkpoint, data_dir, out_dir.empty() ? "runs/probe" : out_dir);
  } catch (const condlab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
