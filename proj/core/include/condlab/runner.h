#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "condlab/conditioning.h"
#include "condlab/data.h"
#include "condlab/diagnostics.h"
#include "condlab/nn.h"

namespace condlab {

// ---- Configuration -----------------------------------------------------------

struct DatasetConfig {
  std::string source = "mnist";  // "mnist" | "synthetic"
  std::string dir = "data/mnist";
  MnistMode mode = MnistMode::Crop12;
  bool standardize = true;
  int n_train = -1;  // ≤ 0: all
  int n_test = -1;
  bool allow_surrogate = true;
  // synthetic source
  int syn_n = 2048, syn_d = 32, syn_c = 10;
  double syn_separation = 2.0;
};

struct ResidualConfig {
  int blocks = 0;  // 0: plain MLP topology from widths
  int width = 64;
  BlockVariant variant = BlockVariant::PostAct;
};

struct NetworkConfig {
  int input_dim = 144;
  std::vector<int> widths;  // hidden widths for the plain MLP topology
  int output_dim = 10;
  bool bn = false;       // BN between each hidden Linear and its ReLU
  bool last_bn = false;  // one BN immediately before the final Linear
  ResidualConfig residual;
  Init init = Init::LeCun;
  std::optional<std::uint64_t> seed;  // defaults to the experiment seed
};

struct OptimizerConfig {
  OptKind kind = OptKind::SGD;
  double lr = 0.1;
  int batch_size = 256;
  int epochs = 1;
  int steps = -1;  // ≥ 0 overrides epochs with an absolute step count
};

struct ProbeConfig {
  std::vector<int> schedule = {0, 1, 2, 5, 10};  // absolute optimizer steps
  bool every_epoch = true;
  int batch = 1024;  // probe batch = first `batch` training examples
  std::vector<double> kappa_p_list = {0.5, 0.8, 0.9, 1.0};
  FimConfig fim;
  bool conditioning = true;
  bool domination = true;
  bool activity = true;
  double domination_threshold = kDominationThreshold;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  NetworkConfig network;
  OptimizerConfig optimizer;
  ProbeConfig probe;
  LossKind loss = LossKind::SoftmaxCE;
  std::vector<int> freeze_layers;  // 1-based Linear indices with W updates blocked
  std::string out = "runs/out";
  std::uint64_t seed = 1;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

// What maps onto one (step, layer) trace row. The has_* flags say whether the
// corresponding probe ran; disabled probes serialize as empty CSV cells.
struct LayerRecord {
  LayerConditioning cond;
  DominationReport dom;
  bool has_cond = false;
  bool has_dom = false;
  // counts for the ReLU fed by this layer; -1 when not applicable
  int dying = -1;
  int full = -1;
};

struct ProbeRecord {
  int step = 0;
  std::vector<LayerRecord> layers;
  double loss = 0.0;        // mean loss on the probe batch
  double train_error = 0.0; // error rate on the probe batch
};

struct RunResult {
  std::vector<ProbeRecord> records;
  Network final_net;
  double final_train_loss = 0.0;
  double final_train_error = 0.0;
  double final_test_error = -1.0;  // -1 when no test set
  std::string out_dir;
};

// Builds the network described by the config (topology + init + seed).
Network build_from_config(const NetworkConfig& net_cfg, std::uint64_t default_seed);

// Trains per config, probing scheduled steps on a fixed probe batch, and
// writes trace.csv, summary.json, config_echo.json and checkpoint.json
// into cfg.out. Fully deterministic given the seeds.
RunResult run_experiment(const ExperimentConfig& cfg);

// CSV + JSON emission (also used by run_experiment). Numbers are written with
// 17 significant digits; infinities as the literal `inf`. A negative
// final_test_error means "no test set".
void emit_report(const std::vector<ProbeRecord>& records,
                 const std::vector<double>& kappa_p_list,
                 const std::string& out_dir, const std::string& config_echo_json,
                 double final_train_loss = 0.0, double final_train_error = 0.0,
                 double final_test_error = -1.0);

// Checkpoints carry topology and parameters; they round-trip exactly.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

struct SweepResult {
  std::vector<double> lrs;
  std::vector<double> final_losses;
  double best_lr = 0.0;
  int best_index = -1;
};

// Runs the config once per learning rate (out/lr_<lr>/), selects by final
// training loss, and writes sweep_summary.json under cfg.out.
SweepResult sweep(const ExperimentConfig& cfg, const std::vector<double>& lrs);

// Probes a checkpointed network against a dataset dir and writes trace files.
RunResult probe_checkpoint(const std::string& checkpoint_path, const std::string& data_dir,
                           const std::string& out_dir, const ProbeConfig& probe,
                           LossKind loss = LossKind::SoftmaxCE);

}  // namespace condlab
