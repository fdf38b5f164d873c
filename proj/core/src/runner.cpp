#include "condlab/runner.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "condlab/error.h"
#include "condlab/rng.h"
#include "json.hpp"

namespace condlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Distinct deterministic streams derived from the experiment seed, so data,
// weights, and shuffling never share a generator.
constexpr std::uint64_t kSynTrainStream = 0xda7a0001ull;
constexpr std::uint64_t kSynTestStream = 0xda7a0002ull;
constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ull;

// ---- config parsing ---------------------------------------------------------

[[noreturn]] void cfg_fail(const std::string& path, const std::string& why) {
  throw ConfigError("config field '" + path + "': " + why);
}

std::string joined(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

void check_keys(const json& j, const std::string& base,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) cfg_fail(base.empty() ? "<root>" : base, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) cfg_fail(joined(base, it.key()), "unknown key");
  }
}

void get_int(const json& j, const std::string& base, const char* key, int& out, long lo,
             long hi = 2147483647l) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) cfg_fail(joined(base, key), "expected an integer");
  const long x = v.get<long>();
  if (x < lo || x > hi)
    cfg_fail(joined(base, key), "must be between " + std::to_string(lo) + " and " +
                                    std::to_string(hi));
  out = static_cast<int>(x);
}

void get_i64(const json& j, const std::string& base, const char* key, std::int64_t& out,
             std::int64_t lo) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) cfg_fail(joined(base, key), "expected an integer");
  const std::int64_t x = v.get<std::int64_t>();
  if (x < lo) cfg_fail(joined(base, key), "must be at least " + std::to_string(lo));
  out = x;
}

void get_u64(const json& j, const std::string& base, const char* key, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (!ok) cfg_fail(joined(base, key), "expected a nonnegative integer");
  out = v.get<std::uint64_t>();
}

void get_double(const json& j, const std::string& base, const char* key, double& out, double lo,
                bool lo_strict) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) cfg_fail(joined(base, key), "expected a number");
  const double x = v.get<double>();
  if (x < lo || (lo_strict && x == lo))
    cfg_fail(joined(base, key), std::string("must be ") + (lo_strict ? "greater than " : "at least ") +
                                    std::to_string(lo));
  out = x;
}

void get_bool(const json& j, const std::string& base, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) cfg_fail(joined(base, key), "expected a boolean");
  out = v.get<bool>();
}

void get_string(const json& j, const std::string& base, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) cfg_fail(joined(base, key), "expected a string");
  out = v.get<std::string>();
}

template <typename E>
void get_enum(const json& j, const std::string& base, const char* key, E& out,
              std::initializer_list<std::pair<const char*, E>> mapping) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    for (const auto& [name, value] : mapping)
      if (s == name) {
        out = value;
        return;
      }
  }
  std::string allowed;
  for (const auto& [name, value] : mapping) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  cfg_fail(joined(base, key), "must be one of: " + allowed);
}

DatasetConfig parse_dataset(const json& j) {
  DatasetConfig d;
  check_keys(j, "dataset",
             {"source", "dir", "mode", "standardize", "n_train", "n_test", "allow_surrogate",
              "syn_n", "syn_d", "syn_c", "syn_separation"});
  get_string(j, "dataset", "source", d.source);
  if (d.source != "mnist" && d.source != "synthetic")
    cfg_fail("dataset.source", "must be one of: mnist, synthetic");
  get_string(j, "dataset", "dir", d.dir);
  get_enum(j, "dataset", "mode", d.mode,
           {{"crop12", MnistMode::Crop12}, {"full28", MnistMode::Full28}});
  get_bool(j, "dataset", "standardize", d.standardize);
  get_int(j, "dataset", "n_train", d.n_train, -2147483647l);
  get_int(j, "dataset", "n_test", d.n_test, -2147483647l);
  get_bool(j, "dataset", "allow_surrogate", d.allow_surrogate);
  get_int(j, "dataset", "syn_n", d.syn_n, 1);
  get_int(j, "dataset", "syn_d", d.syn_d, 1);
  get_int(j, "dataset", "syn_c", d.syn_c, 2);
  get_double(j, "dataset", "syn_separation", d.syn_separation, 0.0, false);
  return d;
}

NetworkConfig parse_network(const json& j) {
  NetworkConfig n;
  check_keys(j, "network",
             {"input_dim", "widths", "output_dim", "bn", "last_bn", "residual", "init", "seed"});
  get_int(j, "network", "input_dim", n.input_dim, 1);
  get_int(j, "network", "output_dim", n.output_dim, 1);
  if (j.contains("widths")) {
    const json& w = j.at("widths");
    if (!w.is_array()) cfg_fail("network.widths", "expected an array of integers");
    n.widths.clear();
    for (const json& v : w) {
      if (!v.is_number_integer() || v.get<long>() < 1)
        cfg_fail("network.widths", "entries must be positive integers");
      n.widths.push_back(v.get<int>());
    }
  }
  get_bool(j, "network", "bn", n.bn);
  get_bool(j, "network", "last_bn", n.last_bn);
  if (j.contains("residual")) {
    const json& r = j.at("residual");
    check_keys(r, "network.residual", {"blocks", "width", "variant"});
    get_int(r, "network.residual", "blocks", n.residual.blocks, 0);
    get_int(r, "network.residual", "width", n.residual.width, 1);
    get_enum(r, "network.residual", "variant", n.residual.variant,
             {{"postact", BlockVariant::PostAct}, {"preact", BlockVariant::PreAct}});
  }
  get_enum(j, "network", "init", n.init,
           {{"lecun", Init::LeCun}, {"he", Init::He}, {"lecun_uniform", Init::LeCunUniform}});
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    get_u64(j, "network", "seed", s);
    n.seed = s;
  }
  return n;
}

OptimizerConfig parse_optimizer(const json& j) {
  OptimizerConfig o;
  check_keys(j, "optimizer", {"kind", "lr", "batch_size", "epochs", "steps"});
  get_enum(j, "optimizer", "kind", o.kind,
           {{"full_gd", OptKind::FullGD}, {"sgd", OptKind::SGD}, {"adam", OptKind::Adam}});
  get_double(j, "optimizer", "lr", o.lr, 0.0, true);
  get_int(j, "optimizer", "batch_size", o.batch_size, 1);
  get_int(j, "optimizer", "epochs", o.epochs, 0);
  get_int(j, "optimizer", "steps", o.steps, -1);
  return o;
}

FimConfig parse_fim(const json& j) {
  FimConfig f;
  check_keys(j, "probe.fim", {"label_mode", "samples", "max_params", "seed"});
  get_enum(j, "probe.fim", "label_mode", f.label_mode,
           {{"empirical", LabelMode::Empirical}, {"sampled", LabelMode::Sampled}});
  get_int(j, "probe.fim", "samples", f.samples, 1);
  get_i64(j, "probe.fim", "max_params", f.max_params, 1);
  get_u64(j, "probe.fim", "seed", f.seed);
  return f;
}

ProbeConfig parse_probe(const json& j) {
  ProbeConfig p;
  check_keys(j, "probe",
             {"schedule", "every_epoch", "batch", "kappa_p_list", "fim", "conditioning",
              "domination", "activity", "domination_threshold"});
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    if (!s.is_array()) cfg_fail("probe.schedule", "expected an array of integers");
    p.schedule.clear();
    for (const json& v : s) {
      if (!v.is_number_integer() || v.get<long>() < 0)
        cfg_fail("probe.schedule", "steps must be nonnegative integers");
      p.schedule.push_back(v.get<int>());
    }
  }
  // normalize to the documented invariant: nonnegative, increasing, unique
  std::sort(p.schedule.begin(), p.schedule.end());
  p.schedule.erase(std::unique(p.schedule.begin(), p.schedule.end()), p.schedule.end());
  get_bool(j, "probe", "every_epoch", p.every_epoch);
  get_int(j, "probe", "batch", p.batch, 1);
  if (j.contains("kappa_p_list")) {
    const json& k = j.at("kappa_p_list");
    if (!k.is_array()) cfg_fail("probe.kappa_p_list", "expected an array of numbers");
    p.kappa_p_list.clear();
    for (const json& v : k) {
      if (!v.is_number() || v.get<double>() <= 0.0 || v.get<double>() > 1.0)
        cfg_fail("probe.kappa_p_list", "quantiles must lie in (0, 1]");
      p.kappa_p_list.push_back(v.get<double>());
    }
  }
  if (j.contains("fim")) p.fim = parse_fim(j.at("fim"));
  get_bool(j, "probe", "conditioning", p.conditioning);
  get_bool(j, "probe", "domination", p.domination);
  get_bool(j, "probe", "activity", p.activity);
  get_double(j, "probe", "domination_threshold", p.domination_threshold, 0.0, true);
  return p;
}

// ---- serialization helpers ----------------------------------------------------

const char* mode_str(MnistMode m) { return m == MnistMode::Crop12 ? "crop12" : "full28"; }
const char* init_str(Init i) {
  switch (i) {
    case Init::LeCun: return "lecun";
    case Init::He: return "he";
    default: return "lecun_uniform";
  }
}
const char* variant_str(BlockVariant v) { return v == BlockVariant::PostAct ? "postact" : "preact"; }
const char* opt_str(OptKind k) {
  switch (k) {
    case OptKind::FullGD: return "full_gd";
    case OptKind::SGD: return "sgd";
    default: return "adam";
  }
}
const char* loss_str(LossKind k) { return k == LossKind::MSE ? "mse" : "softmax_ce"; }
const char* label_mode_str(LabelMode m) {
  return m == LabelMode::Empirical ? "empirical" : "sampled";
}

json probe_to_json(const ProbeConfig& p) {
  json j;
  j["schedule"] = p.schedule;
  j["every_epoch"] = p.every_epoch;
  j["batch"] = p.batch;
  j["kappa_p_list"] = p.kappa_p_list;
  j["conditioning"] = p.conditioning;
  j["domination"] = p.domination;
  j["activity"] = p.activity;
  j["domination_threshold"] = p.domination_threshold;
  j["fim"] = {{"label_mode", label_mode_str(p.fim.label_mode)},
              {"samples", p.fim.samples},
              {"max_params", p.fim.max_params},
              {"seed", p.fim.seed}};
  return j;
}

std::string fmt17(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

std::string p_tag(double p) {
  return "p" + std::to_string(static_cast<int>(std::llround(p * 100.0)));
}

json num_or_inf(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

// ---- probing ------------------------------------------------------------------

double error_rate(const Matrix& h, const std::vector<int>& labels) {
  int wrong = 0;
  for (int i = 0; i < h.rows(); ++i) {
    const double* row = h.row(i);
    int arg = 0;
    for (int j = 1; j < h.cols(); ++j)
      if (row[j] > row[arg]) arg = j;
    if (arg != labels[i]) ++wrong;
  }
  return h.rows() > 0 ? static_cast<double>(wrong) / h.rows() : 0.0;
}

ProbeRecord make_probe_record(const Network& net, const Matrix& px, const std::vector<int>& py,
                              LossKind loss, const ProbeConfig& pc, int step) {
  ProbeRecord rec;
  rec.step = step;
  BatchCache cache = forward(net, px);
  const Matrix& out = cache.per_op.back().out;
  LossResult lr = loss_and_grad(out, py, loss);
  rec.loss = lr.loss;
  rec.train_error = error_rate(out, py);

  const bool need_grads = pc.conditioning || pc.domination;
  if (need_grads) backward(net, cache, lr.grad);

  // Attribute each ReLU's activity counts to the Linear layer feeding it.
  std::vector<int> dying(net.num_linear + 1, -1), full(net.num_linear + 1, -1);
  if (pc.activity) {
    const std::vector<NeuronActivity> acts = neuron_activity(net, px);
    std::size_t relu_i = 0;
    int last_linear = 0;
    for (const Op& op : net.ops) {
      if (op.kind == OpKind::Linear) {
        last_linear = op.linear_index;
      } else if (op.kind == OpKind::ReLU) {
        if (last_linear >= 1) {
          dying[last_linear] = acts[relu_i].dying_count;
          full[last_linear] = acts[relu_i].full_count;
        }
        ++relu_i;
      }
    }
  }

  for (int k = 1; k <= net.num_linear; ++k) {
    LayerRecord l;
    if (pc.conditioning) {
      l.cond = layer_conditioning(cache, net, k, pc.kappa_p_list);
      l.has_cond = true;
    } else {
      l.cond.layer = k;
    }
    if (pc.domination) {
      l.dom = detect_weight_domination(net.ops[net.linear_op(k)].w, cache.layer_grad_w(k),
                                       pc.domination_threshold);
      l.dom.layer = k;
      l.has_dom = true;
    }
    l.dying = dying[k];
    l.full = full[k];
    rec.layers.push_back(std::move(l));
  }
  return rec;
}

void fisher_yates(std::vector<int>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(static_cast<std::uint64_t>(i))]);
}

}  // namespace

// ---- public config API ----------------------------------------------------------

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  check_keys(j, "", {"dataset", "network", "optimizer", "probe", "loss", "freeze_layers", "out",
                     "seed"});
  ExperimentConfig cfg;
  if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"));
  if (j.contains("network")) cfg.network = parse_network(j.at("network"));
  if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j.at("optimizer"));
  if (j.contains("probe")) cfg.probe = parse_probe(j.at("probe"));
  get_enum(j, "", "loss", cfg.loss, {{"mse", LossKind::MSE}, {"softmax_ce", LossKind::SoftmaxCE}});
  if (j.contains("freeze_layers")) {
    const json& f = j.at("freeze_layers");
    if (!f.is_array()) cfg_fail("freeze_layers", "expected an array of layer indices");
    cfg.freeze_layers.clear();
    for (const json& v : f) {
      if (!v.is_number_integer() || v.get<long>() < 1)
        cfg_fail("freeze_layers", "layer indices are 1-based positive integers");
      cfg.freeze_layers.push_back(v.get<int>());
    }
  }
  get_string(j, "", "out", cfg.out);
  get_u64(j, "", "seed", cfg.seed);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["loss"] = loss_str(cfg.loss);
  j["freeze_layers"] = cfg.freeze_layers;
  j["dataset"] = {{"source", cfg.dataset.source},
                  {"dir", cfg.dataset.dir},
                  {"mode", mode_str(cfg.dataset.mode)},
                  {"standardize", cfg.dataset.standardize},
                  {"n_train", cfg.dataset.n_train},
                  {"n_test", cfg.dataset.n_test},
                  {"allow_surrogate", cfg.dataset.allow_surrogate},
                  {"syn_n", cfg.dataset.syn_n},
                  {"syn_d", cfg.dataset.syn_d},
                  {"syn_c", cfg.dataset.syn_c},
                  {"syn_separation", cfg.dataset.syn_separation}};
  json net = {{"input_dim", cfg.network.input_dim},
              {"widths", cfg.network.widths},
              {"output_dim", cfg.network.output_dim},
              {"bn", cfg.network.bn},
              {"last_bn", cfg.network.last_bn},
              {"residual",
               {{"blocks", cfg.network.residual.blocks},
                {"width", cfg.network.residual.width},
                {"variant", variant_str(cfg.network.residual.variant)}}},
              {"init", init_str(cfg.network.init)}};
  if (cfg.network.seed) net["seed"] = *cfg.network.seed;
  j["network"] = std::move(net);
  j["optimizer"] = {{"kind", opt_str(cfg.optimizer.kind)},
                    {"lr", cfg.optimizer.lr},
                    {"batch_size", cfg.optimizer.batch_size},
                    {"epochs", cfg.optimizer.epochs},
                    {"steps", cfg.optimizer.steps}};
  j["probe"] = probe_to_json(cfg.probe);
  return j.dump(2) + "\n";
}

// ---- network construction --------------------------------------------------------

Network build_from_config(const NetworkConfig& nc, std::uint64_t default_seed) {
  std::vector<LayerSpec> specs;
  if (nc.residual.blocks > 0) {
    specs.push_back(LayerSpec::linear(nc.input_dim, nc.residual.width));
    if (nc.bn) specs.push_back(LayerSpec::batch_norm());
    if (nc.residual.variant == BlockVariant::PostAct) specs.push_back(LayerSpec::relu());
    for (int b = 0; b < nc.residual.blocks; ++b)
      specs.push_back(LayerSpec::residual_block(nc.residual.width, nc.residual.variant));
    specs.push_back(LayerSpec::linear(nc.residual.width, nc.output_dim));
  } else {
    int prev = nc.input_dim;
    for (int w : nc.widths) {
      specs.push_back(LayerSpec::linear(prev, w));
      if (nc.bn) specs.push_back(LayerSpec::batch_norm());
      specs.push_back(LayerSpec::relu());
      prev = w;
    }
    specs.push_back(LayerSpec::linear(prev, nc.output_dim));
  }
  return build_network(specs, nc.last_bn, nc.init, nc.seed.value_or(default_seed));
}

// ---- reporting --------------------------------------------------------------------

void emit_report(const std::vector<ProbeRecord>& records,
                 const std::vector<double>& kappa_p_list, const std::string& out_dir,
                 const std::string& config_echo_json, double final_train_loss,
                 double final_train_error, double final_test_error) {
  if (records.empty()) throw ValueError("emit_report needs at least one record");
  fs::create_directories(out_dir);

  // trace.csv
  std::string csv = "step,layer,lambda_max_sx,lambda_max_sgh";
  for (double p : kappa_p_list) csv += ",kappa_" + p_tag(p) + "_sx";
  for (double p : kappa_p_list) csv += ",kappa_" + p_tag(p) + "_sgh";
  csv += ",lambda_max_f,kappa_f,lambda_max_sgw,w_spec,w_fro,g_spec,dominated,dying,full,loss\n";
  for (const ProbeRecord& rec : records) {
    for (const LayerRecord& l : rec.layers) {
      csv += std::to_string(rec.step);
      csv += ',';
      csv += std::to_string(l.cond.layer);
      if (l.has_cond) {
        csv += ',' + fmt17(l.cond.lambda_max_sx) + ',' + fmt17(l.cond.lambda_max_sgh);
        for (double p : kappa_p_list) csv += ',' + fmt17(l.cond.kappa_sx.at(p));
        for (double p : kappa_p_list) csv += ',' + fmt17(l.cond.kappa_sgh.at(p));
        csv += ',' + fmt17(l.cond.lambda_max_f_approx) + ',' + fmt17(l.cond.kappa_f_approx);
        csv += ',' + fmt17(l.cond.lambda_max_sgw);
        csv += ',' + fmt17(l.cond.w_spec) + ',' + fmt17(l.cond.w_fro) + ',' +
               fmt17(l.cond.g_spec);
      } else {
        for (std::size_t i = 0; i < 8 + 2 * kappa_p_list.size(); ++i) csv += ',';
      }
      csv += ',';
      if (l.has_dom) csv += l.dom.dominated ? '1' : '0';
      csv += ',';
      if (l.dying >= 0) csv += std::to_string(l.dying);
      csv += ',';
      if (l.full >= 0) csv += std::to_string(l.full);
      csv += ',' + fmt17(rec.loss) + '\n';
    }
  }
  write_text(fs::path(out_dir) / "trace.csv", csv);

  // config_echo.json
  write_text(fs::path(out_dir) / "config_echo.json", config_echo_json);

  // summary.json mirrors the records in full
  json summary;
  try {
    summary["config"] = json::parse(config_echo_json);
  } catch (const json::parse_error&) {
    summary["config"] = config_echo_json;  // opaque echo if the caller passed non-JSON
  }
  summary["kappa_p_list"] = kappa_p_list;
  json recs = json::array();
  for (const ProbeRecord& rec : records) {
    json r;
    r["step"] = rec.step;
    r["loss"] = rec.loss;
    r["train_error"] = rec.train_error;
    json layers = json::array();
    for (const LayerRecord& l : rec.layers) {
      json o;
      o["layer"] = l.cond.layer;
      if (l.has_cond) {
        o["lambda_max_sx"] = num_or_inf(l.cond.lambda_max_sx);
        o["lambda_max_sgh"] = num_or_inf(l.cond.lambda_max_sgh);
        json ksx, ksgh, kf;
        for (double p : kappa_p_list) {
          ksx[p_tag(p)] = num_or_inf(l.cond.kappa_sx.at(p));
          ksgh[p_tag(p)] = num_or_inf(l.cond.kappa_sgh.at(p));
          kf[p_tag(p)] = num_or_inf(l.cond.kappa_f.at(p));
        }
        o["kappa_sx"] = std::move(ksx);
        o["kappa_sgh"] = std::move(ksgh);
        o["kappa_f_p"] = std::move(kf);
        o["lambda_max_f"] = num_or_inf(l.cond.lambda_max_f_approx);
        o["kappa_f"] = num_or_inf(l.cond.kappa_f_approx);
        o["lambda_max_sgw"] = num_or_inf(l.cond.lambda_max_sgw);
        o["w_spec"] = l.cond.w_spec;
        o["w_fro"] = l.cond.w_fro;
        o["g_spec"] = l.cond.g_spec;
      }
      if (l.has_dom) {
        o["dominated"] = l.dom.dominated;
        o["domination_ratio"] = num_or_inf(l.dom.ratio);
      }
      o["dying"] = l.dying >= 0 ? json(l.dying) : json(nullptr);
      o["full"] = l.full >= 0 ? json(l.full) : json(nullptr);
      layers.push_back(std::move(o));
    }
    r["layers"] = std::move(layers);
    recs.push_back(std::move(r));
  }
  summary["records"] = std::move(recs);
  summary["final"] = {{"train_loss", final_train_loss},
                      {"train_error", final_train_error},
                      {"test_error", final_test_error}};
  write_text(fs::path(out_dir) / "summary.json", summary.dump(1) + "\n");
}

// ---- checkpoints --------------------------------------------------------------------

void save_checkpoint(const Network& net, const std::string& path) {
  json j;
  j["format"] = "condlab-checkpoint-v1";
  j["input_dim"] = net.input_dim;
  j["output_dim"] = net.output_dim;
  j["num_linear"] = net.num_linear;
  j["last_bn"] = net.last_bn;
  json ops = json::array();
  for (const Op& op : net.ops) {
    json o;
    o["in_dim"] = op.in_dim;
    o["out_dim"] = op.out_dim;
    switch (op.kind) {
      case OpKind::Linear:
        o["kind"] = "linear";
        o["linear_index"] = op.linear_index;
        o["frozen"] = op.frozen;
        o["w"] = op.w.data();
        break;
      case OpKind::BatchNorm:
        o["kind"] = "batch_norm";
        o["gamma"] = op.gamma;
        o["beta"] = op.beta;
        o["eps"] = op.eps;
        break;
      case OpKind::ReLU:
        o["kind"] = "relu";
        break;
      case OpKind::ResSave:
        o["kind"] = "res_save";
        o["res_slot"] = op.res_slot;
        break;
      case OpKind::ResAdd:
        o["kind"] = "res_add";
        o["res_slot"] = op.res_slot;
        break;
    }
    ops.push_back(std::move(o));
  }
  j["ops"] = std::move(ops);
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text(p, j.dump(1) + "\n");
}

Network load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (!j.is_object() || j.value("format", "") != "condlab-checkpoint-v1")
      throw FormatError("not a recognized checkpoint file: " + path);
    Network net;
    net.input_dim = j.at("input_dim").get<int>();
    net.output_dim = j.at("output_dim").get<int>();
    net.last_bn = j.at("last_bn").get<bool>();
    int linear_count = 0;
    for (const json& o : j.at("ops")) {
      Op op;
      op.in_dim = o.at("in_dim").get<int>();
      op.out_dim = o.at("out_dim").get<int>();
      const std::string kind = o.at("kind").get<std::string>();
      if (kind == "linear") {
        op.kind = OpKind::Linear;
        op.linear_index = o.at("linear_index").get<int>();
        op.frozen = o.at("frozen").get<bool>();
        const std::vector<double> w = o.at("w").get<std::vector<double>>();
        if (static_cast<int>(w.size()) != op.in_dim * op.out_dim)
          throw FormatError("checkpoint weight size mismatch in " + path);
        op.w = Matrix(op.out_dim, op.in_dim);
        op.w.data() = w;
        ++linear_count;
      } else if (kind == "batch_norm") {
        op.kind = OpKind::BatchNorm;
        op.gamma = o.at("gamma").get<std::vector<double>>();
        op.beta = o.at("beta").get<std::vector<double>>();
        op.eps = o.at("eps").get<double>();
        if (static_cast<int>(op.gamma.size()) != op.out_dim ||
            static_cast<int>(op.beta.size()) != op.out_dim)
          throw FormatError("checkpoint BN parameter size mismatch in " + path);
      } else if (kind == "relu") {
        op.kind = OpKind::ReLU;
      } else if (kind == "res_save") {
        op.kind = OpKind::ResSave;
        op.res_slot = o.at("res_slot").get<int>();
      } else if (kind == "res_add") {
        op.kind = OpKind::ResAdd;
        op.res_slot = o.at("res_slot").get<int>();
      } else {
        throw FormatError("unknown op kind '" + kind + "' in " + path);
      }
      net.ops.push_back(std::move(op));
    }
    net.num_linear = linear_count;
    if (j.at("num_linear").get<int>() != linear_count)
      throw FormatError("checkpoint layer count disagrees with its ops in " + path);
    return net;
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint " + path + ": " + e.what());
  }
}

// ---- experiment execution --------------------------------------------------------------

RunResult run_experiment(const ExperimentConfig& cfg) {
  // data
  Dataset train, test;
  if (cfg.dataset.source == "synthetic") {
    train = synthetic_gaussian(cfg.dataset.syn_n, cfg.dataset.syn_d, cfg.dataset.syn_c,
                               cfg.seed ^ kSynTrainStream, cfg.dataset.syn_separation);
    test = synthetic_gaussian(std::max(1, cfg.dataset.syn_n / 4), cfg.dataset.syn_d,
                              cfg.dataset.syn_c, cfg.seed ^ kSynTestStream,
                              cfg.dataset.syn_separation);
  } else if (cfg.dataset.source == "mnist") {
    MnistData md =
        load_mnist_dataset(cfg.dataset.dir, cfg.dataset.mode, cfg.dataset.standardize,
                           cfg.dataset.n_train, cfg.dataset.n_test, cfg.dataset.allow_surrogate);
    train = std::move(md.train);
    test = std::move(md.test);
  } else {
    throw ConfigError("config field 'dataset.source': must be one of: mnist, synthetic");
  }
  if (train.x.cols() != cfg.network.input_dim)
    throw ConfigError("network.input_dim is " + std::to_string(cfg.network.input_dim) +
                      " but the dataset provides " + std::to_string(train.x.cols()) +
                      " features");
  if (train.c != cfg.network.output_dim)
    throw ConfigError("network.output_dim is " + std::to_string(cfg.network.output_dim) +
                      " but the dataset has " + std::to_string(train.c) + " classes");

  // model + optimizer
  Network net = build_from_config(cfg.network, cfg.seed);
  for (int k : cfg.freeze_layers) {
    if (k < 1 || k > net.num_linear)
      throw ConfigError("freeze_layers: layer " + std::to_string(k) + " does not exist (network has " +
                        std::to_string(net.num_linear) + " Linear layers)");
    net.ops[net.linear_op(k)].frozen = true;
  }
  OptimizerState opt = make_optimizer(cfg.optimizer.kind, cfg.optimizer.lr, net);

  const int n = train.x.rows();
  const int d = train.x.cols();
  const bool full_batch = cfg.optimizer.kind == OptKind::FullGD;
  const int bs = cfg.optimizer.batch_size;
  const long steps_per_epoch = full_batch ? 1 : (n + bs - 1) / bs;
  const long total = cfg.optimizer.steps >= 0
                         ? cfg.optimizer.steps
                         : static_cast<long>(cfg.optimizer.epochs) * steps_per_epoch;

  // probe step set: configured absolute steps + epoch ends + the final state
  std::set<long> sched;
  for (int s : cfg.probe.schedule)
    if (s <= total) sched.insert(s);
  if (cfg.probe.every_epoch)
    for (long e = 1; e * steps_per_epoch <= total; ++e) sched.insert(e * steps_per_epoch);
  sched.insert(total);

  // fixed probe batch: the first examples in dataset order
  const int pb = std::min(cfg.probe.batch, n);
  Matrix px(pb, d);
  std::vector<int> py(pb);
  for (int i = 0; i < pb; ++i) {
    std::copy(train.x.row(i), train.x.row(i) + d, px.row(i));
    py[i] = train.y[i];
  }

  std::vector<ProbeRecord> records;
  auto probe_if = [&](long s) {
    if (sched.count(s))
      records.push_back(
          make_probe_record(net, px, py, cfg.loss, cfg.probe, static_cast<int>(s)));
  };

  Rng shuffle_rng(cfg.seed ^ kShuffleStream);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  int cursor = 0;
  Matrix bx;
  std::vector<int> by;

  probe_if(0);
  for (long s = 1; s <= total; ++s) {
    const Matrix* batch_x = &train.x;
    const std::vector<int>* batch_y = &train.y;
    if (!full_batch) {
      if (cursor == 0) fisher_yates(order, shuffle_rng);
      const int take = std::min(bs, n - cursor);
      bx = Matrix(take, d);
      by.resize(take);
      for (int i = 0; i < take; ++i) {
        const int src = order[cursor + i];
        std::copy(train.x.row(src), train.x.row(src) + d, bx.row(i));
        by[i] = train.y[src];
      }
      cursor += take;
      if (cursor >= n) cursor = 0;
      batch_x = &bx;
      batch_y = &by;
    }
    BatchCache cache = forward(net, *batch_x);
    LossResult lr = loss_and_grad(cache.per_op.back().out, *batch_y, cfg.loss);
    backward(net, cache, lr.grad);
    step(net, cache, opt);
    probe_if(s);
  }

  // final metrics on the full train / test sets
  bool has_bn = false;
  for (const Op& op : net.ops)
    if (op.kind == OpKind::BatchNorm) has_bn = true;
  auto evaluate = [&](const Dataset& ds, double& err) {
    BatchCache c = forward(net, ds.x);
    const Matrix& out = c.per_op.back().out;
    err = error_rate(out, ds.y);
    return loss_and_grad(out, ds.y, cfg.loss).loss;
  };
  RunResult res;
  res.final_train_loss = evaluate(train, res.final_train_error);
  if (test.x.rows() >= (has_bn ? 2 : 1)) {
    double terr = 0.0;
    evaluate(test, terr);
    res.final_test_error = terr;
  }

  fs::create_directories(cfg.out);
  const std::string echo = config_to_json(cfg);
  emit_report(records, cfg.probe.kappa_p_list, cfg.out, echo, res.final_train_loss,
              res.final_train_error, res.final_test_error);
  save_checkpoint(net, (fs::path(cfg.out) / "checkpoint.json").string());

  res.records = std::move(records);
  res.final_net = std::move(net);
  res.out_dir = cfg.out;
  return res;
}

SweepResult sweep(const ExperimentConfig& cfg, const std::vector<double>& lrs) {
  if (lrs.empty()) throw ValueError("sweep needs at least one learning rate");
  SweepResult r;
  r.lrs = lrs;
  for (double lr : lrs) {
    ExperimentConfig c = cfg;
    c.optimizer.lr = lr;
    char tag[48];
    std::snprintf(tag, sizeof tag, "lr_%g", lr);
    c.out = (fs::path(cfg.out) / tag).string();
    RunResult rr = run_experiment(c);
    r.final_losses.push_back(rr.final_train_loss);
    if (r.best_index < 0 || rr.final_train_loss < r.final_losses[r.best_index]) {
      r.best_index = static_cast<int>(r.final_losses.size()) - 1;
      r.best_lr = lr;
    }
  }
  fs::create_directories(cfg.out);
  json js = {{"lrs", r.lrs},
             {"final_losses", r.final_losses},
             {"best_lr", r.best_lr},
             {"best_index", r.best_index}};
  write_text(fs::path(cfg.out) / "sweep_summary.json", js.dump(1) + "\n");
  return r;
}

RunResult probe_checkpoint(const std::string& checkpoint_path, const std::string& data_dir,
                           const std::string& out_dir, const ProbeConfig& probe,
                           LossKind loss) {
  Network net = load_checkpoint(checkpoint_path);
  MnistMode mode;
  if (net.input_dim == 144)
    mode = MnistMode::Crop12;
  else if (net.input_dim == 784)
    mode = MnistMode::Full28;
  else
    throw ConfigError("checkpoint input dim " + std::to_string(net.input_dim) +
                      " matches neither 12x12 (144) nor 28x28 (784) features");
  MnistData md = load_mnist_dataset(data_dir, mode, true, -1, -1, true);

  const int n = md.train.x.rows();
  const int pb = std::min(probe.batch, n);
  Matrix px(pb, md.train.x.cols());
  std::vector<int> py(pb);
  for (int i = 0; i < pb; ++i) {
    std::copy(md.train.x.row(i), md.train.x.row(i) + md.train.x.cols(), px.row(i));
    py[i] = md.train.y[i];
  }

  std::vector<ProbeRecord> records;
  records.push_back(make_probe_record(net, px, py, loss, probe, 0));

  json echo = {{"probe_checkpoint",
                {{"checkpoint", checkpoint_path},
                 {"data", data_dir},
                 {"loss", loss_str(loss)},
                 {"probe", probe_to_json(probe)}}}};
  emit_report(records, probe.kappa_p_list, out_dir, echo.dump(2) + "\n",
              records[0].loss, records[0].train_error, -1.0);

  RunResult res;
  res.final_train_loss = records[0].loss;
  res.final_train_error = records[0].train_error;
  res.records = std::move(records);
  res.final_net = std::move(net);
  res.out_dir = out_dir;
  return res;
}

}  // namespace condlab
