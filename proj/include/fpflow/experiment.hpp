#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpflow/bayes.hpp"
#include "fpflow/core.hpp"
#include "fpflow/dataset_io.hpp"
#include "fpflow/dynamics.hpp"
#include "fpflow/sde.hpp"
#include "fpflow/training.hpp"
#include "fpflow/transport_map.hpp"

namespace fpflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string preset = "iso-quadratic-2d";
  std::string budget = "paper";  // "paper" | "desk"
  int dim = 2;

  // dataset
  int n_samples = 1000;
  double dt = 1e-3;
  uint64_t seed = 1;
  std::vector<double> times;

  // map hyperparameters
  int hidden_layers = 5;
  int hidden_width = 5;
  int n_quad = 20;

  // dynamics family
  std::string potential_kind = "quadratic";  // quadratic|double-well|lse-wells|neural
  std::string diffusion_kind = "isotropic";  // isotropic|full-symmetric

  LossConfig loss;
  BayesConfig bayes;
  std::string out_dir = "out";

  void validate() const;
};

inline std::vector<double> default_times() {
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back(0.1 * i);
  return t;
}

inline bool preset_known(const std::string& p) {
  return p == "iso-quadratic-2d" || p == "aniso-doublewell-2d" || p == "lse-wells-3d" ||
         p == "lse-wells-4d" || p == "lse-wells-5d" || p == "custom";
}

/// Fills preset-dependent defaults; explicit config/flag values override.
inline ExperimentConfig make_preset_config(const std::string& preset,
                                           const std::string& budget = "paper") {
  ExperimentConfig c;
  c.preset = preset;
  c.budget = budget;
  c.times = default_times();
  if (preset == "iso-quadratic-2d") {
    c.dim = 2;
    c.n_samples = 1000;
    c.potential_kind = "quadratic";
    c.diffusion_kind = "isotropic";
    c.loss.epochs = 9000;
    c.loss.warmup_epochs = 600;
    c.loss.n_pde_points = 128;
    c.loss.minibatch = 256;
    c.loss.full_batch_threshold = 256;
  } else if (preset == "aniso-doublewell-2d") {
    c.dim = 2;
    c.n_samples = 1000;
    c.potential_kind = "double-well";
    c.diffusion_kind = "full-symmetric";
    c.loss.epochs = 9000;
    c.loss.warmup_epochs = 600;
    c.loss.n_pde_points = 128;
    c.loss.minibatch = 256;
    c.loss.full_batch_threshold = 256;
  } else if (preset == "lse-wells-3d" || preset == "lse-wells-4d" || preset == "lse-wells-5d") {
    c.dim = preset[10] - '0';
    c.n_samples = c.dim == 3 ? 3000 : (c.dim == 4 ? 7000 : 3000);
    c.potential_kind = "lse-wells";
    c.diffusion_kind = "full-symmetric";
    c.loss.epochs = 3000;
    c.loss.warmup_epochs = 300;
    c.loss.n_pde_points = 256;
    c.loss.minibatch = 256;
    c.loss.full_batch_threshold = 256;
  } else if (preset == "custom") {
    // caller fills everything
  } else {
    throw InvalidConfig("unknown preset: " + preset);
  }
  if (budget == "desk") {
    if (c.dim <= 2) {
      c.n_samples = 500;
      c.loss.epochs = c.loss.epochs / 2;
      c.loss.warmup_epochs = 300;
      c.loss.minibatch = 112;
      c.loss.n_pde_points = 56;
    } else {
      c.loss.epochs = 800;
      c.loss.warmup_epochs = 200;
      c.loss.minibatch = 192;
      c.loss.n_pde_points = 192;
    }
  } else if (budget != "paper") {
    throw InvalidConfig("budget must be 'paper' or 'desk'");
  }
  c.bayes.lambda = c.loss.lambda;
  return c;
}

inline void ExperimentConfig::validate() const {
  if (!preset_known(preset)) throw InvalidConfig("config.preset: unknown preset " + preset);
  if (dim < 1 || dim > 8) throw InvalidConfig("config.dim: must be in [1, 8]");
  if (preset == "iso-quadratic-2d" || preset == "aniso-doublewell-2d") {
    if (dim != 2) throw InvalidConfig("config.dim: preset " + preset + " requires dim = 2");
  }
  if (preset.rfind("lse-wells-", 0) == 0 && preset != "custom") {
    const int want = preset[10] - '0';
    if (dim != want)
      throw InvalidConfig("config.dim: preset " + preset + " requires dim = " +
                          std::to_string(want));
  }
  if (n_samples <= 0) throw InvalidConfig("config.n_samples: must be positive");
  if (!(dt > 0.0)) throw InvalidConfig("config.dt: must be positive");
  if (times.empty() || times.front() != 0.0)
    throw InvalidConfig("config.times: must start at 0");
  if (potential_kind != "quadratic" && potential_kind != "double-well" &&
      potential_kind != "lse-wells" && potential_kind != "neural")
    throw InvalidConfig("config.potential_kind: unknown kind " + potential_kind);
  if (diffusion_kind != "isotropic" && diffusion_kind != "full-symmetric")
    throw InvalidConfig("config.diffusion_kind: unknown kind " + diffusion_kind);
  loss.validate();
  bayes.validate();
}

// -- JSON round trip ---------------------------------------------------------

inline json to_json(const LossConfig& c) {
  return json{{"lambda", c.lambda},
              {"pde_sampler", c.pde_sampler == PdeSampler::DataImportance ? "data-importance"
                                                                          : "uniform-box"},
              {"box_inflation", c.box_inflation},
              {"n_pde_points", c.n_pde_points},
              {"minibatch", c.minibatch},
              {"full_batch_threshold", c.full_batch_threshold},
              {"epochs", c.epochs},
              {"warmup_epochs", c.warmup_epochs},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed}};
}

inline LossConfig loss_from_json(const json& j) {
  LossConfig c;
  c.lambda = j.value("lambda", c.lambda);
  const std::string sampler = j.value("pde_sampler", std::string("data-importance"));
  if (sampler == "data-importance")
    c.pde_sampler = PdeSampler::DataImportance;
  else if (sampler == "uniform-box")
    c.pde_sampler = PdeSampler::UniformBox;
  else
    throw InvalidConfig("loss.pde_sampler: unknown sampler " + sampler);
  c.box_inflation = j.value("box_inflation", c.box_inflation);
  c.n_pde_points = j.value("n_pde_points", c.n_pde_points);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.full_batch_threshold = j.value("full_batch_threshold", c.full_batch_threshold);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json to_json(const BayesConfig& c) {
  return json{{"steps", c.steps},          {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},          {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},    {"lambda", c.lambda},
              {"prior_sigma", c.prior_sigma}, {"nll_batch", c.nll_batch},
              {"n_pde_points", c.n_pde_points}, {"seed", c.seed}};
}

inline BayesConfig bayes_from_json(const json& j) {
  BayesConfig c;
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.lambda = j.value("lambda", c.lambda);
  c.prior_sigma = j.value("prior_sigma", c.prior_sigma);
  c.nll_batch = j.value("nll_batch", c.nll_batch);
  c.n_pde_points = j.value("n_pde_points", c.n_pde_points);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  return json{{"format_version", 1},
              {"preset", c.preset},
              {"budget", c.budget},
              {"dim", c.dim},
              {"n_samples", c.n_samples},
              {"dt", c.dt},
              {"seed", c.seed},
              {"times", c.times},
              {"hidden_layers", c.hidden_layers},
              {"hidden_width", c.hidden_width},
              {"n_quad", c.n_quad},
              {"potential_kind", c.potential_kind},
              {"diffusion_kind", c.diffusion_kind},
              {"loss", to_json(c.loss)},
              {"bayes", to_json(c.bayes)},
              {"out_dir", c.out_dir}};
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig base;
  const std::string preset = j.value("preset", base.preset);
  const std::string budget = j.value("budget", base.budget);
  ExperimentConfig c = make_preset_config(preset, budget);
  c.dim = j.value("dim", c.dim);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.dt = j.value("dt", c.dt);
  c.seed = j.value("seed", c.seed);
  if (j.contains("times")) c.times = j.at("times").get<std::vector<double>>();
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.n_quad = j.value("n_quad", c.n_quad);
  c.potential_kind = j.value("potential_kind", c.potential_kind);
  c.diffusion_kind = j.value("diffusion_kind", c.diffusion_kind);
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  if (j.contains("bayes")) c.bayes = bayes_from_json(j.at("bayes"));
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

// ---------------------------------------------------------------------------
// Ground-truth problems per preset
// ---------------------------------------------------------------------------

struct TruthSpec {
  SdeProblem problem;
  GaussianMixture initial;
  Mat d_true;
  std::vector<double> theta2_truth;       // aligned with theta2 naming
  std::vector<std::string> theta2_names;  // diffusion first, then potential
};

inline TruthSpec make_truth(const ExperimentConfig& cfg) {
  TruthSpec ts;
  if (cfg.preset == "iso-quadratic-2d") {
    ts.problem.dim = 2;
    ts.problem.potential = PotentialModel::quadratic(ts.problem.truth, 2, "truth");
    auto seg = ts.problem.truth.segment_values("truth");
    seg[0] = 2.0;
    seg[1] = 3.0;
    seg[2] = -1.0;
    seg[3] = -1.0;
    ts.d_true = Mat(2, 2);
    ts.d_true(0, 0) = ts.d_true(1, 1) = 0.2;
    ts.initial = GaussianMixture::four_wells_2d();
  } else if (cfg.preset == "aniso-doublewell-2d") {
    ts.problem.dim = 2;
    ts.problem.potential = PotentialModel::double_well(ts.problem.truth, 2, "truth");
    auto seg = ts.problem.truth.segment_values("truth");
    seg[0] = 1.0;
    seg[1] = 1.0;
    seg[2] = -1.5;
    seg[3] = -1.5;
    ts.d_true = Mat(2, 2);
    ts.d_true(0, 0) = 0.1;
    ts.d_true(1, 1) = 0.2;
    ts.initial = GaussianMixture::four_wells_2d();
  } else if (cfg.preset.rfind("lse-wells-", 0) == 0) {
    const int d = cfg.preset[10] - '0';
    ts.problem.dim = d;
    ts.problem.potential = PotentialModel::lse_wells(ts.problem.truth, d, "truth");
    auto seg = ts.problem.truth.segment_values("truth");
    for (int i = 0; i < d; ++i) {
      seg[static_cast<size_t>(i)] = 1.0;        // well center at -1
      seg[static_cast<size_t>(d + i)] = -1.0;   // well center at +1
    }
    ts.d_true = Mat(d, d);
    for (int i = 0; i < d; ++i) ts.d_true(i, i) = (i % 2 == 0) ? 0.1 : 1.0;
    ts.initial = GaussianMixture::standard_normal(d);
  } else {
    throw InvalidConfig("make_truth: preset " + cfg.preset + " has no ground truth");
  }
  ts.problem.sigma = SdeProblem::sigma_for_diffusion(ts.d_true);

  // truth vector aligned with theta2 naming of the *model* families
  if (cfg.diffusion_kind == "isotropic") {
    ts.theta2_names.push_back("theta_D");
    ts.theta2_truth.push_back(ts.d_true(0, 0));
  } else {
    for (int r = 0; r < ts.problem.dim; ++r)
      for (int c = 0; c < ts.problem.dim; ++c) {
        ts.theta2_names.push_back("theta_D_" + std::to_string(r + 1) + std::to_string(c + 1));
        ts.theta2_truth.push_back(ts.d_true(r, c));
      }
  }
  if (cfg.potential_kind == "quadratic" || cfg.potential_kind == "double-well") {
    const auto seg = ts.problem.truth.segment_values("truth");
    for (int i = 0; i < 2 * ts.problem.dim; ++i) {
      ts.theta2_names.push_back("theta_Psi_" + std::to_string(i + 1));
      ts.theta2_truth.push_back(seg[static_cast<size_t>(i)]);
    }
  } else if (cfg.potential_kind == "lse-wells") {
    const auto seg = ts.problem.truth.segment_values("truth");
    for (int i = 0; i < ts.problem.dim; ++i) {
      ts.theta2_names.push_back("theta_Psi_1_" + std::to_string(i + 1));
      ts.theta2_truth.push_back(seg[static_cast<size_t>(i)]);
    }
    for (int i = 0; i < ts.problem.dim; ++i) {
      ts.theta2_names.push_back("theta_Psi_2_" + std::to_string(i + 1));
      ts.theta2_truth.push_back(seg[static_cast<size_t>(ts.problem.dim + i)]);
    }
  }
  return ts;
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

struct ExperimentModels {
  ParamVector params;
  TriangularMapModel map;
  PotentialModel pot;
  DiffusionModel diff;
};

inline ExperimentModels build_models(const ExperimentConfig& cfg) {
  ExperimentModels m;
  m.map = TriangularMapModel::mlp(m.params, cfg.dim, RandomEngine::derive_seed(cfg.seed, 0xA),
                                  "map", cfg.hidden_layers, cfg.hidden_width, cfg.n_quad);
  if (cfg.potential_kind == "quadratic")
    m.pot = PotentialModel::quadratic(m.params, cfg.dim);
  else if (cfg.potential_kind == "double-well")
    m.pot = PotentialModel::double_well(m.params, cfg.dim);
  else if (cfg.potential_kind == "lse-wells")
    m.pot = PotentialModel::lse_wells(m.params, cfg.dim);
  else
    m.pot = PotentialModel::neural(m.params, cfg.dim, RandomEngine::derive_seed(cfg.seed, 0xB));
  if (cfg.diffusion_kind == "isotropic")
    m.diff = DiffusionModel::isotropic(m.params, cfg.dim);
  else
    m.diff = DiffusionModel::full_symmetric(m.params, cfg.dim);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints (lossless round trip)
// ---------------------------------------------------------------------------

struct Checkpoint {
  int format_version = 1;
  ExperimentConfig config;
  ParamVector params;
  AdamState adam;
  int next_epoch = 0;
};

inline json to_json(const Checkpoint& ck) {
  json j;
  j["format_version"] = ck.format_version;
  j["config"] = to_json(ck.config);
  json segs = json::array();
  for (const auto& [name, seg] : ck.params.segments())
    segs.push_back(json{{"name", name}, {"offset", seg.offset}, {"length", seg.length}});
  j["segments"] = segs;
  std::vector<double> values(ck.params.data(), ck.params.data() + ck.params.size());
  j["values"] = values;
  j["adam"] = json{{"m1", ck.adam.m1}, {"m2", ck.adam.m2}, {"step", ck.adam.step}};
  j["next_epoch"] = ck.next_epoch;
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint ck;
  ck.format_version = j.at("format_version").get<int>();
  if (ck.format_version != 1)
    throw InvalidConfig("checkpoint: unsupported format version " +
                        std::to_string(ck.format_version));
  ck.config = config_from_json(j.at("config"));
  for (const auto& s : j.at("segments"))
    ck.params.add_segment(s.at("name").get<std::string>(), s.at("length").get<int>());
  const auto values = j.at("values").get<std::vector<double>>();
  if (static_cast<int>(values.size()) != ck.params.size())
    throw InvalidConfig("checkpoint: value count does not match segment table");
  std::copy(values.begin(), values.end(), ck.params.data());
  ck.adam.m1 = j.at("adam").at("m1").get<std::vector<double>>();
  ck.adam.m2 = j.at("adam").at("m2").get<std::vector<double>>();
  ck.adam.step = j.at("adam").at("step").get<long>();
  ck.next_epoch = j.at("next_epoch").get<int>();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << to_json(ck).dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw PreTrainRequired("missing checkpoint " + path.string() +
                           "; run `fpflow fit` first to produce one");
  json j;
  is >> j;
  return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace fs = std::filesystem;

/// simulate: draw the initial mixture, integrate the SDE, persist snapshots.
inline fs::path cmd_simulate(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto truth = make_truth(cfg);
  const auto ds = generate_dataset(truth.problem, truth.initial, cfg.n_samples, cfg.times, cfg.dt,
                                   cfg.seed);
  json extra;
  extra["seed"] = cfg.seed;
  extra["dt"] = cfg.dt;
  extra["preset"] = cfg.preset;
  json gt;
  gt["potential_kind"] = cfg.potential_kind;
  gt["theta2_names"] = truth.theta2_names;
  gt["theta2_values"] = truth.theta2_truth;
  json dmat = json::array();
  for (int r = 0; r < truth.d_true.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < truth.d_true.cols(); ++c) row.push_back(truth.d_true(r, c));
    dmat.push_back(row);
  }
  gt["diffusion"] = dmat;
  extra["ground_truth"] = gt;
  const fs::path dir = fs::path(cfg.out_dir) / "dataset";
  save_dataset(ds, extra, dir);
  if (log) (*log) << "[simulate] wrote " << ds.snapshots.size() << " snapshots to " << dir << "\n";
  return dir;
}

struct FitOutputs {
  TrainReport report;
  Checkpoint checkpoint;
};

/// fit: deterministic training; writes report.json, checkpoint.json, the
/// per-epoch Theta_2 trajectory CSV, and timing.json (the only output file
/// that varies between identical reruns).
inline FitOutputs cmd_fit(const ExperimentConfig& cfg, const fs::path& dataset_dir,
                          const std::optional<fs::path>& resume_from = std::nullopt,
                          std::ostream* log = nullptr) {
  cfg.validate();
  const auto ds = load_dataset(dataset_dir);
  if (ds.dim != cfg.dim)
    throw InvalidConfig("cmd_fit: dataset dim " + std::to_string(ds.dim) +
                        " does not match config dim " + std::to_string(cfg.dim));
  auto models = build_models(cfg);
  FitState state;
  if (resume_from) {
    const auto ck = load_checkpoint(*resume_from);
    if (ck.params.size() != models.params.size())
      throw InvalidConfig("cmd_fit: checkpoint layout does not match config");
    models.params = ck.params;
    state.adam = ck.adam;
    state.next_epoch = ck.next_epoch;
  }
  auto report = fit(ds, models.map, models.pot, models.diff, models.params, cfg.loss, &state, log);

  FitOutputs out;
  out.report = std::move(report);
  out.checkpoint.config = cfg;
  out.checkpoint.params = models.params;
  out.checkpoint.adam = state.adam;
  out.checkpoint.next_epoch = state.next_epoch;

  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  save_checkpoint(out.checkpoint, dir / "checkpoint.json");
  {
    json j;
    j["format_version"] = 1;
    j["config"] = to_json(cfg);
    j["loss_curve"] = out.report.loss_curve;
    j["theta2_names"] = out.report.theta2_names;
    j["theta2_trajectory"] = out.report.theta2_trajectory;
    j["min_diffusion_eig"] = out.report.min_diffusion_eig;
    j["start_epoch"] = out.report.start_epoch;
    j["epochs_run"] = out.report.epochs_run;
    j["aborted"] = out.report.aborted;
    j["abort_reason"] = out.report.abort_reason;
    std::vector<double> values(out.report.final_params.data(),
                               out.report.final_params.data() + out.report.final_params.size());
    j["final_params"] = values;
    std::ofstream os(dir / "report.json");
    if (!os) throw IoError("cannot write report.json");
    os << j.dump(2) << "\n";
  }
  {
    json j;
    j["wall_clock_seconds"] = out.report.wall_clock_seconds;
    std::ofstream os(dir / "timing.json");
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(dir / "theta2_trajectory.csv");
    os << "epoch";
    for (const auto& n : out.report.theta2_names) os << "," << n;
    os << "\n";
    for (size_t e = 0; e < out.report.theta2_trajectory.size(); ++e) {
      os << out.report.start_epoch + static_cast<int>(e);
      for (double v : out.report.theta2_trajectory[e]) os << "," << format_f64(v);
      os << "\n";
    }
  }
  if (log)
    (*log) << "[fit] " << out.report.epochs_run << " epochs, final loss "
           << (out.report.loss_curve.empty() ? 0.0 : out.report.loss_curve.back()) << "\n";
  return out;
}

/// bayes-fit: variational posterior around a deterministic checkpoint.
inline BayesReport cmd_bayes_fit(const ExperimentConfig& cfg, const fs::path& dataset_dir,
                                 const fs::path& checkpoint_path, std::ostream* log = nullptr) {
  cfg.validate();
  const auto ds = load_dataset(dataset_dir);
  const auto ck = load_checkpoint(checkpoint_path);  // PreTrainRequired if absent
  auto models = build_models(cfg);
  if (ck.params.size() != models.params.size())
    throw InvalidConfig("cmd_bayes_fit: checkpoint layout does not match config");
  models.params = ck.params;
  auto report = bayes_fit(ds, models.map, models.pot, models.diff, models.params, cfg.bayes, log);

  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  json j;
  j["format_version"] = 1;
  j["config"] = to_json(cfg);
  j["seed"] = cfg.bayes.seed;
  j["theta2_names"] = report.theta2_names;
  j["posterior_mean"] = report.posterior_mean;
  j["posterior_std"] = report.posterior_std;
  j["loss_curve"] = report.loss_curve;
  j["nll_floor"] = report.nll_floor;
  j["pde_floor"] = report.pde_floor;
  j["steps_run"] = report.steps_run;
  std::ofstream os(dir / "bayes_report.json");
  if (!os) throw IoError("cannot write bayes_report.json");
  os << j.dump(2) << "\n";
  {
    json tj;
    tj["wall_clock_seconds"] = report.wall_clock_seconds;
    std::ofstream ts(dir / "bayes_timing.json");
    ts << tj.dump(2) << "\n";
  }
  if (log) (*log) << "[bayes-fit] " << report.steps_run << " steps\n";
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation grids and truth metrics
// ---------------------------------------------------------------------------

struct GridSpec {
  double lo = -8.0;
  double hi = 8.0;
  int resolution = 200;
  std::vector<double> times = {0.1, 0.4, 0.7};
  // for dim > 2: plot the (axis_a, axis_b) plane, other coordinates at 0
  int axis_a = 0;
  int axis_b = 1;
};

/// report: density grids per requested time, a potential grid, and 1D axis
/// slices of the potential. All CSV, plot-ready.
inline void cmd_report(const Checkpoint& ck, const GridSpec& grid, const fs::path& out_dir,
                       std::ostream* log = nullptr) {
  auto models = build_models(ck.config);
  if (models.params.size() != ck.params.size())
    throw InvalidConfig("cmd_report: checkpoint layout mismatch");
  models.params = ck.params;
  const int d = ck.config.dim;
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  const int res = grid.resolution;
  auto coord = [&](int i) { return grid.lo + (grid.hi - grid.lo) * i / (res - 1); };

  for (size_t ti = 0; ti < grid.times.size(); ++ti) {
    const double time = grid.times[ti];
    std::ostringstream name;
    name << "density_t" << time << ".csv";
    std::ofstream os(out_dir / name.str());
    os << "x1,x2,density\n";
    std::vector<double> x(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < res; ++i) {
      for (int j = 0; j < res; ++j) {
        std::fill(x.begin(), x.end(), 0.0);
        x[static_cast<size_t>(grid.axis_a)] = coord(i);
        if (d > 1) x[static_cast<size_t>(grid.axis_b)] = coord(j);
        const double rho = std::exp(log_pullback_density(models.map, x, time, models.params));
        os << format_f64(x[static_cast<size_t>(grid.axis_a)]) << ","
           << format_f64(d > 1 ? x[static_cast<size_t>(grid.axis_b)] : 0.0) << ","
           << format_f64(rho) << "\n";
        if (d == 1) break;
      }
    }
  }

  {  // potential grid on the same plane
    std::ofstream os(out_dir / "potential_grid.csv");
    os << "x1,x2,psi\n";
    std::vector<double> x(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < res; ++i) {
      for (int j = 0; j < res; ++j) {
        std::fill(x.begin(), x.end(), 0.0);
        x[static_cast<size_t>(grid.axis_a)] = coord(i);
        if (d > 1) x[static_cast<size_t>(grid.axis_b)] = coord(j);
        os << format_f64(x[static_cast<size_t>(grid.axis_a)]) << ","
           << format_f64(d > 1 ? x[static_cast<size_t>(grid.axis_b)] : 0.0) << ","
           << format_f64(potential_value(models.pot, x, models.params)) << "\n";
        if (d == 1) break;
      }
    }
  }

  for (int axis = 0; axis < std::min(d, 2); ++axis) {  // 1D slices along each axis
    std::ofstream os(out_dir / ("potential_slice_x" + std::to_string(axis + 1) + ".csv"));
    os << "x,psi\n";
    std::vector<double> x(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < res; ++i) {
      std::fill(x.begin(), x.end(), 0.0);
      x[static_cast<size_t>(axis)] = coord(i);
      os << format_f64(coord(i)) << "," << format_f64(potential_value(models.pot, x, models.params))
         << "\n";
    }
  }
  if (log) (*log) << "[report] grids written to " << out_dir << "\n";
}

struct TruthMetrics {
  std::vector<std::string> names;
  std::vector<double> recovered;
  std::vector<double> truth;
  std::vector<double> abs_error;
  std::vector<double> rel_error;
  double max_abs_error = 0.0;
  double psi_rms_error = -1.0;  // neural potentials only
};

/// eval-truth: per-parameter recovery errors against the preset ground truth.
/// Neural potentials are scored by mean-shifted RMS error over the t=0 data
/// hull instead of per-parameter comparison.
inline TruthMetrics cmd_eval_truth(const Checkpoint& ck,
                                   const std::optional<fs::path>& dataset_dir = std::nullopt) {
  auto models = build_models(ck.config);
  if (models.params.size() != ck.params.size())
    throw InvalidConfig("cmd_eval_truth: checkpoint layout mismatch");
  models.params = ck.params;
  const auto truth = make_truth(ck.config);

  TruthMetrics m;
  {
    // recovered values: exposed diffusion entries, then potential parameters
    const auto named = theta2_slots(models.pot, models.diff);
    const auto values = theta2_values(models.pot, models.diff, models.params);
    for (size_t i = 0; i < named.size() && i < truth.theta2_truth.size(); ++i) {
      const double rec = values[i];
      const double tr = truth.theta2_truth[i];
      m.names.push_back(named[i].name);
      m.recovered.push_back(rec);
      m.truth.push_back(tr);
      m.abs_error.push_back(std::abs(rec - tr));
      m.rel_error.push_back(tr != 0.0 ? std::abs(rec - tr) / std::abs(tr) : std::abs(rec));
      m.max_abs_error = std::max(m.max_abs_error, m.abs_error.back());
    }
  }
  if (ck.config.potential_kind == "neural") {
    if (dataset_dir) {
      const auto ds = load_dataset(*dataset_dir);
      const auto& hull = ds.snapshots.front().samples;
      double mean_hat = 0.0, mean_true = 0.0;
      std::vector<double> x(static_cast<size_t>(ds.dim));
      const int n = hull.rows();
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < ds.dim; ++c) x[static_cast<size_t>(c)] = hull(r, c);
        mean_hat += potential_value(models.pot, x, models.params) / n;
        mean_true += potential_value(truth.problem.potential, x, truth.problem.truth) / n;
      }
      double rms = 0.0;
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < ds.dim; ++c) x[static_cast<size_t>(c)] = hull(r, c);
        const double diff = (potential_value(models.pot, x, models.params) - mean_hat) -
                            (potential_value(truth.problem.potential, x, truth.problem.truth) -
                             mean_true);
        rms += diff * diff / n;
      }
      m.psi_rms_error = std::sqrt(rms);
    }
  }
  return m;
}

inline json to_json(const TruthMetrics& m) {
  json j;
  j["names"] = m.names;
  j["recovered"] = m.recovered;
  j["truth"] = m.truth;
  j["abs_error"] = m.abs_error;
  j["rel_error"] = m.rel_error;
  j["max_abs_error"] = m.max_abs_error;
  if (m.psi_rms_error >= 0.0) j["psi_rms_error"] = m.psi_rms_error;
  return j;
}

}  // namespace fpflow
