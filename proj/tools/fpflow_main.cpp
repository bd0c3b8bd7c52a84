// fpflow: learn Fokker-Planck dynamics and density trajectories from particle
// snapshots via monotone triangular transport maps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "fpflow/fpflow.hpp"

namespace {

namespace fs = std::filesystem;
using namespace fpflow;

struct GlobalFlags {
  std::string config_path;
  std::string preset = "iso-quadratic-2d";
  std::string budget;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> epochs;
  std::optional<int> n_samples;
};

ExperimentConfig assemble_config(const GlobalFlags& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) {
    std::ifstream is(g.config_path);
    if (!is) throw InvalidConfig("cannot open config file " + g.config_path);
    json j;
    try {
      is >> j;
    } catch (const std::exception& e) {
      throw InvalidConfig(std::string("config parse error: ") + e.what());
    }
    cfg = config_from_json(j);
    if (!g.budget.empty() && g.budget != cfg.budget)
      cfg = make_preset_config(cfg.preset, g.budget);
  } else {
    cfg = make_preset_config(g.preset, g.budget.empty() ? "paper" : g.budget);
  }
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.loss.seed = *g.seed;
    cfg.bayes.seed = *g.seed;
  }
  if (g.lambda) {
    cfg.loss.lambda = *g.lambda;
    cfg.bayes.lambda = *g.lambda;
  }
  if (g.epochs) cfg.loss.epochs = *g.epochs;
  if (g.n_samples) cfg.n_samples = *g.n_samples;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  cfg.validate();
  return cfg;
}

void add_global_flags(CLI::App* cmd, GlobalFlags& g) {
  cmd->add_option("--config", g.config_path, "JSON config file (flags override file values)");
  cmd->add_option("--preset", g.preset,
                  "problem preset: iso-quadratic-2d | aniso-doublewell-2d | lse-wells-{3,4,5}d | "
                  "custom");
  cmd->add_option("--budget", g.budget, "compute budget: paper | desk");
  cmd->add_option("--seed", g.seed, "seed for data generation and training");
  cmd->add_option("--out", g.out_dir, "output directory");
  cmd->add_option("--lambda", g.lambda, "PDE-residual weight in the loss");
  cmd->add_option("--epochs", g.epochs, "training epochs");
  cmd->add_option("--n-samples", g.n_samples, "samples per snapshot when simulating");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fpflow: joint density and Fokker-Planck system identification from snapshots"};
  app.require_subcommand(1);

  GlobalFlags g_sim, g_fit, g_bayes, g_report, g_eval;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic snapshot dataset");
  add_global_flags(sim, g_sim);

  auto* fit_cmd = app.add_subcommand("fit", "train the map and system parameters");
  add_global_flags(fit_cmd, g_fit);
  std::string fit_dataset, fit_resume;
  fit_cmd->add_option("--dataset", fit_dataset, "dataset directory (from simulate)")->required();
  fit_cmd->add_option("--resume", fit_resume, "checkpoint.json to resume from");

  auto* bayes_cmd = app.add_subcommand("bayes-fit", "variational posterior around a checkpoint");
  add_global_flags(bayes_cmd, g_bayes);
  std::string bayes_dataset, bayes_checkpoint;
  std::optional<int> bayes_steps;
  bayes_cmd->add_option("--dataset", bayes_dataset, "dataset directory")->required();
  bayes_cmd->add_option("--checkpoint", bayes_checkpoint, "deterministic checkpoint.json")
      ->required();
  bayes_cmd->add_option("--steps", bayes_steps, "variational optimization steps");

  auto* report_cmd = app.add_subcommand("report", "density/potential evaluation grids");
  std::string report_checkpoint, report_out = "report";
  GridSpec grid;
  report_cmd->add_option("--checkpoint", report_checkpoint, "checkpoint.json")->required();
  report_cmd->add_option("--out", report_out, "output directory");
  report_cmd->add_option("--lo", grid.lo, "grid lower bound");
  report_cmd->add_option("--hi", grid.hi, "grid upper bound");
  report_cmd->add_option("--resolution", grid.resolution, "grid nodes per axis");
  report_cmd->add_option("--times", grid.times, "time stamps to evaluate");
  report_cmd->add_option("--axis-a", grid.axis_a, "first plotted axis (0-based, dim > 2)");
  report_cmd->add_option("--axis-b", grid.axis_b, "second plotted axis (0-based, dim > 2)");

  auto* eval_cmd = app.add_subcommand("eval-truth", "recovery errors against the preset truth");
  std::string eval_checkpoint, eval_dataset, eval_out;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint.json")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "dataset dir (neural-potential RMS)");
  eval_cmd->add_option("--out", eval_out, "write metrics JSON here (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      const auto cfg = assemble_config(g_sim);
      cmd_simulate(cfg, &std::cout);
    } else if (fit_cmd->parsed()) {
      const auto cfg = assemble_config(g_fit);
      std::optional<fs::path> resume;
      if (!fit_resume.empty()) resume = fit_resume;
      cmd_fit(cfg, fit_dataset, resume, &std::cout);
    } else if (bayes_cmd->parsed()) {
      auto cfg = assemble_config(g_bayes);
      if (bayes_steps) cfg.bayes.steps = *bayes_steps;
      cmd_bayes_fit(cfg, bayes_dataset, bayes_checkpoint, &std::cout);
    } else if (report_cmd->parsed()) {
      const auto ck = load_checkpoint(report_checkpoint);
      cmd_report(ck, grid, report_out, &std::cout);
    } else if (eval_cmd->parsed()) {
      const auto ck = load_checkpoint(eval_checkpoint);
      std::optional<fs::path> ds_dir;
      if (!eval_dataset.empty()) ds_dir = eval_dataset;
      const auto metrics = cmd_eval_truth(ck, ds_dir);
      const auto j = to_json(metrics);
      if (eval_out.empty()) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::ofstream os(eval_out);
        if (!os) throw IoError("cannot write " + eval_out);
        os << j.dump(2) << "\n";
      }
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const PreTrainRequired& e) {
    std::cerr << "pre-training required: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
