// Experiment runner: wraps the header-only library in four subcommands.
//
//   run             one model x method x seed, JSON record (+ optional CSV row)
//   sweep-leapfrog  oracle-tunes the trajectory length over {1,2,...,128}
//   analytic        conditioning crossover curve as CSV (+ optional SVG)
//   heatmap         greyscale lambda grid from vip run records
//
// Exit codes: 0 success, 1 usage or validation failure, 2 numerical failure.
// Outputs are written through a temp file + rename so a crash never leaves a
// half-written record, and every file already written by a failing command is
// removed before exiting.

#include <cstdio>
#include <exception>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "reparam/conjugate.hpp"
#include "reparam/experiment.hpp"
#include "reparam/svg.hpp"

namespace {

using nlohmann::json;

// Tracks files created by the running command so a failure can remove them.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (!armed_) return;
    for (const std::string& p : written_) std::remove(p.c_str());
  }
  void wrote(const std::string& path) { written_.push_back(path); }
  void dismiss() { armed_ = false; }

 private:
  std::vector<std::string> written_;
  bool armed_ = true;
};

void write_file(const std::string& path, const std::string& content, OutputGuard& guard) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) {
      std::remove(tmp.c_str());
      throw reparam::SchemaError("cannot write '" + path + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw reparam::SchemaError("cannot move output into place at '" + path + "'");
  }
  guard.wrote(path);
}

void append_csv_row(const std::string& path, const std::string& row, OutputGuard& guard) {
  bool fresh = true;
  {
    std::ifstream probe(path, std::ios::binary);
    fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
  }
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (fresh) {
    f << reparam::csv_header() << '\n';
    guard.wrote(path);  // only claim files this command created
  }
  f << row << '\n';
  f.flush();
  if (!f) throw reparam::SchemaError("cannot append to '" + path + "'");
}

struct RunFlags {
  std::string model, method, data, out, csv;
  std::string leapfrog = "auto";
  std::string profile = "desk";
  int chains = 8, warmup = 500, adapt = 300, samples = 2000;
  int vi_steps = 1500, vi_mc = 64;
  uint64_t seed = 0;
};

// Shared flag set for `run` and `sweep-leapfrog`.  Defaults are the desk
// profile: 8 chains, 500 warmup, 300 adaptation, 2000 kept draws, 1500
// variational steps at 64 draws per step.
void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_leapfrog) {
  cmd->add_option("--model", f.model, "zoo model name")->required();
  cmd->add_option("--method", f.method, "cp | ncp | ihmc | vip")->required();
  cmd->add_option("--data", f.data, "dataset CSV path");
  cmd->add_option("--chains", f.chains, "number of chains");
  cmd->add_option("--warmup", f.warmup, "discarded warmup draws per chain");
  cmd->add_option("--adapt", f.adapt, "step-size adaptation window");
  cmd->add_option("--samples", f.samples, "kept draws per chain");
  if (with_leapfrog)
    cmd->add_option("--leapfrog", f.leapfrog, "trajectory length, or 'auto' to sweep");
  cmd->add_option("--vi-steps", f.vi_steps, "variational optimisation steps");
  cmd->add_option("--vi-mc", f.vi_mc, "draws per gradient estimate");
  cmd->add_option("--seed", f.seed, "random seed")->required();
  cmd->add_option("--out", f.out, "output JSON path")->required();
  cmd->add_option("--csv", f.csv, "append an aggregation row to this CSV");
  cmd->add_option("--profile", f.profile, "named default bundle (only 'desk')");
}

reparam::ExperimentSpec spec_from_flags(const RunFlags& f) {
  if (f.profile != "desk")
    throw reparam::SchemaError("unknown profile '" + f.profile + "' (only 'desk' exists)");
  reparam::ExperimentSpec spec;
  spec.model = f.model;
  spec.dataset = f.data;
  spec.method = f.method;
  spec.seed = f.seed;
  spec.hmc.chains = f.chains;
  spec.hmc.warmup_steps = f.warmup;
  spec.hmc.adapt_steps = f.adapt;
  spec.hmc.samples = f.samples;
  spec.hmc.seed = f.seed;
  if (f.leapfrog == "auto") {
    spec.hmc.num_leapfrog = std::nullopt;
  } else {
    size_t used = 0;
    int L = 0;
    try {
      L = std::stoi(f.leapfrog, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f.leapfrog.size() || L < 1)
      throw reparam::SchemaError("--leapfrog must be 'auto' or a positive integer (got '" +
                                 f.leapfrog + "')");
    spec.hmc.num_leapfrog = L;
  }
  spec.vi.steps = f.vi_steps;
  spec.vi.n_mc = f.vi_mc;
  spec.vi.seed = f.seed;
  spec.check();
  return spec;
}

int cmd_run(const RunFlags& flags) {
  reparam::ExperimentSpec spec = spec_from_flags(flags);
  reparam::ResultRecord rec;
  if (!spec.hmc.num_leapfrog) {
    const reparam::SweepResult sweep = reparam::sweep_leapfrog(spec);
    rec = sweep.rows[sweep.best_index];
  } else {
    rec = reparam::run_experiment(spec);
  }
  OutputGuard guard;
  write_file(flags.out, reparam::record_to_json(rec).dump(2) + "\n", guard);
  if (!flags.csv.empty()) append_csv_row(flags.csv, reparam::csv_row(rec), guard);
  guard.dismiss();
  return 0;
}

int cmd_sweep(const RunFlags& flags) {
  reparam::ExperimentSpec base = spec_from_flags(flags);
  base.hmc.num_leapfrog = std::nullopt;
  const reparam::SweepResult sweep = reparam::sweep_leapfrog(base);
  json j;
  j["best"] = reparam::record_to_json(sweep.rows[sweep.best_index]);
  json table = json::array();
  for (const reparam::ResultRecord& rec : sweep.rows) {
    table.push_back({{"leapfrog", *rec.spec.hmc.num_leapfrog},
                     {"min_ess", rec.diagnostics.min_ess},
                     {"grad_evals", rec.diagnostics.grad_evals},
                     {"ess_per_1000_grads", rec.diagnostics.ess_per_1000_grads},
                     {"stderr_ess_per_1000_grads", rec.diagnostics.stderr_ess_per_1000}});
  }
  j["table"] = std::move(table);
  OutputGuard guard;
  write_file(flags.out, j.dump(2) + "\n", guard);
  if (!flags.csv.empty())
    append_csv_row(flags.csv, reparam::csv_row(sweep.rows[sweep.best_index]), guard);
  guard.dismiss();
  return 0;
}

struct AnalyticFlags {
  double sigma_mu = 1.0, q_min = 1e-3, q_max = 1e3;
  int points = 200;
  std::string out, svg;
};

int cmd_analytic(const AnalyticFlags& f) {
  if (!(f.sigma_mu > 0.0)) throw reparam::SchemaError("--sigma-mu must be positive");
  if (!(f.q_min > 0.0) || !(f.q_max > f.q_min))
    throw reparam::SchemaError("need 0 < --q-min < --q-max");
  if (f.points < 2) throw reparam::SchemaError("--points must be at least 2");
  const std::vector<double> grid = reparam::log_grid(f.q_min, f.q_max, f.points);
  const std::vector<reparam::CrossoverPoint> curve = reparam::crossover_curve(f.sigma_mu, grid);
  std::string csv = "q,kappa_cp,kappa_ncp\n";
  std::vector<reparam::CurvePoint> pts;
  pts.reserve(curve.size());
  for (const reparam::CrossoverPoint& p : curve) {
    csv += reparam::csv_number(p.q) + "," + reparam::csv_number(p.kappa_cp) + "," +
           reparam::csv_number(p.kappa_ncp) + "\n";
    pts.push_back({p.q, p.kappa_cp, p.kappa_ncp});
  }
  OutputGuard guard;
  write_file(f.out, csv, guard);
  if (!f.svg.empty()) write_file(f.svg, reparam::crossover_svg(pts), guard);
  guard.dismiss();
  return 0;
}

int cmd_heatmap(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<reparam::HeatmapRow> rows;
  for (const std::string& path : inputs) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw reparam::SchemaError("cannot read '" + path + "'");
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw reparam::SchemaError("'" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.contains("vi") || !j["vi"].contains("lambda_star"))
      throw reparam::SchemaError("'" + path +
                                 "' has no partial-centring coefficients; the heatmap "
                                 "needs records from vip runs");
    reparam::HeatmapRow row;
    row.label = j["spec"]["model"].get<std::string>() + " " +
                j["spec"]["method"].get<std::string>() + " s" +
                std::to_string(j["spec"]["seed"].get<uint64_t>());
    for (const json& site : j["vi"]["lambda_star"])
      for (const json& v : site["lambda"]) row.lambda.push_back(v.get<double>());
    rows.push_back(std::move(row));
  }
  OutputGuard guard;
  write_file(out, reparam::heatmap_svg(rows), guard);
  guard.dismiss();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reparameterisation experiment runner"};
  app.require_subcommand(1);

  RunFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "run one model x method x seed");
  add_run_flags(run, run_flags, /*with_leapfrog=*/true);

  RunFlags sweep_flags;
  CLI::App* sweep = app.add_subcommand("sweep-leapfrog", "tune the trajectory length");
  add_run_flags(sweep, sweep_flags, /*with_leapfrog=*/false);

  AnalyticFlags an;
  CLI::App* analytic = app.add_subcommand("analytic", "conditioning crossover curve");
  analytic->add_option("--sigma-mu", an.sigma_mu, "prior scale of the group mean")->required();
  analytic->add_option("--q-min", an.q_min, "lowest evidence precision")->required();
  analytic->add_option("--q-max", an.q_max, "highest evidence precision")->required();
  analytic->add_option("--points", an.points, "grid size (log-spaced)");
  analytic->add_option("--out", an.out, "output CSV path")->required();
  analytic->add_option("--svg", an.svg, "optional SVG plot path");

  std::vector<std::string> heat_inputs;
  std::string heat_out;
  CLI::App* heat = app.add_subcommand("heatmap", "lambda grid from vip records");
  heat->add_option("inputs", heat_inputs, "vip run JSON files")->required();
  heat->add_option("--out", heat_out, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(run_flags);
    if (sweep->parsed()) return cmd_sweep(sweep_flags);
    if (analytic->parsed()) return cmd_analytic(an);
    if (heat->parsed()) return cmd_heatmap(heat_inputs, heat_out);
  } catch (const reparam::NonFiniteEvaluation& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const reparam::OptimisationFailed& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
