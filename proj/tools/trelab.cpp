// trelab: command-line front end for training runs, sweeps, gradient checks
// and reports.
//
//   trelab run --config cfg.json [--out-dir DIR] [--seeds 0,1,2] [--jobs N]
//   trelab sweep --config cfg.json --axis T --values 8,32,128 [...]
//   trelab gradcheck [--dims 4:64] [--trials 100] [--seed 0]
//   trelab report RUN_DIR... [--out-dir DIR]

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trelab/trelab.hpp"

namespace {

using namespace trelab;

struct Common {
  std::string config;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", c.out_dir, "output directory (overrides output_dir in the config)");
  cmd->add_option("--seeds", c.seeds, "training seeds (overrides seeds in the config)")->delimiter(',');
  cmd->add_option("--jobs", c.jobs, "parallel runs")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  auto cfg = load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
  cfg.validate();
  return cfg;
}

std::pair<std::size_t, std::size_t> parse_dims(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) {
      const auto d = std::stoul(s);
      return {d, d};
    }
    return {std::stoul(s.substr(0, colon)), std::stoul(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw DomainError("--dims expects MIN:MAX, got '" + s + "'");
  }
}

int run_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto summaries = cmd_run(cfg, cfg.output_dir, c.jobs);
  int aborted = 0;
  for (const auto& s : summaries) {
    std::printf("seed %llu  %-7s  pass %.4f  reward %.4f  peak %.4f\n", static_cast<unsigned long long>(s.seed),
                s.status.c_str(), s.eval_pass_rate, s.eval_mean_reward, s.final_peak_prob);
    if (s.status != "ok") {
      std::fprintf(stderr, "seed %llu aborted: %s\n", static_cast<unsigned long long>(s.seed), s.diagnostic.c_str());
      ++aborted;
    }
  }
  std::printf("wrote %s\n", (fs::path(cfg.output_dir) / "summary.csv").string().c_str());
  return aborted ? 1 : 0;
}

int sweep_cmd(const Common& c, const std::string& axis, const std::vector<std::string>& values) {
  const auto cfg = resolve(c);
  const auto result = cmd_sweep(cfg, axis, values, cfg.output_dir, c.jobs);
  for (const auto& d : result.deltas) {
    std::printf("%-14s %-28s mean %.4f  delta %+.4f (std %.4f, %zu seeds)\n", d.cell.c_str(), d.method.c_str(), d.mean,
                d.delta, d.delta_std, d.seeds);
  }
  std::printf("wrote %s\n", (fs::path(cfg.output_dir) / "sweep.csv").string().c_str());
  return 0;
}

int gradcheck_cmd(const std::string& dims, std::size_t trials, std::uint64_t seed) {
  const auto [lo, hi] = parse_dims(dims);
  const auto report = run_gradcheck(lo, hi, trials, seed);
  for (const auto& r : report.rows) {
    std::printf("%-16s trials %zu  rejected %zu  max_rel_err %.3e  %s\n", r.loss.c_str(), r.trials, r.rejected,
                r.max_rel_error, r.pass ? "ok" : "FAIL");
  }
  std::printf("%s (tolerance %.0e)\n", report.pass ? "PASS" : "FAIL", report.tolerance);
  return report.pass ? 0 : 1;
}

int report_cmd(const std::vector<std::string>& dirs, const std::string& out_dir) {
  std::vector<fs::path> roots(dirs.begin(), dirs.end());
  const auto result = cmd_report(roots, out_dir);
  std::printf("loaded %zu runs, skipped %zu; wrote report_*.csv to %s\n", result.loaded, result.skipped,
              out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trust-region entropy experiments on synthetic sequence tasks"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "train every seed of one config");
  add_common(run, run_opts);

  Common sweep_opts;
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "train a grid along one axis");
  add_common(sweep, sweep_opts);
  sweep->add_option("--axis", axis, "T, alpha, K, P or method")->required();
  sweep->add_option("--values", values, "comma-separated axis values")->required()->delimiter(',');

  std::string dims = "4:64";
  std::size_t trials = 100;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gradcheck->add_option("--dims", dims, "logit dimension range MIN:MAX");
  gradcheck->add_option("--trials", trials, "samples per loss kind")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "sampling seed");

  std::vector<std::string> run_dirs;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "aggregate finished runs into CSV tables");
  report->add_option("run_dirs", run_dirs, "run or sweep directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out-dir", report_out, "where to write the tables");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_cmd(run_opts);
    if (*sweep) return sweep_cmd(sweep_opts, axis, values);
    if (*gradcheck) return gradcheck_cmd(dims, trials, gc_seed);
    if (*report) return report_cmd(run_dirs, report_out);
  } catch (const ConfigError& e) {
    const auto& path = *run ? run_opts.config : sweep_opts.config;
    std::cerr << "error: " << path << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
