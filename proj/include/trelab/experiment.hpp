#pragma once

// Batch experiment driver behind the trelab CLI: single runs, sweeps,
// gradient checks and cross-run reports. Every routine writes plain files
// (JSON-lines metrics, JSON run records, CSV tables) so results can be
// inspected or merged after the fact.
//
// Layout of one run:
//   <dir>/config.json    canonical config echo
//   <dir>/metrics.jsonl  one object per iteration
//   <dir>/run.json       status, final summary, wall clock, version

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trelab/config.hpp"
#include "trelab/metrics.hpp"
#include "trelab/policy.hpp"
#include "trelab/ppo.hpp"
#include "trelab/random.hpp"
#include "trelab/regularizers.hpp"

namespace trelab {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "trelab-0.1.0";

// ---------------------------------------------------------------------------
// Small file helpers

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs fn(0..n-1) on up to `jobs` threads. Exceptions are rethrown after all
/// workers finish (first one wins).
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Single runs

/// The fixed JSON-lines record: iter, mean_reward, pass_rate, mean_entropy,
/// peak_prob, loss_surr, loss_reg, on_manifold_rate (in that order).
inline std::string metrics_line(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["iter"] = m.iteration;
  j["mean_reward"] = m.mean_reward;
  j["pass_rate"] = m.pass_rate;
  j["mean_entropy"] = m.mean_entropy;
  j["peak_prob"] = m.peak_prob;
  j["loss_surr"] = m.loss_surr;
  j["loss_reg"] = m.loss_reg;
  j["on_manifold_rate"] = m.on_manifold_rate;
  return j.dump();
}

inline std::string metrics_jsonl(std::span<const MetricsRecord> records) {
  std::string out;
  for (const auto& r : records) out += metrics_line(r) + "\n";
  return out;
}

inline MetricsRecord parse_metrics_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsRecord m;
  m.iteration = j.at("iter").get<std::size_t>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.pass_rate = j.at("pass_rate").get<double>();
  m.mean_entropy = j.at("mean_entropy").get<double>();
  m.peak_prob = j.at("peak_prob").get<double>();
  m.loss_surr = j.at("loss_surr").get<double>();
  m.loss_reg = j.at("loss_reg").get<double>();
  m.on_manifold_rate = j.at("on_manifold_rate").get<double>();
  return m;
}

struct RunSummary {
  std::uint64_t seed = 0;
  std::string method;
  std::string env;
  std::string status = "ok";  // "ok" or "aborted"
  std::string diagnostic;
  std::size_t iterations = 0;   // completed
  double eval_pass_rate = 0.0;  // Pass@1 over eval_rollouts episodes of the final policy
  double eval_mean_reward = 0.0;
  double final_peak_prob = 0.0;  // last training batch; eval batch if no iterations ran
  double final_mean_entropy = 0.0;
  double wall_clock_s = 0.0;
};

struct RunOutput {
  RunSummary summary;
  std::vector<MetricsRecord> records;
};

/// Trains one seed in memory. `kAuxiliary = false` compiles the regularizer
/// and selector paths out of the trainer.
template <bool kAuxiliary = true>
RunOutput execute_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const Environment env(cfg.env);
  auto policy = TabularPolicy::initial(env);
  auto trained = train<kAuxiliary>(policy, env, cfg.ppo, cfg.regularizer, cfg.selector, cfg.iterations, seed);

  RunOutput out;
  auto& s = out.summary;
  s.seed = seed;
  s.method = method_label(cfg.regularizer, cfg.selector);
  s.env = env_label(cfg.env);
  s.iterations = trained.records.size();
  if (trained.aborted) {
    s.status = "aborted";
    s.diagnostic = trained.diagnostic;
  }
  const std::uint64_t eval_seed = derive_seed({seed, 0xe7a1ULL});
  if (cfg.eval_rollouts > 0 && policy.finite()) {
    const auto batch = rollout(policy, env, cfg.eval_rollouts, eval_seed);
    const auto m = batch_metrics(batch, policy);
    s.eval_pass_rate = m.pass_rate;
    s.eval_mean_reward = m.mean_reward;
    s.final_peak_prob = m.peak_prob;
    s.final_mean_entropy = m.mean_entropy;
  }
  if (!trained.records.empty()) {
    s.final_peak_prob = trained.records.back().peak_prob;
    s.final_mean_entropy = trained.records.back().mean_entropy;
  }
  out.records = std::move(trained.records);
  s.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline nlohmann::json summary_to_json(const RunSummary& s) {
  return {{"seed", s.seed},
          {"method", s.method},
          {"env", s.env},
          {"status", s.status},
          {"diagnostic", s.diagnostic},
          {"iterations", s.iterations},
          {"eval_pass_rate", s.eval_pass_rate},
          {"eval_mean_reward", s.eval_mean_reward},
          {"final_peak_prob", s.final_peak_prob},
          {"final_mean_entropy", s.final_mean_entropy}};
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
  RunSummary s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.method = j.at("method").get<std::string>();
  s.env = j.at("env").get<std::string>();
  s.status = j.at("status").get<std::string>();
  s.diagnostic = j.value("diagnostic", "");
  s.iterations = j.at("iterations").get<std::size_t>();
  s.eval_pass_rate = j.at("eval_pass_rate").get<double>();
  s.eval_mean_reward = j.at("eval_mean_reward").get<double>();
  s.final_peak_prob = j.at("final_peak_prob").get<double>();
  s.final_mean_entropy = j.at("final_mean_entropy").get<double>();
  return s;
}

/// Trains one seed and writes its artifact directory.
inline RunSummary run_to_dir(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", canonical_config(cfg));
  const auto out = execute_run(cfg, seed);
  write_text(dir / "metrics.jsonl", metrics_jsonl(out.records));
  nlohmann::ordered_json run;
  run["version"] = kVersion;
  run["seed"] = seed;
  run["status"] = out.summary.status;
  run["summary"] = summary_to_json(out.summary);
  run["wall_clock_s"] = out.summary.wall_clock_s;
  write_text(dir / "run.json", run.dump(2) + "\n");
  return out.summary;
}

inline fs::path seed_dir(const fs::path& root, std::uint64_t seed) { return root / ("seed_" + std::to_string(seed)); }

inline const std::vector<std::string>& summary_header() {
  static const std::vector<std::string> h{"seed",           "method",           "env",
                                          "status",         "iterations",       "eval_pass_rate",
                                          "eval_mean_reward", "final_peak_prob", "final_mean_entropy"};
  return h;
}

inline std::vector<std::string> summary_fields(const RunSummary& s) {
  return {std::to_string(s.seed),           s.method,
          s.env,                            s.status,
          std::to_string(s.iterations),     csv_number(s.eval_pass_rate),
          csv_number(s.eval_mean_reward),   csv_number(s.final_peak_prob),
          csv_number(s.final_mean_entropy)};
}

/// `run`: one artifact directory per seed plus summary.csv (one row per seed).
inline std::vector<RunSummary> cmd_run(const ExperimentConfig& cfg, const fs::path& out_dir, std::size_t jobs = 1) {
  cfg.validate();
  fs::create_directories(out_dir);
  std::vector<RunSummary> summaries(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    summaries[i] = run_to_dir(cfg, cfg.seeds[i], seed_dir(out_dir, cfg.seeds[i]));
  });
  std::sort(summaries.begin(), summaries.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
  CsvWriter csv(out_dir / "summary.csv", summary_header());
  for (const auto& s : summaries) csv.row(summary_fields(s));
  return summaries;
}

// ---------------------------------------------------------------------------
// Sweeps

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"T", "alpha", "K", "P", "method"};
  return axes;
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"vanilla", "ent", "tre_k", "tre_p", "min_ent", "forking", "kl_cov"};
  return names;
}

/// Replaces the regularizer/selector of `base` with a named method preset;
/// alpha, K, P, fraction and beta are taken from the base config.
inline ExperimentConfig with_method(ExperimentConfig cfg, const std::string& name) {
  RegularizerSpec reg = cfg.regularizer;
  SelectorSpec sel = cfg.selector;
  reg.kind = RegularizerKind::None;
  sel.kind = SelectorKind::None;
  if (name == "ent") reg.kind = RegularizerKind::GlobalEntropy;
  else if (name == "tre_k") reg.kind = RegularizerKind::TreK;
  else if (name == "tre_p") reg.kind = RegularizerKind::TreP;
  else if (name == "min_ent") reg.kind = RegularizerKind::MinEnt;
  else if (name == "forking") sel.kind = SelectorKind::ForkingTokens;
  else if (name == "kl_cov") sel.kind = SelectorKind::KlCov;
  else if (name != "vanilla") throw DomainError("unknown method '" + name + "'");
  cfg.regularizer = reg;
  cfg.selector = sel;
  return cfg;
}

/// Applies one value along a sweep axis.
inline ExperimentConfig apply_axis(ExperimentConfig cfg, const std::string& axis, const std::string& value) {
  auto as_uint = [&](const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty() || v[0] == '-') throw DomainError("axis " + axis + ": '" + v + "' is not a positive integer");
    return static_cast<std::size_t>(x);
  };
  auto as_double = [&](const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw DomainError("axis " + axis + ": '" + v + "' is not a number");
    return x;
  };
  if (axis == "T") {
    const auto t = as_uint(value);
    if (auto* c = std::get_if<SparseChainSpec>(&cfg.env.kind)) c->horizon = t;
    else std::get<ExplorationTreeSpec>(cfg.env.kind).depth = t;
  } else if (axis == "alpha") {
    cfg.regularizer.alpha = as_double(value);
  } else if (axis == "K") {
    cfg.regularizer.k = as_uint(value);
  } else if (axis == "P") {
    cfg.regularizer.p = as_double(value);
  } else if (axis == "method") {
    cfg = with_method(std::move(cfg), value);
  } else {
    throw DomainError("unknown sweep axis '" + axis + "' (expected T, alpha, K, P or method)");
  }
  cfg.validate();
  return cfg;
}

struct SweepRow {
  std::size_t value_index = 0;
  std::string value;
  RunSummary summary;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by (value index, method, seed)
  std::vector<ReportRow> deltas;
};

/// `sweep`: the cross product values x seeds. Every cell gets a vanilla
/// baseline: a companion run per value for the numeric axes, and one extra
/// `vanilla` value for the method axis when it is not listed. On the method
/// axis all runs form a single cell. Writes sweep.csv (one row per run) and
/// sweep_delta.csv (one row per cell and method).
inline SweepResult cmd_sweep(const ExperimentConfig& base, const std::string& axis,
                             const std::vector<std::string>& values, const fs::path& out_dir, std::size_t jobs = 1) {
  if (std::find(sweep_axes().begin(), sweep_axes().end(), axis) == sweep_axes().end()) {
    throw DomainError("unknown sweep axis '" + axis + "' (expected T, alpha, K, P or method)");
  }
  if (values.empty()) throw DomainError("sweep needs at least one value");
  base.validate();

  struct Job {
    std::size_t value_index;
    std::string value;
    ExperimentConfig cfg;
    std::uint64_t seed;
    fs::path dir;
  };
  const bool by_method = axis == "method";
  auto all_values = values;
  if (by_method && std::find(values.begin(), values.end(), "vanilla") == values.end()) all_values.push_back("vanilla");
  const auto cell_of = [&](const std::string& value) { return by_method ? axis : axis + "=" + value; };

  std::vector<Job> work;
  std::map<std::string, std::string> label_of;
  for (std::size_t vi = 0; vi < all_values.size(); ++vi) {
    const auto& value = all_values[vi];
    std::vector<ExperimentConfig> cell_cfgs{apply_axis(base, axis, value)};
    label_of[value] = method_label(cell_cfgs.front().regularizer, cell_cfgs.front().selector);
    if (!by_method && method_label(base.regularizer, base.selector) != "vanilla") {
      cell_cfgs.push_back(with_method(cell_cfgs.front(), "vanilla"));
    }
    for (const auto& cfg : cell_cfgs) {
      const std::string method = method_label(cfg.regularizer, cfg.selector);
      const fs::path cell_dir = out_dir / (axis + "=" + value) / method;
      for (auto seed : cfg.seeds) work.push_back({vi, value, cfg, seed, seed_dir(cell_dir, seed)});
    }
  }

  std::vector<SweepRow> rows(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    const auto& job = work[i];
    rows[i] = {job.value_index, job.value, run_to_dir(job.cfg, job.seed, job.dir)};
  });
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.value_index, a.summary.method, a.summary.seed) <
           std::tie(b.value_index, b.summary.method, b.summary.seed);
  });

  std::vector<RunOutcome> outcomes;
  for (const auto& r : rows) outcomes.push_back({r.summary.method, cell_of(r.value), r.summary.seed, r.summary.eval_pass_rate});
  SweepResult result{rows, delta_report(outcomes, "vanilla")};

  std::map<std::pair<std::string, std::string>, const ReportRow*> by_cell;
  for (const auto& d : result.deltas) by_cell[{d.cell, d.method}] = &d;
  std::map<std::pair<std::string, std::uint64_t>, double> vanilla_by_seed;
  for (const auto& r : rows) {
    if (r.summary.method == "vanilla") vanilla_by_seed[{cell_of(r.value), r.summary.seed}] = r.summary.eval_pass_rate;
  }

  auto header = std::vector<std::string>{"axis", "value"};
  for (const auto& h : summary_header()) header.push_back(h);
  for (const auto* h : {"delta_vs_vanilla", "cell_mean", "cell_std", "cell_delta", "cell_delta_std"}) header.push_back(h);
  CsvWriter csv(out_dir / "sweep.csv", header);
  for (const auto& r : rows) {
    std::vector<std::string> f{axis, r.value};
    for (auto& s : summary_fields(r.summary)) f.push_back(std::move(s));
    const auto v = vanilla_by_seed.find({cell_of(r.value), r.summary.seed});
    f.push_back(v == vanilla_by_seed.end() ? "" : csv_number(r.summary.eval_pass_rate - v->second));
    const auto* d = by_cell.at({cell_of(r.value), r.summary.method});
    for (double x : {d->mean, d->std, d->delta, d->delta_std}) f.push_back(csv_number(x));
    csv.row(f);
  }

  CsvWriter dcsv(out_dir / "sweep_delta.csv",
                 {"axis", "value", "method", "seeds", "mean", "std", "vanilla_mean", "delta", "delta_std"});
  for (const auto& value : all_values) {
    for (const auto& d : result.deltas) {
      if (d.cell != cell_of(value) || (by_method && d.method != label_of.at(value))) continue;
      dcsv.row({axis, value, d.method, std::to_string(d.seeds), csv_number(d.mean), csv_number(d.std),
                csv_number(d.vanilla_mean), csv_number(d.delta), csv_number(d.delta_std)});
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckRow {
  std::string loss;
  std::size_t trials = 0;
  std::size_t rejected = 0;  // samples discarded for sitting near a selection boundary
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double tolerance = 1e-5;
  bool pass = false;
};

/// Loss kinds covered by the analytic-vs-numeric suite.
inline std::vector<std::pair<std::string, RegularizerSpec>> gradcheck_losses() {
  std::vector<std::pair<std::string, RegularizerSpec>> out;
  out.push_back({"ent", {RegularizerKind::GlobalEntropy}});
  for (std::size_t k : {2, 5, 10}) out.push_back({"tre_k(k=" + std::to_string(k) + ")", {RegularizerKind::TreK, 1.0, k}});
  for (double p : {0.9, 0.99, 0.999}) {
    std::ostringstream name;
    name << "tre_p(p=" << p << ")";
    out.push_back({name.str(), {RegularizerKind::TreP, 1.0, 2, p}});
  }
  out.push_back({"min_ent", {RegularizerKind::MinEnt}});
  return out;
}

/// For every loss kind: `trials` logit vectors with dimension uniform in
/// [min_dim, max_dim] and entries iid U[-3, 3], resampled until every
/// selection boundary is at least 10 steps away; compares the analytic
/// gradient with central differences.
inline GradcheckReport run_gradcheck(std::size_t min_dim, std::size_t max_dim, std::size_t trials,
                                     std::uint64_t seed, double step = 1e-5, double tolerance = 1e-5) {
  if (min_dim < 2 || max_dim < min_dim) throw DomainError("gradcheck: need 2 <= min_dim <= max_dim");
  if (trials < 1) throw DomainError("gradcheck: trials must be >= 1");
  GradcheckReport report;
  report.tolerance = tolerance;
  report.pass = true;
  const auto losses = gradcheck_losses();
  for (std::size_t li = 0; li < losses.size(); ++li) {
    const auto& [name, spec] = losses[li];
    GradcheckRow row{name, trials};
    Rng rng(derive_seed({seed, li}));
    const ScalarLoss f = [&spec = spec](std::span<const double> z) { return regularizer_loss(z, spec).value; };
    for (std::size_t t = 0; t < trials; ++t) {
      Logits z;
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt > 100000) throw DomainError("gradcheck: could not sample a boundary-free point");
        const std::size_t dim = min_dim + uniform_index(rng, max_dim - min_dim + 1);
        z.resize(dim);
        for (double& v : z) v = -3.0 + 6.0 * uniform01(rng);
        if (selection_margin(z, spec) >= 10.0 * step) break;
        ++row.rejected;
      }
      const auto analytic = regularizer_loss(z, spec).grad;
      const auto numeric = finite_diff_grad(f, z, step);
      row.max_rel_error = std::max(row.max_rel_error, max_relative_error(analytic, numeric));
    }
    row.pass = row.max_rel_error < tolerance;
    report.pass = report.pass && row.pass;
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reports

struct LoadedRun {
  fs::path dir;
  ExperimentConfig config;
  RunSummary summary;
  std::vector<MetricsRecord> records;
};

/// Loads one artifact directory; throws on anything missing or malformed.
inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.dir = dir;
  run.config = parse_config(read_text(dir / "config.json"));
  const auto meta = nlohmann::json::parse(read_text(dir / "run.json"));
  run.summary = summary_from_json(meta.at("summary"));
  std::istringstream lines(read_text(dir / "metrics.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) run.records.push_back(parse_metrics_line(line));
  }
  if (run.records.size() != run.summary.iterations) throw std::runtime_error("metrics.jsonl length does not match run.json");
  return run;
}

/// Every directory under `roots` (inclusive) that contains a run.json.
inline std::vector<fs::path> find_run_dirs(const std::vector<fs::path>& roots) {
  std::vector<fs::path> out;
  for (const auto& root : roots) {
    if (fs::is_regular_file(root / "run.json")) out.push_back(root);
    if (!fs::is_directory(root)) continue;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().filename() == "run.json") {
        const auto dir = entry.path().parent_path();
        if (dir != root) out.push_back(dir);
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct ReportResult {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<ReportRow> deltas;
};

/// `report`: reads every run under `roots` and writes
///   report_summary.csv      method x cell mean/std of the final metrics
///   report_delta.csv        delta vs vanilla per cell (matched seeds)
///   report_survival.csv     (1 - eps)^T fit per method over chain horizons
///   report_peak_prob.csv    per-iteration peak probability, raw and smoothed
/// Corrupt runs are skipped with a warning on `warn`.
inline ReportResult cmd_report(const std::vector<fs::path>& roots, const fs::path& out_dir, std::ostream& warn = std::cerr) {
  ReportResult result;
  std::vector<LoadedRun> runs;
  for (const auto& dir : find_run_dirs(roots)) {
    try {
      runs.push_back(load_run(dir));
    } catch (const std::exception& e) {
      warn << "warning: skipping " << dir.string() << ": " << e.what() << "\n";
      ++result.skipped;
    }
  }
  result.loaded = runs.size();
  if (runs.empty()) throw std::runtime_error("report: no readable runs found");
  fs::create_directories(out_dir);

  // Summary and deltas keyed by (method, env cell).
  std::vector<RunOutcome> outcomes;
  std::map<std::pair<std::string, std::string>, std::vector<const LoadedRun*>> groups;
  for (const auto& r : runs) {
    outcomes.push_back({r.summary.method, r.summary.env, r.summary.seed, r.summary.eval_pass_rate});
    groups[{r.summary.env, r.summary.method}].push_back(&r);
  }
  {
    CsvWriter csv(out_dir / "report_summary.csv",
                  {"cell", "method", "seeds", "eval_pass_rate_mean", "eval_pass_rate_std", "eval_mean_reward_mean",
                   "eval_mean_reward_std", "final_peak_prob_mean", "final_peak_prob_std"});
    for (const auto& [key, members] : groups) {
      std::vector<double> pass, reward, peak;
      for (const auto* r : members) {
        pass.push_back(r->summary.eval_pass_rate);
        reward.push_back(r->summary.eval_mean_reward);
        peak.push_back(r->summary.final_peak_prob);
      }
      const auto a = mean_std(pass), b = mean_std(reward), c = mean_std(peak);
      csv.row({key.first, key.second, std::to_string(members.size()), csv_number(a.mean), csv_number(a.std),
               csv_number(b.mean), csv_number(b.std), csv_number(c.mean), csv_number(c.std)});
    }
  }

  result.deltas = delta_report(outcomes, "vanilla");
  {
    CsvWriter csv(out_dir / "report_delta.csv",
                  {"cell", "method", "seeds", "mean", "std", "vanilla_mean", "delta", "delta_std"});
    for (const auto& d : result.deltas) {
      csv.row({d.cell, d.method, std::to_string(d.seeds), csv_number(d.mean), csv_number(d.std),
               csv_number(d.vanilla_mean), csv_number(d.delta), csv_number(d.delta_std)});
    }
  }

  // Survival fit: chain runs grouped by method and every env field but T.
  {
    CsvWriter csv(out_dir / "report_survival.csv",
                  {"family", "method", "horizon", "empirical", "predicted", "residual", "sigma", "epsilon_hat"});
    std::map<std::pair<std::string, std::string>, std::map<std::size_t, std::vector<const LoadedRun*>>> families;
    for (const auto& r : runs) {
      const auto* c = std::get_if<SparseChainSpec>(&r.config.env.kind);
      if (!c) continue;
      std::ostringstream fam;
      fam << "sparse_chain(V=" << c->vocab_size << ",m=" << c->valid_per_step << ",b=" << c->init_bias
          << ",seed=" << r.config.env.seed << ")";
      families[{fam.str(), r.summary.method}][c->horizon].push_back(&r);
    }
    for (const auto& [key, by_t] : families) {
      std::vector<SurvivalPoint> pts;
      for (const auto& [t, members] : by_t) {
        double sum = 0.0;
        std::size_t episodes = 0;
        for (const auto* r : members) {
          sum += r->summary.eval_pass_rate;
          episodes += r->config.eval_rollouts;
        }
        pts.push_back({t, sum / static_cast<double>(members.size()), episodes});
      }
      try {
        const auto fit = survival_compare(pts);
        for (const auto& row : fit.rows) {
          csv.row({key.first, key.second, std::to_string(row.horizon), csv_number(row.empirical),
                   csv_number(row.predicted), csv_number(row.residual), csv_number(row.sigma),
                   csv_number(fit.epsilon_hat)});
        }
      } catch (const DomainError&) {
        // fewer than two usable horizons: nothing to fit
      }
    }
  }

  {
    CsvWriter csv(out_dir / "report_peak_prob.csv", {"cell", "method", "iter", "peak_prob", "peak_prob_smoothed", "seeds"});
    for (const auto& [key, members] : groups) {
      std::size_t len = 0;
      for (const auto* r : members) len = std::max(len, r->records.size());
      std::vector<double> mean(len, 0.0);
      std::vector<std::size_t> count(len, 0);
      for (const auto* r : members) {
        for (std::size_t i = 0; i < r->records.size(); ++i) {
          mean[i] += r->records[i].peak_prob;
          ++count[i];
        }
      }
      for (std::size_t i = 0; i < len; ++i) mean[i] /= static_cast<double>(count[i]);
      const auto smooth = smooth_series(mean, 0.8);
      for (std::size_t i = 0; i < len; ++i) {
        csv.row({key.first, key.second, std::to_string(i), csv_number(mean[i]), csv_number(smooth[i]),
                 std::to_string(count[i])});
      }
    }
  }
  return result;
}

}  // namespace trelab
