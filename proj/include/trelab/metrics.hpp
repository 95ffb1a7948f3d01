#pragma once

// Per-iteration batch aggregates and cross-run comparisons.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/policy.hpp"

namespace trelab {

struct MetricsRecord {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double pass_rate = 0.0;
  double mean_entropy = 0.0;
  double peak_prob = 0.0;  // average peak probability over visited states
  double loss_surr = 0.0;
  double loss_reg = 0.0;
  double on_manifold_rate = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Visitation-weighted aggregates over every step of a rollout batch, using
/// the policy's current logits at the visited states. Loss fields are left 0.
inline MetricsRecord batch_metrics(std::span<const Trajectory> batch, const TabularPolicy& policy) {
  if (batch.empty()) throw DomainError("batch_metrics: empty batch");
  MetricsRecord m;
  std::size_t steps = 0;
  std::size_t on_manifold = 0;
  for (const auto& traj : batch) {
    m.mean_reward += traj.result.reward;
    m.pass_rate += traj.result.success ? 1.0 : 0.0;
    for (const auto& st : traj.steps) {
      const auto lp = log_softmax(policy.row(st.state_index));
      double h = 0.0;
      for (double l : lp) h -= std::exp(l) * l;
      m.mean_entropy += std::max(h, 0.0);
      m.peak_prob += std::exp(*std::max_element(lp.begin(), lp.end()));
      on_manifold += st.on_manifold ? 1 : 0;
      ++steps;
    }
  }
  const double n = static_cast<double>(batch.size());
  m.mean_reward /= n;
  m.pass_rate /= n;
  if (steps > 0) {
    m.mean_entropy /= static_cast<double>(steps);
    m.peak_prob /= static_cast<double>(steps);
    m.on_manifold_rate = static_cast<double>(on_manifold) / static_cast<double>(steps);
  }
  return m;
}

struct SeedStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

inline SeedStats mean_std(std::span<const double> xs) {
  SeedStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// Final metric of one (method, cell, seed) run.
struct RunOutcome {
  std::string method;
  std::string cell;
  std::uint64_t seed = 0;
  double final_metric = 0.0;
};

struct ReportRow {
  std::string method;
  std::string cell;
  std::size_t seeds = 0;
  double mean = 0.0;
  double std = 0.0;
  double vanilla_mean = 0.0;
  double delta = 0.0;      // mean(method) - mean(vanilla) over matched seeds
  double delta_std = 0.0;  // sample std of the per-seed paired differences
};

/// One row per (method, cell). Deltas use only seeds present for both the
/// method and the baseline in that cell.
inline std::vector<ReportRow> delta_report(std::span<const RunOutcome> runs, const std::string& vanilla_label) {
  using Key = std::pair<std::string, std::string>;  // (cell, method)
  std::map<Key, std::map<std::uint64_t, double>> table;
  for (const auto& r : runs) table[{r.cell, r.method}][r.seed] = r.final_metric;

  std::vector<ReportRow> rows;
  for (const auto& [key, by_seed] : table) {
    const auto& [cell, method] = key;
    const auto base = table.find({cell, vanilla_label});
    if (base == table.end()) throw DomainError("delta_report: no '" + vanilla_label + "' runs for cell " + cell);

    ReportRow row{method, cell, by_seed.size()};
    std::vector<double> all;
    for (const auto& [seed, v] : by_seed) all.push_back(v);
    const auto own = mean_std(all);
    row.mean = own.mean;
    row.std = own.std;

    std::vector<double> mine, theirs, diffs;
    for (const auto& [seed, v] : by_seed) {
      const auto it = base->second.find(seed);
      if (it == base->second.end()) continue;
      mine.push_back(v);
      theirs.push_back(it->second);
      diffs.push_back(v - it->second);
    }
    if (diffs.empty()) throw DomainError("delta_report: no seeds shared with '" + vanilla_label + "' in cell " + cell);
    row.vanilla_mean = mean_std(theirs).mean;
    row.delta = mean_std(mine).mean - row.vanilla_mean;
    row.delta_std = mean_std(diffs).std;
    rows.push_back(std::move(row));
  }
  return rows;
}

struct SurvivalPoint {
  std::size_t horizon = 0;
  double pass_rate = 0.0;
  std::size_t episodes = 0;  // 0 when unknown; disables the sigma column
};

struct SurvivalRow {
  std::size_t horizon = 0;
  double empirical = 0.0;
  double predicted = 0.0;
  double residual = 0.0;  // empirical - predicted
  double sigma = 0.0;     // binomial standard deviation of the empirical rate
};

struct SurvivalFit {
  double epsilon_hat = 0.0;
  std::vector<SurvivalRow> rows;
};

/// Fits log S_T = T log(1 - eps) by least squares through the origin and
/// tabulates residuals against (1 - eps)^T. Zero pass rates cannot enter the
/// log fit and are skipped there, but still get a residual row.
inline SurvivalFit survival_compare(std::span<const SurvivalPoint> points) {
  double num = 0.0;
  double den = 0.0;
  std::set<std::size_t> horizons;
  for (const auto& pt : points) {
    if (pt.horizon == 0) throw DomainError("survival_compare: horizon must be >= 1");
    if (pt.pass_rate <= 0.0) continue;
    const double t = static_cast<double>(pt.horizon);
    num += t * std::log(pt.pass_rate);
    den += t * t;
    horizons.insert(pt.horizon);
  }
  if (horizons.size() < 2) throw DomainError("survival_compare: need at least two horizons with nonzero pass rate");
  SurvivalFit fit;
  fit.epsilon_hat = std::clamp(1.0 - std::exp(num / den), 0.0, 1.0);
  for (const auto& pt : points) {
    SurvivalRow row{pt.horizon, pt.pass_rate};
    row.predicted = std::pow(1.0 - fit.epsilon_hat, static_cast<double>(pt.horizon));
    row.residual = pt.pass_rate - row.predicted;
    if (pt.episodes > 0) row.sigma = std::sqrt(row.predicted * (1.0 - row.predicted) / static_cast<double>(pt.episodes));
    fit.rows.push_back(row);
  }
  return fit;
}

/// Exponential moving average used for plot series: s_t = w s_{t-1} + (1 - w) x_t.
inline std::vector<double> smooth_series(std::span<const double> xs, double weight = 0.8) {
  std::vector<double> out;
  out.reserve(xs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s = i == 0 ? xs[i] : weight * s + (1.0 - weight) * xs[i];
    out.push_back(s);
  }
  return out;
}

}  // namespace trelab
