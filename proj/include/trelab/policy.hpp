#pragma once

// Tabular softmax policy with a value table, and episode rollout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/envs.hpp"
#include "trelab/random.hpp"

namespace trelab {

/// One row of logits and one value per non-terminal state, stored row-major.
class TabularPolicy {
 public:
  TabularPolicy(std::size_t num_states, std::size_t vocab_size)
      : vocab_(vocab_size), theta_(num_states * vocab_size, 0.0), value_(num_states, 0.0) {}

  static TabularPolicy initial(const Environment& env) {
    TabularPolicy p(env.num_states(), env.vocab_size());
    for (std::size_t s = 0; s < env.num_states(); ++s) {
      const auto z = env.initial_logits(env.state_at(s));
      std::copy(z.begin(), z.end(), p.row(s).begin());
    }
    return p;
  }

  std::size_t num_states() const { return value_.size(); }
  std::size_t vocab_size() const { return vocab_; }

  std::span<double> row(std::size_t s) { return {theta_.data() + s * vocab_, vocab_}; }
  std::span<const double> row(std::size_t s) const { return {theta_.data() + s * vocab_, vocab_}; }

  std::vector<double>& theta() { return theta_; }
  const std::vector<double>& theta() const { return theta_; }
  std::vector<double>& values() { return value_; }
  const std::vector<double>& values() const { return value_; }

  bool finite() const {
    for (double v : theta_) if (!std::isfinite(v)) return false;
    for (double v : value_) if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

 private:
  std::size_t vocab_;
  std::vector<double> theta_;
  std::vector<double> value_;
};

struct StepRecord {
  StateId state;
  std::size_t state_index = 0;
  bool on_manifold = true;
  std::size_t action = 0;
  double old_logprob = 0.0;
  Logits old_logits;
  double reward = 0.0;
  double value = 0.0;
  double ret = 0.0;
  double advantage = 0.0;
};

struct Trajectory {
  std::vector<StepRecord> steps;
  EpisodeResult result;
};

/// Inverse-CDF draw from log-probabilities.
inline std::size_t sample_categorical(std::span<const double> logprobs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    const double p = std::exp(logprobs[i]);
    if (p > 0.0) last_positive = i;
    cum += p;
    if (u < cum) return i;
  }
  return last_positive;
}

/// Plays one episode from the initial state with the given RNG stream.
inline Trajectory play_episode(const TabularPolicy& policy, const Environment& env, Rng& rng) {
  Trajectory traj;
  traj.steps.reserve(env.horizon());
  StateId s = env.initial_state();
  std::vector<std::size_t> actions;
  actions.reserve(env.horizon());
  for (;;) {
    StepRecord rec;
    rec.state = s;
    rec.state_index = env.state_index(s);
    rec.on_manifold = env.on_manifold(s);
    const auto z = policy.row(rec.state_index);
    rec.old_logits.assign(z.begin(), z.end());
    const auto lp = log_softmax(z);
    rec.action = sample_categorical(lp, rng);
    rec.old_logprob = lp[rec.action];
    rec.value = policy.values()[rec.state_index];
    actions.push_back(rec.action);
    const auto res = env.step(s, rec.action);
    traj.steps.push_back(std::move(rec));
    s = res.next;
    if (res.done) break;
  }
  traj.result = env.replay(actions);
  traj.steps.back().reward = traj.result.reward;
  return traj;
}

/// Samples `count` episodes; episode i uses its own stream derived from
/// (seed, i), so the batch is independent of execution order.
inline std::vector<Trajectory> rollout(const TabularPolicy& policy, const Environment& env, std::size_t count,
                                       std::uint64_t seed) {
  std::vector<Trajectory> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed({seed, i}));
    out.push_back(play_episode(policy, env, rng));
  }
  return out;
}

/// A policy that puts mass 1 - epsilon uniformly on each state's valid set and
/// epsilon uniformly on the remaining tokens. Off-manifold rows are uniform.
inline TabularPolicy make_leaky_policy(const Environment& env, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("make_leaky_policy: epsilon must lie in (0, 1)");
  TabularPolicy p(env.num_states(), env.vocab_size());
  for (std::size_t s = 0; s < env.num_states(); ++s) {
    const StateId id = env.state_at(s);
    auto row = p.row(s);
    if (!env.on_manifold(id)) continue;
    const auto valid = env.valid_set(id);
    const double n_valid = static_cast<double>(valid.size());
    const double n_invalid = static_cast<double>(env.vocab_size() - valid.size());
    for (double& v : row) v = std::log(epsilon / n_invalid);
    for (std::size_t a : valid) row[a] = std::log((1.0 - epsilon) / n_valid);
  }
  return p;
}

struct EvalSummary {
  double pass_rate = 0.0;
  double mean_reward = 0.0;
};

/// Pass@1 at temperature 1: fraction of sampled episodes earning the maximal reward.
inline EvalSummary evaluate(const TabularPolicy& policy, const Environment& env, std::size_t count,
                            std::uint64_t seed) {
  EvalSummary out;
  if (count == 0) return out;
  for (const auto& t : rollout(policy, env, count, seed)) {
    out.pass_rate += t.result.success ? 1.0 : 0.0;
    out.mean_reward += t.result.reward;
  }
  out.pass_rate /= static_cast<double>(count);
  out.mean_reward /= static_cast<double>(count);
  return out;
}

}  // namespace trelab
