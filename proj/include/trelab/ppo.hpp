#pragma once

// PPO on a tabular softmax policy: GAE, the clipped surrogate, per-step loss
// assembly with the auxiliary regularizers and selectors, and the training
// loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/envs.hpp"
#include "trelab/metrics.hpp"
#include "trelab/policy.hpp"
#include "trelab/random.hpp"
#include "trelab/regularizers.hpp"
#include "trelab/selectors.hpp"

namespace trelab {

struct PPOConfig {
  double clip_range = 0.2;
  double gae_gamma = 1.0;
  double gae_lambda = 1.0;
  double actor_lr = 1e-2;
  double critic_lr = 1e-1;
  std::size_t rollouts_per_iter = 8;
  std::size_t minibatch_size = 64;
  std::size_t epochs_per_iter = 1;
  double kl_coef_base = 0.0;

  void validate() const {
    if (!(clip_range > 0.0)) throw DomainError("ppo: clip_range must be > 0");
    if (!(gae_gamma >= 0.0 && gae_gamma <= 1.0)) throw DomainError("ppo: gae_gamma must lie in [0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw DomainError("ppo: gae_lambda must lie in [0, 1]");
    if (!(actor_lr > 0.0)) throw DomainError("ppo: actor_lr must be > 0");
    if (!(critic_lr > 0.0)) throw DomainError("ppo: critic_lr must be > 0");
    if (rollouts_per_iter == 0) throw DomainError("ppo: rollouts_per_iter must be >= 1");
    if (minibatch_size == 0) throw DomainError("ppo: minibatch_size must be >= 1");
    if (epochs_per_iter == 0) throw DomainError("ppo: epochs_per_iter must be >= 1");
    if (!(kl_coef_base >= 0.0)) throw DomainError("ppo: kl_coef_base must be >= 0");
  }
};

struct GaeResult {
  std::vector<double> returns;
  std::vector<double> advantages;
};

/// delta_t = r_t + gamma V_{t+1} - V_t with V_T = 0;
/// A_t = delta_t + gamma lambda A_{t+1}; returns = A + V.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                             double lambda) {
  if (rewards.size() != values.size()) throw DomainError("compute_gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
  }
  return out;
}

/// -min(r A, clip(r, 1 - c, 1 + c) A) with r = exp(new - old).
inline double ppo_clip_loss(double new_logprob, double old_logprob, double advantage, double clip_range) {
  const double r = std::exp(new_logprob - old_logprob);
  const double clipped = std::clamp(r, 1.0 - clip_range, 1.0 + clip_range);
  return -std::min(r * advantage, clipped * advantage);
}

/// d(ppo_clip_loss)/d(new_logprob): zero where the clipped branch is active.
inline double ppo_clip_loss_dlogprob(double new_logprob, double old_logprob, double advantage, double clip_range) {
  const double r = std::exp(new_logprob - old_logprob);
  const double clipped = std::clamp(r, 1.0 - clip_range, 1.0 + clip_range);
  if (r * advantage <= clipped * advantage) return -advantage * r;
  return 0.0;
}

/// Everything the per-step loss needs besides the current logits.
struct StepLossInput {
  std::size_t action = 0;
  double old_logprob = 0.0;
  double advantage = 0.0;
  std::span<const double> old_logits;
  double surrogate_weight = 1.0;  // forking-token mask
  double kl_weight = 0.0;         // KL-Cov beta at selected steps
};

struct StepLoss {
  double value = 0.0;
  double surrogate = 0.0;    // unweighted clipped surrogate
  double regularizer = 0.0;  // alpha * L_reg
  double kl = 0.0;           // KL(old || new)
  std::vector<double> grad;  // d value / d logits
};

/// L_t = w_t L_surr + (kl_weight + kl_coef_base) KL(old || new) + alpha L_reg,
/// with its gradient through the softmax. With kAuxiliary = false the
/// regularizer and selector terms are compiled out.
template <bool kAuxiliary = true>
StepLoss total_step_loss(std::span<const double> z, const StepLossInput& in, const PPOConfig& ppo,
                         const RegularizerSpec& reg) {
  const auto lp = log_softmax(z);
  const std::size_t n = z.size();
  StepLoss out;
  out.grad.assign(n, 0.0);

  const double new_lp = lp[in.action];
  out.surrogate = ppo_clip_loss(new_lp, in.old_logprob, in.advantage, ppo.clip_range);
  double surr_weight = 1.0;
  if constexpr (kAuxiliary) surr_weight = in.surrogate_weight;
  if (surr_weight != 0.0) {
    out.value += surr_weight * out.surrogate;
    const double g = surr_weight * ppo_clip_loss_dlogprob(new_lp, in.old_logprob, in.advantage, ppo.clip_range);
    // d log p_a / d z_i = 1[i = a] - p_i
    for (std::size_t i = 0; i < n; ++i) out.grad[i] -= g * std::exp(lp[i]);
    out.grad[in.action] += g;
  }

  double kl_coef = ppo.kl_coef_base;
  if constexpr (kAuxiliary) kl_coef += in.kl_weight;
  if (kl_coef != 0.0) {
    const auto lp_old = log_softmax(in.old_logits);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p_old = std::exp(lp_old[i]);
      if (p_old >= kLogFloor) kl += p_old * (lp_old[i] - lp[i]);
      // d KL(old || new) / d z_i = p_new_i - p_old_i
      out.grad[i] += kl_coef * (std::exp(lp[i]) - p_old);
    }
    out.kl = std::max(kl, 0.0);
    out.value += kl_coef * out.kl;
  }

  if constexpr (kAuxiliary) {
    if (reg.kind != RegularizerKind::None && reg.alpha != 0.0) {
      const auto r = regularizer_loss(z, reg);
      out.regularizer = reg.alpha * r.value;
      out.value += out.regularizer;
      for (std::size_t i = 0; i < n; ++i) out.grad[i] += reg.alpha * r.grad[i];
    }
  }
  return out;
}

/// Adam with bias correction, applied densely to a parameter vector.
class Adam {
 public:
  explicit Adam(double lr, std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  bool aborted = false;
  std::string diagnostic;
};

namespace detail {

inline bool all_finite(const MetricsRecord& m) {
  for (double v : {m.mean_reward, m.pass_rate, m.mean_entropy, m.peak_prob, m.loss_surr, m.loss_reg,
                   m.on_manifold_rate}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace detail

/// Fills return and advantage of every step, one episode at a time.
inline void assign_advantages(std::vector<Trajectory>& batch, const PPOConfig& ppo) {
  for (auto& traj : batch) {
    std::vector<double> rewards, values;
    for (const auto& st : traj.steps) {
      rewards.push_back(st.reward);
      values.push_back(st.value);
    }
    const auto gae = compute_gae(rewards, values, ppo.gae_gamma, ppo.gae_lambda);
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
      traj.steps[i].ret = gae.returns[i];
      traj.steps[i].advantage = gae.advantages[i];
    }
  }
}

/// Selector statistics of a pooled batch, computed from the rollout policy.
inline StepStats step_stats(std::span<const StepRecord* const> steps) {
  StepStats s;
  for (const auto* st : steps) {
    s.entropies.push_back(entropy_from_logits(st->old_logits));
    s.advantages.push_back(st->advantage);
    s.logprobs.push_back(st->old_logprob);
    s.old_logits.push_back(st->old_logits);
  }
  return s;
}

/// Runs `iterations` rounds of rollout -> GAE -> minibatched PPO updates,
/// mutating `policy` in place. Metrics of iteration k describe the batch
/// sampled at the start of that iteration; loss fields are token means over
/// every step evaluated during its updates.
template <bool kAuxiliary = true>
TrainResult train(TabularPolicy& policy, const Environment& env, const PPOConfig& ppo, const RegularizerSpec& reg,
                  const SelectorSpec& selector, std::size_t iterations, std::uint64_t seed) {
  ppo.validate();
  reg.validate();
  selector.validate();
  if (policy.num_states() != env.num_states() || policy.vocab_size() != env.vocab_size()) {
    throw DomainError("train: policy table does not match the environment");
  }

  TrainResult result;
  Adam actor(ppo.actor_lr, policy.theta().size());
  Adam critic(ppo.critic_lr, policy.values().size());
  std::vector<double> grad_theta(policy.theta().size());
  std::vector<double> grad_value(policy.values().size());
  const std::size_t vocab = env.vocab_size();

  for (std::size_t it = 0; it < iterations; ++it) {
    if (!policy.finite()) {
      result.aborted = true;
      result.diagnostic = "non-finite parameters before iteration " + std::to_string(it);
      break;
    }
    auto batch = rollout(policy, env, ppo.rollouts_per_iter, derive_seed({seed, it, 0x9011ULL}));
    MetricsRecord rec = batch_metrics(batch, policy);
    rec.iteration = it;
    assign_advantages(batch, ppo);

    std::vector<const StepRecord*> steps;
    for (const auto& traj : batch)
      for (const auto& st : traj.steps) steps.push_back(&st);
    const std::size_t n = steps.size();

    SelectorWeights weights{std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
    if constexpr (kAuxiliary) {
      if (selector.kind != SelectorKind::None) weights = selector_weights(selector, step_stats(steps));
    }

    double surr_sum = 0.0;
    double reg_sum = 0.0;
    std::size_t evaluated = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < ppo.epochs_per_iter; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(derive_seed({seed, it, epoch, 0x5f0ffULL}));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

      for (std::size_t start = 0; start < n; start += ppo.minibatch_size) {
        const std::size_t stop = std::min(n, start + ppo.minibatch_size);
        const double inv = 1.0 / static_cast<double>(stop - start);
        std::fill(grad_theta.begin(), grad_theta.end(), 0.0);
        std::fill(grad_value.begin(), grad_value.end(), 0.0);
        for (std::size_t j = start; j < stop; ++j) {
          const std::size_t t = order[j];
          const StepRecord& st = *steps[t];
          const StepLossInput in{st.action, st.old_logprob, st.advantage, st.old_logits,
                                 weights.surrogate_weight[t], weights.kl_weight[t]};
          const auto loss = total_step_loss<kAuxiliary>(policy.row(st.state_index), in, ppo, reg);
          surr_sum += loss.surrogate;
          reg_sum += loss.regularizer;
          ++evaluated;
          double* g = grad_theta.data() + st.state_index * vocab;
          for (std::size_t a = 0; a < vocab; ++a) g[a] += inv * loss.grad[a];
          grad_value[st.state_index] += inv * 2.0 * (policy.values()[st.state_index] - st.ret);
        }
        actor.step(policy.theta(), grad_theta);
        critic.step(policy.values(), grad_value);
      }
    }
    if (evaluated > 0) {
      rec.loss_surr = surr_sum / static_cast<double>(evaluated);
      rec.loss_reg = reg_sum / static_cast<double>(evaluated);
    }
    result.records.push_back(rec);
    if (!detail::all_finite(rec) || !policy.finite()) {
      result.aborted = true;
      result.diagnostic = "non-finite loss or parameters at iteration " + std::to_string(it);
      break;
    }
  }
  return result;
}

}  // namespace trelab
