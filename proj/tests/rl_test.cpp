#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trelab/metrics.hpp"
#include "trelab/policy.hpp"
#include "trelab/ppo.hpp"

namespace trelab {
namespace {

using testing::Gen;
using testing::kCases;

EnvSpec chain(std::size_t t, double bias = 8.0) { return {SparseChainSpec{64, 4, t, bias}, 5}; }

bool same_batch(const std::vector<Trajectory>& a, const std::vector<Trajectory>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].result.actions != b[i].result.actions || a[i].result.reward != b[i].result.reward) return false;
    for (std::size_t t = 0; t < a[i].steps.size(); ++t) {
      if (a[i].steps[t].old_logprob != b[i].steps[t].old_logprob) return false;
    }
  }
  return true;
}

TEST(Rollout, GreedyPolicyIsDeterministic) {
  const Environment env(chain(8));
  TabularPolicy p(env.num_states(), env.vocab_size());
  for (std::size_t s = 0; s < env.num_states(); ++s) p.row(s)[s % 64] = 1e6;
  const auto batch = rollout(p, env, 20, 3);
  for (const auto& t : batch) EXPECT_EQ(t.result.actions, batch[0].result.actions);
}

TEST(Rollout, SameSeedSameBatch) {
  const Environment env(chain(16, 2.0));
  const auto p = TabularPolicy::initial(env);
  EXPECT_TRUE(same_batch(rollout(p, env, 30, 99), rollout(p, env, 30, 99)));
  EXPECT_FALSE(same_batch(rollout(p, env, 30, 99), rollout(p, env, 30, 100)));
}

TEST(Rollout, UniformPolicyAlmostNeverSucceeds) {
  // (4/64)^8 = 2^-32 per episode: expected successes in 1e4 episodes ~ 2.3e-6
  EXPECT_EQ(std::pow(4.0 / 64.0, 8), std::ldexp(1.0, -32));
  const Environment env(chain(8));
  const TabularPolicy uniform(env.num_states(), env.vocab_size());
  EXPECT_EQ(evaluate(uniform, env, 10000, 1).pass_rate, 0.0);
}

TEST(Rollout, RecordsAreConsistent) {
  const Environment env(EnvSpec{ExplorationTreeSpec{}, 3});
  const auto p = TabularPolicy::initial(env);
  for (const auto& traj : rollout(p, env, 50, 4)) {
    ASSERT_EQ(traj.steps.size(), env.horizon());
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const auto& st = traj.steps[t];
      EXPECT_EQ(st.action, traj.result.actions[t]);
      EXPECT_DOUBLE_EQ(st.old_logprob, log_softmax(st.old_logits)[st.action]);
      EXPECT_EQ(st.reward, t + 1 == traj.steps.size() ? traj.result.reward : 0.0);
    }
  }
}

TEST(Rollout, LeakyPolicyHasExactValidMass) {
  const Environment env(chain(8));
  const auto p = make_leaky_policy(env, 0.05);
  for (std::size_t t = 0; t < 8; ++t) {
    const auto probs = softmax(p.row(env.state_index({t, 1})));
    double mass = 0.0;
    for (auto a : env.valid_set({t, 1})) mass += probs[a];
    EXPECT_NEAR(mass, 0.95, 1e-14);
  }
  EXPECT_THROW(make_leaky_policy(env, 1.0), DomainError);
}

TEST(Gae, Examples) {
  const auto r = compute_gae(std::vector<double>{0, 0, 1}, std::vector<double>{0.2, 0.5, 0.9}, 1.0, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.returns[i], 1.0, 1e-15);
  EXPECT_NEAR(r.advantages[0], 0.8, 1e-15);
  EXPECT_NEAR(r.advantages[1], 0.5, 1e-15);
  EXPECT_NEAR(r.advantages[2], 0.1, 1e-15);
  const auto z = compute_gae(std::vector<double>(4, 0.0), std::vector<double>(4, 0.0), 1.0, 1.0);
  for (double a : z.advantages) EXPECT_EQ(a, 0.0);
  const std::vector<double> rew{0.3, -1, 2}, val{0.5, 0.25, -0.75};
  const auto one = compute_gae(rew, val, 0.0, 0.7);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(one.advantages[i], rew[i] - val[i]);
  EXPECT_THROW(compute_gae(rew, std::vector<double>{1}, 1, 1), DomainError);
}

TEST(Gae, PropertyUndiscountedAdvantageIsReturnMinusValue) {
  Gen g(50);
  for (std::size_t c = 0; c < kCases; ++c) {
    SCOPED_TRACE(testing::case_label(c));
    const std::size_t n = g.between(1, 40);
    const auto rew = g.reals(n, -1, 1);
    const auto val = g.reals(n, -2, 2);
    const auto r = compute_gae(rew, val, 1.0, 1.0);
    double to_go = 0.0;
    for (std::size_t i = n; i-- > 0;) {
      to_go += rew[i];
      EXPECT_NEAR(r.returns[i], to_go, 1e-12);
      EXPECT_NEAR(r.advantages[i], r.returns[i] - val[i], 1e-12);
    }
  }
}

TEST(ClipLoss, Examples) {
  EXPECT_DOUBLE_EQ(ppo_clip_loss(-1.3, -1.3, 0.7, 0.2), -0.7);
  EXPECT_NEAR(ppo_clip_loss(std::log(1.5), 0.0, 2.0, 0.2), -2.4, 1e-15);
  EXPECT_NEAR(ppo_clip_loss(std::log(0.5), 0.0, -1.0, 0.2), 0.8, 1e-15);
  // clipped branch active: no gradient
  EXPECT_EQ(ppo_clip_loss_dlogprob(std::log(1.5), 0.0, 2.0, 0.2), 0.0);
  EXPECT_EQ(ppo_clip_loss_dlogprob(std::log(0.5), 0.0, -1.0, 0.2), 0.0);
  EXPECT_DOUBLE_EQ(ppo_clip_loss_dlogprob(0.0, 0.0, 2.0, 0.2), -2.0);
}

TEST(ClipLoss, PropertyDerivativeMatchesFiniteDifference) {
  Gen g(51);
  for (std::size_t c = 0; c < kCases; ++c) {
    SCOPED_TRACE(testing::case_label(c));
    const double old = g.uniform(-4, 0);
    const double adv = g.uniform(-2, 2);
    const double lp = old + g.uniform(-0.5, 0.5);
    const double r = std::exp(lp - old);
    if (std::abs(r - 0.8) < 1e-3 || std::abs(r - 1.2) < 1e-3) continue;
    const double h = 1e-6;
    const double fd = (ppo_clip_loss(lp + h, old, adv, 0.2) - ppo_clip_loss(lp - h, old, adv, 0.2)) / (2 * h);
    EXPECT_NEAR(ppo_clip_loss_dlogprob(lp, old, adv, 0.2), fd, 1e-6);
  }
}

TEST(StepLoss, ReducesToSurrogate) {
  const std::vector<double> z{2, 1, 0, -1};
  const std::vector<double> old{1.5, 1, 0.2, -1};
  const StepLossInput in{0, log_softmax(old)[0], 0.6, old};
  const PPOConfig ppo;
  const auto plain = total_step_loss(z, in, ppo, RegularizerSpec{});
  EXPECT_DOUBLE_EQ(plain.value, ppo_clip_loss(log_softmax(z)[0], in.old_logprob, 0.6, 0.2));
  EXPECT_EQ(plain.regularizer, 0.0);
  const auto zero_alpha = total_step_loss(z, in, ppo, RegularizerSpec{RegularizerKind::TreK, 0.0});
  EXPECT_EQ(zero_alpha.value, plain.value);
  EXPECT_EQ(zero_alpha.grad, plain.grad);
  const auto tre = total_step_loss(z, in, ppo, RegularizerSpec{RegularizerKind::TreK, 0.001, 2});
  EXPECT_NEAR(tre.value - plain.value, 0.001 * -1.164406, 1e-9);
  EXPECT_DOUBLE_EQ(tre.regularizer, 0.001 * tre_loss(z, TopK{2}).value);
}

TEST(StepLoss, PropertyGradientMatchesFiniteDifference) {
  Gen g(52);
  const PPOConfig ppo;
  for (std::size_t c = 0; c < kCases; ++c) {
    SCOPED_TRACE(testing::case_label(c));
    const std::size_t n = g.between(2, 20);
    const auto old = g.logits(n, 2.0);
    auto z = old;
    for (double& v : z) v += g.uniform(-0.1, 0.1);
    const std::size_t a = g.index(n);
    RegularizerSpec reg{static_cast<RegularizerKind>(g.index(5)), g.uniform(0, 0.5), g.between(1, 5), g.uniform(0.3, 1.0)};
    if (selection_margin(z, reg) < 1e-3) continue;
    const StepLossInput in{a, log_softmax(old)[a], g.uniform(-1, 1), old, g.coin() ? 1.0 : 0.0, g.coin() ? 0.0 : 1.5};
    const double r = std::exp(log_softmax(z)[a] - in.old_logprob);
    if (std::abs(r - 0.8) < 1e-3 || std::abs(r - 1.2) < 1e-3) continue;
    const auto loss = total_step_loss(z, in, ppo, reg);
    const ScalarLoss f = [&](std::span<const double> x) { return total_step_loss(x, in, ppo, reg).value; };
    const auto fd = finite_diff_grad(f, z, 1e-6);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(loss.grad[i], fd[i], 1e-6);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam opt(0.1, 3);
  std::vector<double> x{1.0, -2.0, 0.5};
  opt.step(x, std::vector<double>{0.5, -3.0, 0.0});
  EXPECT_NEAR(x[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(x[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(x[2], 0.5);
}

TEST(PPOConfig, DefaultsFollowThePaper) {
  const PPOConfig d;
  EXPECT_EQ(d.clip_range, 0.2);
  EXPECT_EQ(d.gae_gamma, 1.0);
  EXPECT_EQ(d.gae_lambda, 1.0);
  EXPECT_EQ(d.rollouts_per_iter, 8u);
  EXPECT_EQ(d.minibatch_size, 64u);
  EXPECT_EQ(d.kl_coef_base, 0.0);
  EXPECT_THROW((PPOConfig{0.0}.validate()), DomainError);
  PPOConfig bad;
  bad.gae_lambda = 1.5;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(Train, ZeroIterationsLeavesPolicyUnchanged) {
  const Environment env(chain(8));
  auto p = TabularPolicy::initial(env);
  const auto before = p;
  const auto r = train(p, env, PPOConfig{}, RegularizerSpec{}, SelectorSpec{}, 0, 1);
  EXPECT_TRUE(r.records.empty());
  EXPECT_FALSE(r.aborted);
  EXPECT_TRUE(p == before);
}

TEST(Train, DeterministicPerSeed) {
  const Environment env(chain(16));
  const RegularizerSpec reg{RegularizerKind::TreP, 0.01};
  const SelectorSpec sel{SelectorKind::KlCov, 0.2, 1.0};
  auto a = TabularPolicy::initial(env), b = a, c = a;
  const auto ra = train(a, env, PPOConfig{}, reg, sel, 15, 42);
  const auto rb = train(b, env, PPOConfig{}, reg, sel, 15, 42);
  const auto rc = train(c, env, PPOConfig{}, reg, sel, 15, 43);
  EXPECT_EQ(ra.records, rb.records);
  EXPECT_TRUE(a == b);
  EXPECT_NE(ra.records, rc.records);
}

TEST(Train, VanillaMatchesAuxiliaryFreeBuild) {
  const Environment env(EnvSpec{ExplorationTreeSpec{}, 1});
  auto a = TabularPolicy::initial(env), b = a;
  const auto ra = train<true>(a, env, PPOConfig{}, RegularizerSpec{}, SelectorSpec{}, 20, 9);
  const auto rb = train<false>(b, env, PPOConfig{}, RegularizerSpec{}, SelectorSpec{}, 20, 9);
  EXPECT_EQ(ra.records, rb.records);
  EXPECT_TRUE(a == b);
}

TEST(Train, MetricsStayInRange) {
  const Environment env(chain(8));
  auto p = TabularPolicy::initial(env);
  const auto r = train(p, env, PPOConfig{}, RegularizerSpec{RegularizerKind::GlobalEntropy, 0.01},
                       SelectorSpec{SelectorKind::ForkingTokens, 0.2}, 30, 2);
  ASSERT_EQ(r.records.size(), 30u);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& m = r.records[i];
    EXPECT_EQ(m.iteration, i);
    EXPECT_GE(m.pass_rate, 0.0);
    EXPECT_LE(m.pass_rate, 1.0);
    EXPECT_GT(m.peak_prob, 0.0);
    EXPECT_LE(m.peak_prob, 1.0);
    EXPECT_LE(m.loss_reg, 0.0);
    EXPECT_GE(m.on_manifold_rate, 0.0);
    EXPECT_LE(m.on_manifold_rate, 1.0);
  }
}

TEST(Train, LearnsTheShortChain) {
  const Environment env(chain(8));
  auto p = TabularPolicy::initial(env);
  const double before = evaluate(p, env, 400, 7).pass_rate;
  train(p, env, PPOConfig{}, RegularizerSpec{}, SelectorSpec{}, 100, 3);
  EXPECT_GT(evaluate(p, env, 400, 7).pass_rate, before);
}

TEST(Train, NonFiniteParametersAbort) {
  const Environment env(chain(8));
  auto p = TabularPolicy::initial(env);
  p.theta()[3] = std::numeric_limits<double>::quiet_NaN();
  const auto r = train(p, env, PPOConfig{}, RegularizerSpec{}, SelectorSpec{}, 5, 1);
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_TRUE(r.records.empty());
}

TEST(BatchMetrics, Examples) {
  const Environment env(chain(4));
  TabularPolicy uniform(env.num_states(), env.vocab_size());
  const auto m = batch_metrics(rollout(uniform, env, 10, 1), uniform);
  EXPECT_NEAR(m.peak_prob, 1.0 / 64, 1e-15);
  EXPECT_NEAR(m.mean_entropy, std::log(64.0), 1e-12);

  TabularPolicy greedy(env.num_states(), env.vocab_size());
  for (std::size_t s = 0; s < env.num_states(); ++s) greedy.row(s)[0] = 800;
  const auto d = batch_metrics(rollout(greedy, env, 10, 1), greedy);
  EXPECT_NEAR(d.peak_prob, 1.0, 1e-15);
  EXPECT_NEAR(d.mean_entropy, 0.0, 1e-15);
  EXPECT_THROW(batch_metrics(std::vector<Trajectory>{}, greedy), DomainError);
}

}  // namespace
}  // namespace trelab
