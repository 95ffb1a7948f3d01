#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trelab/envs.hpp"

namespace trelab {
namespace {

using testing::Gen;

EnvSpec chain(std::size_t t, std::uint64_t seed = 0, std::size_t v = 64, std::size_t m = 4) {
  return {SparseChainSpec{v, m, t, 2.0}, seed};
}

EnvSpec tree(std::size_t d, std::uint64_t seed = 0) { return {ExplorationTreeSpec{16, d, 0.5, 1.0, 2.0}, seed}; }

std::size_t invalid_token(const Environment& env, const StateId& s) {
  const auto valid = env.valid_set(s);
  for (std::size_t a = 0;; ++a) {
    if (!std::binary_search(valid.begin(), valid.end(), a)) return a;
  }
}

TEST(EnvSpec, Validation) {
  EXPECT_THROW(Environment(chain(8, 0, 64, 1)), DomainError);
  EXPECT_THROW(Environment(chain(8, 0, 4, 4)), DomainError);
  EXPECT_THROW(Environment(chain(0)), DomainError);
  EXPECT_THROW(Environment(tree(0)), DomainError);
  EXPECT_THROW(Environment(EnvSpec{ExplorationTreeSpec{16, 4, 1.0, 0.5, 2.0}, 0}), DomainError);
  EXPECT_THROW(Environment(EnvSpec{ExplorationTreeSpec{16, 4, 0.0, 1.0, 2.0}, 0}), DomainError);
  EXPECT_THROW(Environment(EnvSpec{SparseChainSpec{64, 4, 8, -1.0}, 0}), DomainError);
}

TEST(SparseChain, ValidSetIsStableAndSized) {
  const Environment env(chain(32, 7));
  for (std::size_t t = 0; t < 32; ++t) {
    const StateId s{t, 1};
    const auto a = env.valid_set(s);
    EXPECT_EQ(a, env.valid_set(s));
    EXPECT_EQ(a.size(), 4u);
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 4u);
    EXPECT_LT(a.back(), 64u);
  }
  EXPECT_EQ(Environment(chain(32, 7)).valid_set({5, 1}), env.valid_set({5, 1}));
  EXPECT_THROW(env.valid_set({32, 1}), DomainError);
  EXPECT_THROW(env.valid_set({3, 2}), DomainError);
}

TEST(SparseChain, DifferentSeedsGiveDifferentSets) {
  // Two independent 4-of-64 subsets coincide with probability 1 / C(64,4);
  // across 32 steps a full match is essentially impossible.
  const double c64_4 = 64.0 * 63 * 62 * 61 / 24;
  EXPECT_LT(std::pow(1.0 / c64_4, 32), 1e-100);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Environment a(chain(32, seed)), b(chain(32, seed + 1000));
    bool differs = false;
    for (std::size_t t = 0; t < 32; ++t) differs = differs || a.valid_set({t, 1}) != b.valid_set({t, 1});
    EXPECT_TRUE(differs) << "seed " << seed;
  }
}

TEST(SparseChain, ValidTokensAreRoughlyUniform) {
  // 2000 step sets x 4 tokens over 64 tokens: 125 expected hits per token.
  std::vector<int> hits(64, 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Environment env(chain(100, seed));
    for (std::size_t t = 0; t < 100; ++t) {
      for (auto a : env.valid_set({t, 1})) ++hits[a];
    }
  }
  for (int h : hits) {
    EXPECT_GT(h, 125 - 5 * 11);
    EXPECT_LT(h, 125 + 5 * 11);
  }
}

TEST(SparseChain, TransitionsAndRewards) {
  const Environment env(chain(8, 3));
  StateId s = env.initial_state();
  EXPECT_TRUE(env.on_manifold(s));
  std::vector<std::size_t> good, bad;
  for (std::size_t t = 0; t < 8; ++t) {
    const auto r = env.step(s, env.valid_set(s)[t % 4]);
    EXPECT_TRUE(env.on_manifold(r.next));
    EXPECT_EQ(r.done, t == 7);
    good.push_back(env.valid_set(s)[t % 4]);
    s = r.next;
  }
  EXPECT_EQ(env.terminal_reward(good), 1.0);
  const auto ok = env.replay(good);
  EXPECT_TRUE(ok.success);
  EXPECT_EQ(ok.on_manifold_steps, 8u);

  bad = good;
  bad[2] = invalid_token(env, {2, 1});
  const auto fail = env.replay(bad);
  EXPECT_EQ(fail.reward, 0.0);
  EXPECT_FALSE(fail.success);
  EXPECT_EQ(fail.on_manifold_steps, 3u);

  // leaving the manifold is absorbing, even when valid tokens follow
  StateId off = env.step(env.initial_state(), invalid_token(env, env.initial_state())).next;
  EXPECT_FALSE(env.on_manifold(off));
  for (std::size_t t = 1; t < 8; ++t) {
    off = env.step(off, env.valid_set({t, 1})[0]).next;
    EXPECT_FALSE(env.on_manifold(off));
  }
  EXPECT_THROW(env.replay(std::vector<std::size_t>{0, 1}), DomainError);
  EXPECT_THROW(env.step(env.initial_state(), 64), DomainError);
}

TEST(ExplorationTree, RewardsAndBranches) {
  const Environment env(tree(6, 11));
  std::vector<std::size_t> trap_path, opt_path;
  StateId s = env.initial_state(), o = env.initial_state();
  for (std::size_t d = 0; d < 6; ++d) {
    const auto [trap, opt] = env.branch_tokens(s);
    EXPECT_NE(trap, opt);
    EXPECT_EQ(env.valid_set(s), (std::vector<std::size_t>{std::min(trap, opt), std::max(trap, opt)}));
    trap_path.push_back(trap);
    s = env.step(s, trap).next;
    const auto opt_tok = env.branch_tokens(o).second;
    opt_path.push_back(opt_tok);
    o = env.step(o, opt_tok).next;
  }
  EXPECT_EQ(env.terminal_reward(trap_path), 0.5);
  EXPECT_EQ(env.terminal_reward(opt_path), 1.0);
  EXPECT_TRUE(env.replay(opt_path).success);
  EXPECT_FALSE(env.replay(trap_path).success);
  auto mixed = opt_path;
  mixed[0] = trap_path[0];
  EXPECT_EQ(env.terminal_reward(mixed), 0.0);
}

TEST(ExplorationTree, EnumeratedRewardsOverAllBranchPaths) {
  // Walk all 2^D meaningful paths: exactly one earns r_trap and one r_opt.
  const Environment env(tree(5, 2));
  int traps = 0, opts = 0, zeros = 0;
  for (std::size_t mask = 0; mask < 32; ++mask) {
    StateId s = env.initial_state();
    std::vector<std::size_t> path;
    for (std::size_t d = 0; d < 5; ++d) {
      const auto [trap, opt] = env.branch_tokens(s);
      const std::size_t a = (mask >> d) & 1 ? opt : trap;
      path.push_back(a);
      s = env.step(s, a).next;
    }
    const double r = env.terminal_reward(path);
    traps += r == 0.5;
    opts += r == 1.0;
    zeros += r == 0.0;
  }
  EXPECT_EQ(traps, 1);
  EXPECT_EQ(opts, 1);
  EXPECT_EQ(zeros, 30);
}

TEST(Environment, PropertyStateIndexRoundTrip) {
  Gen g(40);
  for (std::size_t c = 0; c < 40; ++c) {
    SCOPED_TRACE(testing::case_label(c));
    const Environment env = g.coin() ? Environment(chain(g.between(1, 40), c)) : Environment(tree(g.between(1, 8), c));
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < env.num_states(); ++i) {
      const auto s = env.state_at(i);
      EXPECT_EQ(env.state_index(s), i);
      seen.insert(i);
      const auto z = env.initial_logits(s);
      ASSERT_EQ(z.size(), env.vocab_size());
    }
    EXPECT_EQ(seen.size(), env.num_states());
    EXPECT_THROW(env.state_at(env.num_states()), DomainError);
  }
}

TEST(Environment, PropertyRandomEpisodesStayInBounds) {
  Gen g(41);
  for (std::size_t c = 0; c < 100; ++c) {
    SCOPED_TRACE(testing::case_label(c));
    const Environment env = g.coin() ? Environment(chain(g.between(1, 30), c)) : Environment(tree(g.between(1, 8), c));
    std::vector<std::size_t> actions;
    StateId s = env.initial_state();
    bool done = false;
    std::size_t steps = 0;
    while (!done) {
      const auto valid = env.valid_set(s);
      const std::size_t a = !valid.empty() && g.coin(0.8) ? valid[g.index(valid.size())] : g.index(env.vocab_size());
      actions.push_back(a);
      const auto r = env.step(s, a);
      done = r.done;
      if (!done) { EXPECT_LT(env.state_index(r.next), env.num_states()); }
      s = r.next;
      ++steps;
    }
    EXPECT_EQ(steps, env.horizon());
    const auto res = env.replay(actions);
    EXPECT_LE(res.on_manifold_steps, env.horizon());
    const double r = res.reward;
    if (env.is_sparse_chain()) EXPECT_TRUE(r == 0.0 || r == 1.0);
    else EXPECT_TRUE(r == 0.0 || r == 0.5 || r == 1.0);
  }
}

TEST(InitialLogits, BiasOnValidOrTrapTokens) {
  const Environment c(EnvSpec{SparseChainSpec{64, 4, 8, 3.5}, 1});
  const auto z = c.initial_logits({2, 1});
  for (std::size_t a = 0; a < 64; ++a) {
    const auto v = c.valid_set({2, 1});
    EXPECT_EQ(z[a], std::binary_search(v.begin(), v.end(), a) ? 3.5 : 0.0);
  }
  for (double x : c.initial_logits({2, 0})) EXPECT_EQ(x, 0.0);

  const Environment t(tree(4, 1));
  const auto zt = t.initial_logits({1, 1});
  EXPECT_EQ(zt[t.branch_tokens({1, 1}).first], 2.0);
  EXPECT_EQ(std::count(zt.begin(), zt.end(), 0.0), 15);
}

TEST(Survival, Examples) {
  EXPECT_EQ(survival_rate(0.0, 77), 1.0);
  EXPECT_DOUBLE_EQ(survival_rate(0.5, 1), 0.5);
  const long double oracle = std::pow(0.99L, 512.0L);
  EXPECT_NEAR(survival_rate(0.01, 512), static_cast<double>(oracle), 1e-15);
  EXPECT_NEAR(survival_rate(0.01, 512), 0.00582, 5e-6);
  EXPECT_THROW(survival_rate(1.0, 3), DomainError);
  EXPECT_THROW(survival_rate(-0.1, 3), DomainError);
}

}  // namespace
}  // namespace trelab
