#pragma once

// Synthetic episodic MDPs with deterministic transitions and a terminal,
// sequence-level reward.
//
// SparseChain: at every step only m of the V tokens are valid. The policy sees
// (step, on_manifold) and must learn which tokens keep it on the manifold; one
// invalid token forfeits the reward for the whole sequence.
//
// ExplorationTree: a binary tree of depth D. Each internal node has a trap
// token and an optimal token; any other token drops into a dead branch. The
// all-trap path pays r_trap, the all-optimal path pays r_opt, every other leaf
// pays 0. The initial policy favours the trap path.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/random.hpp"

namespace trelab {

struct SparseChainSpec {
  std::size_t vocab_size = 64;
  std::size_t valid_per_step = 4;
  std::size_t horizon = 8;
  double init_bias = 2.0;
};

struct ExplorationTreeSpec {
  std::size_t vocab_size = 16;
  std::size_t depth = 6;
  double trap_reward = 0.5;
  double optimal_reward = 1.0;
  double trap_bias = 2.0;
};

struct EnvSpec {
  std::variant<SparseChainSpec, ExplorationTreeSpec> kind = SparseChainSpec{};
  std::uint64_t seed = 0;

  bool is_sparse_chain() const { return std::holds_alternative<SparseChainSpec>(kind); }

  void validate() const {
    if (const auto* c = std::get_if<SparseChainSpec>(&kind)) {
      if (c->vocab_size < 2) throw DomainError("sparse_chain: vocab_size must be >= 2");
      if (c->valid_per_step < 2 || c->valid_per_step >= c->vocab_size) {
        throw DomainError("sparse_chain: need 2 <= valid_per_step < vocab_size");
      }
      if (c->horizon < 1) throw DomainError("sparse_chain: horizon must be >= 1");
      if (c->horizon > 50000) throw DomainError("sparse_chain: horizon too large for a tabular policy");
      if (!(c->init_bias >= 0.0)) throw DomainError("sparse_chain: init_bias must be >= 0");
    } else {
      const auto& t = std::get<ExplorationTreeSpec>(kind);
      if (t.vocab_size < 3) throw DomainError("exploration_tree: vocab_size must be >= 3");
      if (t.depth < 1) throw DomainError("exploration_tree: depth must be >= 1");
      if (t.depth > 15) throw DomainError("exploration_tree: depth too large for a tabular policy");
      if (!(t.trap_reward > 0.0 && t.trap_reward < t.optimal_reward)) {
        throw DomainError("exploration_tree: need 0 < trap_reward < optimal_reward");
      }
      if (!(t.trap_bias >= 0.0)) throw DomainError("exploration_tree: trap_bias must be >= 0");
    }
  }
};

/// step_index in [0, horizon]; branch_tag is the on-manifold flag (chain) or
/// the node id within its depth, kDeadTag for the dead branch (tree).
struct StateId {
  std::size_t step_index = 0;
  std::int64_t branch_tag = 1;

  friend bool operator==(const StateId&, const StateId&) = default;
};

inline constexpr std::int64_t kDeadTag = -1;

struct StepResult {
  StateId next;
  bool done = false;
};

struct EpisodeResult {
  std::vector<std::size_t> actions;
  double reward = 0.0;
  std::size_t on_manifold_steps = 0;
  bool success = false;
};

class Environment {
 public:
  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (const auto* c = std::get_if<SparseChainSpec>(&spec_.kind)) {
      vocab_ = c->vocab_size;
      horizon_ = c->horizon;
      valid_.resize(horizon_);
      std::vector<std::size_t> pool(vocab_);
      for (std::size_t t = 0; t < horizon_; ++t) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        Rng rng(derive_seed({spec_.seed, 0x5c4a11ULL, t}));
        // partial Fisher-Yates
        for (std::size_t j = 0; j < c->valid_per_step; ++j) {
          const std::size_t pick = j + uniform_index(rng, vocab_ - j);
          std::swap(pool[j], pool[pick]);
        }
        valid_[t].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(c->valid_per_step));
        std::sort(valid_[t].begin(), valid_[t].end());
      }
      num_states_ = 2 * horizon_;
    } else {
      const auto& tree = std::get<ExplorationTreeSpec>(spec_.kind);
      vocab_ = tree.vocab_size;
      horizon_ = tree.depth;
      offsets_.resize(horizon_ + 1);
      std::size_t off = 0;
      for (std::size_t d = 0; d <= horizon_; ++d) {
        offsets_[d] = off;
        off += (std::size_t{1} << d) + 1;
      }
      num_states_ = offsets_[horizon_];
      // Trap and optimal tokens per live internal node, stored by state index.
      branch_tokens_.resize(num_states_);
      for (std::size_t d = 0; d < horizon_; ++d) {
        for (std::size_t node = 0; node < (std::size_t{1} << d); ++node) {
          Rng rng(derive_seed({spec_.seed, 0x7ee0ULL, d, node}));
          const std::size_t trap = uniform_index(rng, vocab_);
          std::size_t opt = uniform_index(rng, vocab_ - 1);
          if (opt >= trap) ++opt;
          branch_tokens_[offsets_[d] + node] = {trap, opt};
        }
      }
    }
  }

  const EnvSpec& spec() const { return spec_; }
  std::size_t vocab_size() const { return vocab_; }
  /// T for the chain, D for the tree.
  std::size_t horizon() const { return horizon_; }
  /// Number of non-terminal states, i.e. rows of a tabular policy.
  std::size_t num_states() const { return num_states_; }
  bool is_sparse_chain() const { return spec_.is_sparse_chain(); }

  StateId initial_state() const { return {0, is_sparse_chain() ? 1 : 0}; }

  void check_state(const StateId& s) const {
    if (s.step_index >= horizon_) throw DomainError("state is terminal or beyond the horizon");
    if (is_sparse_chain()) {
      if (s.branch_tag != 0 && s.branch_tag != 1) throw DomainError("sparse_chain: branch tag must be 0 or 1");
    } else if (s.branch_tag != kDeadTag &&
               (s.branch_tag < 0 || static_cast<std::size_t>(s.branch_tag) >= (std::size_t{1} << s.step_index))) {
      throw DomainError("exploration_tree: node id out of range for its depth");
    }
  }

  std::size_t state_index(const StateId& s) const {
    check_state(s);
    if (is_sparse_chain()) return 2 * s.step_index + static_cast<std::size_t>(s.branch_tag);
    const std::size_t width = std::size_t{1} << s.step_index;
    return offsets_[s.step_index] + (s.branch_tag == kDeadTag ? width : static_cast<std::size_t>(s.branch_tag));
  }

  bool on_manifold(const StateId& s) const {
    return is_sparse_chain() ? s.branch_tag == 1 : s.branch_tag != kDeadTag;
  }

  /// Meaningful tokens at s, ascending. The chain set depends on the step only;
  /// the dead tree branch has none.
  std::vector<std::size_t> valid_set(const StateId& s) const {
    check_state(s);
    if (is_sparse_chain()) return valid_[s.step_index];
    if (s.branch_tag == kDeadTag) return {};
    auto [trap, opt] = branch_tokens_[state_index(s)];
    return {std::min(trap, opt), std::max(trap, opt)};
  }

  /// Trap and optimal token at a live tree node.
  std::pair<std::size_t, std::size_t> branch_tokens(const StateId& s) const {
    if (is_sparse_chain() || s.branch_tag == kDeadTag) throw DomainError("branch_tokens: not a live tree node");
    return branch_tokens_[state_index(s)];
  }

  StepResult step(const StateId& s, std::size_t action) const {
    check_state(s);
    if (action >= vocab_) throw DomainError("action outside the vocabulary");
    StateId next{s.step_index + 1, s.branch_tag};
    if (is_sparse_chain()) {
      if (s.branch_tag == 1 && !std::binary_search(valid_[s.step_index].begin(), valid_[s.step_index].end(), action)) {
        next.branch_tag = 0;
      }
    } else if (s.branch_tag != kDeadTag) {
      auto [trap, opt] = branch_tokens_[state_index(s)];
      if (action == trap) {
        next.branch_tag = 2 * s.branch_tag;
      } else if (action == opt) {
        next.branch_tag = 2 * s.branch_tag + 1;
      } else {
        next.branch_tag = kDeadTag;
      }
    }
    return {next, next.step_index == horizon_};
  }

  /// Reward of a terminal state.
  double reward_at(const StateId& terminal) const {
    if (terminal.step_index != horizon_) throw DomainError("reward requested for a non-terminal state");
    if (is_sparse_chain()) return terminal.branch_tag == 1 ? 1.0 : 0.0;
    const auto& tree = std::get<ExplorationTreeSpec>(spec_.kind);
    if (terminal.branch_tag == 0) return tree.trap_reward;
    if (terminal.branch_tag == static_cast<std::int64_t>((std::size_t{1} << horizon_) - 1)) return tree.optimal_reward;
    return 0.0;
  }

  double max_reward() const {
    return is_sparse_chain() ? 1.0 : std::get<ExplorationTreeSpec>(spec_.kind).optimal_reward;
  }

  /// Replays a complete action sequence.
  EpisodeResult replay(std::span<const std::size_t> actions) const {
    if (actions.size() != horizon_) throw DomainError("episode is incomplete");
    EpisodeResult out;
    out.actions.assign(actions.begin(), actions.end());
    StateId s = initial_state();
    for (std::size_t a : actions) {
      if (on_manifold(s)) ++out.on_manifold_steps;
      s = step(s, a).next;
    }
    out.reward = reward_at(s);
    out.success = out.reward >= max_reward();
    return out;
  }

  double terminal_reward(std::span<const std::size_t> actions) const { return replay(actions).reward; }

  /// Logits of the "pre-trained" starting policy: +bias on valid tokens of the
  /// chain, +bias on the trap token of every live tree node, flat elsewhere.
  Logits initial_logits(const StateId& s) const {
    check_state(s);
    Logits z(vocab_, 0.0);
    if (is_sparse_chain()) {
      if (s.branch_tag == 1) {
        const double b = std::get<SparseChainSpec>(spec_.kind).init_bias;
        for (std::size_t a : valid_[s.step_index]) z[a] = b;
      }
    } else if (s.branch_tag != kDeadTag) {
      z[branch_tokens_[state_index(s)].first] = std::get<ExplorationTreeSpec>(spec_.kind).trap_bias;
    }
    return z;
  }

  /// Inverse of state_index.
  StateId state_at(std::size_t index) const {
    if (index >= num_states_) throw DomainError("state index out of range");
    if (is_sparse_chain()) return {index / 2, static_cast<std::int64_t>(index % 2)};
    std::size_t d = 0;
    while (d + 1 < offsets_.size() && offsets_[d + 1] <= index) ++d;
    const std::size_t local = index - offsets_[d];
    const std::size_t width = std::size_t{1} << d;
    return {d, local == width ? kDeadTag : static_cast<std::int64_t>(local)};
  }

 private:
  EnvSpec spec_;
  std::size_t vocab_ = 0;
  std::size_t horizon_ = 0;
  std::size_t num_states_ = 0;
  std::vector<std::vector<std::size_t>> valid_;
  std::vector<std::size_t> offsets_;
  std::vector<std::pair<std::size_t, std::size_t>> branch_tokens_;
};

/// (1 - epsilon)^T: probability that T independent steps all stay valid.
inline double survival_rate(double epsilon, std::size_t horizon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw DomainError("survival_rate: epsilon must lie in [0, 1)");
  if (horizon < 1) throw DomainError("survival_rate: horizon must be >= 1");
  return std::pow(1.0 - epsilon, static_cast<double>(horizon));
}

}  // namespace trelab
