#pragma once

// Batch-level step selection baselines. Both rank every step of the training
// batch (all episodes pooled) and keep ceil(fraction * n) of them, ties going
// to the lower step index.
//
//   forking tokens: surrogate loss only at the highest-entropy steps
//   KL-Cov:         surrogate + beta * KL(old || new) at the steps with the
//                   largest centered product (A - mean A)(log pi - mean log pi)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/trust_region.hpp"

namespace trelab {

enum class SelectorKind { None, ForkingTokens, KlCov };

struct SelectorSpec {
  SelectorKind kind = SelectorKind::None;
  double fraction = 0.2;
  double kl_coeff = 1.0;

  void validate() const {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("selector fraction must lie in (0, 1]");
    if (!(kl_coeff >= 0.0) || !std::isfinite(kl_coeff)) throw DomainError("selector kl_coeff must be finite and >= 0");
  }
};

inline const char* to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::None: return "none";
    case SelectorKind::ForkingTokens: return "forking";
    case SelectorKind::KlCov: return "kl_cov";
  }
  return "none";
}

inline std::optional<SelectorKind> selector_kind_from_string(const std::string& s) {
  if (s == "none") return SelectorKind::None;
  if (s == "forking") return SelectorKind::ForkingTokens;
  if (s == "kl_cov") return SelectorKind::KlCov;
  return std::nullopt;
}

/// Per-step statistics of one pooled training batch.
struct StepStats {
  std::vector<double> entropies;
  std::vector<double> advantages;
  std::vector<double> logprobs;
  std::vector<Logits> old_logits;

  std::size_t size() const { return entropies.size(); }
};

inline std::size_t keep_count(std::size_t n, double fraction) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

/// True at the ceil(fraction * n) largest scores.
inline std::vector<bool> top_fraction_mask(std::span<const double> scores, double fraction) {
  if (scores.empty()) throw DomainError("top_fraction_mask: empty list");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("top_fraction_mask: fraction must lie in (0, 1]");
  const auto order = detail::descending_order(scores);
  std::vector<bool> mask(scores.size(), false);
  const std::size_t keep = keep_count(scores.size(), fraction);
  for (std::size_t j = 0; j < keep; ++j) mask[order[j]] = true;
  return mask;
}

inline std::vector<bool> forking_mask(std::span<const double> entropies, double fraction) {
  return top_fraction_mask(entropies, fraction);
}

/// Centered products whose batch mean is the population covariance.
inline std::vector<double> kl_cov_scores(std::span<const double> advantages, std::span<const double> logprobs) {
  if (advantages.size() != logprobs.size()) throw DomainError("kl_cov_scores: length mismatch");
  if (advantages.size() < 2) throw DomainError("kl_cov_scores: need at least two steps");
  const double n = static_cast<double>(advantages.size());
  const double mean_a = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  const double mean_l = std::accumulate(logprobs.begin(), logprobs.end(), 0.0) / n;
  std::vector<double> out(advantages.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = (advantages[t] - mean_a) * (logprobs[t] - mean_l);
  return out;
}

inline double kl_penalty_term(std::span<const double> old_logits, std::span<const double> new_logits) {
  return categorical_kl(old_logits, new_logits);
}

/// Per-step loss weights derived from a selector: the surrogate is multiplied
/// by surrogate_weight[t] and beta * KL(old || new) is added with weight
/// kl_weight[t].
struct SelectorWeights {
  std::vector<double> surrogate_weight;
  std::vector<double> kl_weight;
};

inline SelectorWeights selector_weights(const SelectorSpec& spec, const StepStats& stats) {
  spec.validate();
  const std::size_t n = stats.size();
  if (stats.advantages.size() != n || stats.logprobs.size() != n) {
    throw DomainError("selector: step statistics have inconsistent lengths");
  }
  SelectorWeights w{std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
  if (n == 0) return w;
  switch (spec.kind) {
    case SelectorKind::None:
      break;
    case SelectorKind::ForkingTokens: {
      const auto mask = forking_mask(stats.entropies, spec.fraction);
      for (std::size_t t = 0; t < n; ++t) w.surrogate_weight[t] = mask[t] ? 1.0 : 0.0;
      break;
    }
    case SelectorKind::KlCov: {
      if (n < 2) {
        w.kl_weight[0] = spec.kl_coeff;
        break;
      }
      const auto mask = top_fraction_mask(kl_cov_scores(stats.advantages, stats.logprobs), spec.fraction);
      for (std::size_t t = 0; t < n; ++t) w.kl_weight[t] = mask[t] ? spec.kl_coeff : 0.0;
      break;
    }
  }
  return w;
}

/// Per-step totals for a selector, given surrogate losses and the KL of each
/// step's current policy from its rollout policy.
inline std::vector<double> apply_selector(const SelectorSpec& spec, const StepStats& stats,
                                          std::span<const double> surrogate_losses,
                                          std::span<const double> kl_terms) {
  if (surrogate_losses.size() != stats.size() || kl_terms.size() != stats.size()) {
    throw DomainError("apply_selector: loss count does not match step statistics");
  }
  const auto w = selector_weights(spec, stats);
  std::vector<double> out(surrogate_losses.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = w.surrogate_weight[t] * surrogate_losses[t];
    if (w.kl_weight[t] != 0.0) out[t] += w.kl_weight[t] * kl_terms[t];
  }
  return out;
}

/// Overload that computes KL from old_logits and the supplied current logits.
inline std::vector<double> apply_selector(const SelectorSpec& spec, const StepStats& stats,
                                          std::span<const double> surrogate_losses,
                                          std::span<const Logits> new_logits) {
  if (stats.old_logits.size() != stats.size() || new_logits.size() != stats.size()) {
    throw DomainError("apply_selector: logits count does not match step statistics");
  }
  std::vector<double> kl(stats.size(), 0.0);
  if (spec.kind == SelectorKind::KlCov) {
    for (std::size_t t = 0; t < kl.size(); ++t) kl[t] = kl_penalty_term(stats.old_logits[t], new_logits[t]);
  }
  return apply_selector(spec, stats, surrogate_losses, kl);
}

}  // namespace trelab
