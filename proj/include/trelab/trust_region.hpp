#pragma once

// Construction of the trust region (the plausible-token subset) from logits.
// Both strategies break ties toward the lower index, so selection is a pure
// function of the logit values.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "trelab/dist.hpp"

namespace trelab {

/// Keep the K largest logits.
struct TopK {
  std::size_t k = 2;
};

/// Keep the smallest probability-sorted prefix whose mass reaches p.
struct Nucleus {
  double p = 0.99;
};

using TrustRegionStrategy = std::variant<TopK, Nucleus>;

/// Slack on the nucleus mass test. Without it 0.6 + 0.3 >= 0.9 is false in
/// binary floating point.
inline constexpr double kNucleusSlack = 1e-12;

struct TrustRegion {
  std::vector<std::size_t> indices;  // ascending
  TrustRegionStrategy strategy;

  std::size_t size() const { return indices.size(); }
  bool contains(std::size_t i) const { return std::binary_search(indices.begin(), indices.end(), i); }
};

namespace detail {

// Indices sorted by value descending, lower index first among equal values.
inline std::vector<std::size_t> descending_order(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

}  // namespace detail

inline void validate(const TrustRegionStrategy& s) {
  if (const auto* t = std::get_if<TopK>(&s)) {
    if (t->k == 0) throw DomainError("top-k trust region needs K >= 1");
  } else {
    const double p = std::get<Nucleus>(s).p;
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("nucleus trust region needs P in (0, 1]");
  }
}

inline TrustRegion select_top_k(std::span<const double> z, std::size_t k) {
  if (k == 0) throw DomainError("select_top_k: K must be >= 1");
  detail::require_finite(z, "select_top_k");
  auto order = detail::descending_order(z);
  order.resize(std::min(k, z.size()));
  std::sort(order.begin(), order.end());
  return {std::move(order), TopK{k}};
}

inline TrustRegion select_nucleus(std::span<const double> z, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw DomainError("select_nucleus: P must lie in (0, 1]");
  const auto probs = softmax(z);
  const auto order = detail::descending_order(probs);
  std::vector<std::size_t> picked;
  double cum = 0.0;
  for (std::size_t idx : order) {
    picked.push_back(idx);
    cum += probs[idx];
    if (cum + kNucleusSlack >= p) break;
  }
  std::sort(picked.begin(), picked.end());
  return {std::move(picked), Nucleus{p}};
}

inline TrustRegion select_region(std::span<const double> z, const TrustRegionStrategy& strategy) {
  return std::visit(
      [&](const auto& s) -> TrustRegion {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TopK>) {
          return select_top_k(z, s.k);
        } else {
          return select_nucleus(z, s.p);
        }
      },
      strategy);
}

}  // namespace trelab
