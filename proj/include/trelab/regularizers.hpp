#pragma once

// Auxiliary entropy losses and their analytic gradients with respect to the
// logits. Every value here is a loss to be minimized, so entropy bonuses enter
// with a negative sign.

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/trust_region.hpp"

namespace trelab {

enum class RegularizerKind { None, GlobalEntropy, TreK, TreP, MinEnt };

struct RegularizerSpec {
  RegularizerKind kind = RegularizerKind::None;
  double alpha = 0.001;
  std::size_t k = 2;
  double p = 0.99;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("regularizer alpha must be finite and >= 0");
    if (k == 0) throw DomainError("regularizer K must be >= 1");
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("regularizer P must lie in (0, 1]");
  }
};

inline const char* to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::None: return "none";
    case RegularizerKind::GlobalEntropy: return "ent";
    case RegularizerKind::TreK: return "tre_k";
    case RegularizerKind::TreP: return "tre_p";
    case RegularizerKind::MinEnt: return "min_ent";
  }
  return "none";
}

inline std::optional<RegularizerKind> regularizer_kind_from_string(const std::string& s) {
  if (s == "none") return RegularizerKind::None;
  if (s == "ent") return RegularizerKind::GlobalEntropy;
  if (s == "tre_k") return RegularizerKind::TreK;
  if (s == "tre_p") return RegularizerKind::TreP;
  if (s == "min_ent") return RegularizerKind::MinEnt;
  return std::nullopt;
}

struct LossWithGrad {
  double value = 0.0;
  std::vector<double> grad;
};

/// -H(softmax(z)); d/dz_i = p_i (log p_i + H).
inline LossWithGrad ent_loss(std::span<const double> z) {
  const auto lp = log_softmax(z);
  double h = 0.0;
  for (double l : lp) h -= std::exp(l) * l;
  LossWithGrad out{-h, std::vector<double>(z.size())};
  for (std::size_t i = 0; i < z.size(); ++i) out.grad[i] = std::exp(lp[i]) * (lp[i] + h);
  return out;
}

/// Scaled negative entropy of the softmax restricted to the trust region.
///
/// The region is recomputed from z and then held fixed for differentiation:
/// coordinates outside it get an exact zero gradient. A single-token region
/// disables the loss. The factor log|A| / log|region| maps the local entropy
/// range onto the full-vocabulary range, so the value lies in [-log|A|, 0].
inline LossWithGrad tre_loss(std::span<const double> z, const TrustRegionStrategy& strategy) {
  validate(strategy);
  const auto region = select_region(z, strategy);
  LossWithGrad out{0.0, std::vector<double>(z.size(), 0.0)};
  const std::size_t n = region.size();
  if (n <= 1) return out;

  std::vector<double> sub(n);
  for (std::size_t j = 0; j < n; ++j) sub[j] = z[region.indices[j]];
  const auto lq = log_softmax(sub);
  double h = 0.0;
  for (double l : lq) h -= std::exp(l) * l;

  const double scale = std::log(static_cast<double>(z.size())) / std::log(static_cast<double>(n));
  out.value = -scale * h;
  for (std::size_t j = 0; j < n; ++j) {
    out.grad[region.indices[j]] = scale * std::exp(lq[j]) * (lq[j] + h);
  }
  return out;
}

/// -H_inf = log max_a softmax(z)_a. At exact ties the lowest-index argmax
/// defines the subgradient.
inline LossWithGrad min_ent_loss(std::span<const double> z) {
  const auto lp = log_softmax(z);
  const std::size_t m = argmax(z);
  LossWithGrad out{lp[m], std::vector<double>(z.size())};
  for (std::size_t i = 0; i < z.size(); ++i) out.grad[i] = (i == m ? 1.0 : 0.0) - std::exp(lp[i]);
  return out;
}

/// Unweighted regularizer loss for a spec (alpha is applied by the caller).
inline LossWithGrad regularizer_loss(std::span<const double> z, const RegularizerSpec& spec) {
  switch (spec.kind) {
    case RegularizerKind::None: return {0.0, std::vector<double>(z.size(), 0.0)};
    case RegularizerKind::GlobalEntropy: return ent_loss(z);
    case RegularizerKind::TreK: return tre_loss(z, TopK{spec.k});
    case RegularizerKind::TreP: return tre_loss(z, Nucleus{spec.p});
    case RegularizerKind::MinEnt: return min_ent_loss(z);
  }
  return {0.0, std::vector<double>(z.size(), 0.0)};
}

using ScalarLoss = std::function<double(std::span<const double>)>;

/// Central differences (f(z + h e_i) - f(z - h e_i)) / 2h.
inline std::vector<double> finite_diff_grad(const ScalarLoss& f, std::span<const double> z, double step) {
  if (!(step > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
  std::vector<double> x(z.begin(), z.end());
  std::vector<double> g(z.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Smallest logit gap at a selection boundary of the given loss. The loss is
/// piecewise smooth; finite differences are only meaningful when every
/// boundary is farther than the step.
inline double selection_margin(std::span<const double> z, const RegularizerSpec& spec) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const auto order = detail::descending_order(z);
  auto gap_after = [&](std::size_t count) {
    if (count == 0 || count >= z.size()) return kInf;
    return z[order[count - 1]] - z[order[count]];
  };
  switch (spec.kind) {
    case RegularizerKind::None:
    case RegularizerKind::GlobalEntropy:
      return kInf;
    case RegularizerKind::MinEnt:
      return gap_after(1);
    case RegularizerKind::TreK:
      return gap_after(std::min(spec.k, z.size()));
    case RegularizerKind::TreP: {
      const auto probs = softmax(z);
      const auto region = select_nucleus(z, spec.p);
      const std::size_t n = region.size();
      // Mass just before and at the cut, in sorted order.
      double before = 0.0;
      for (std::size_t j = 0; j + 1 < n; ++j) before += probs[order[j]];
      const double at = before + probs[order[n - 1]];
      double margin = gap_after(n);
      if (n > 1) margin = std::min(margin, spec.p - before);
      if (n < z.size()) margin = std::min(margin, at - spec.p);
      return margin;
    }
  }
  return kInf;
}

/// ||a - n||_inf / max(||a||_inf, ||n||_inf), with a floor so that two zero
/// vectors compare equal.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0;
  double scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

}  // namespace trelab
