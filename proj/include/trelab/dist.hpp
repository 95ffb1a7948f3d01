#pragma once

// Probability primitives over logit vectors. Everything here is in nats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trelab {

/// Raised on contract violations (bad shapes, non-finite input, out-of-range
/// hyperparameters).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Logits = std::vector<double>;
using Probs = std::vector<double>;

inline constexpr double kNormTolerance = 1e-9;
inline constexpr double kLogFloor = 1e-300;

namespace detail {

inline void require_finite(std::span<const double> z, const char* what) {
  for (double v : z) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite logit");
  }
}

}  // namespace detail

/// log Σ exp(z), shifted by max(z).
inline double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DomainError("log_sum_exp: empty input");
  detail::require_finite(z, "log_sum_exp");
  const double shift = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - shift);
  return shift + std::log(s);
}

inline Probs softmax(std::span<const double> z) {
  if (z.size() < 2) throw DomainError("softmax: need at least two logits");
  detail::require_finite(z, "softmax");
  const double shift = *std::max_element(z.begin(), z.end());
  Probs p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - shift);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

/// z_i - logsumexp(z). More accurate than log(softmax(z)) in the tail.
inline std::vector<double> log_softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

/// Throws unless p is a distribution: non-negative, sums to 1 within 1e-9.
inline void check_probs(std::span<const double> p) {
  if (p.empty()) throw DomainError("probability vector is empty");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("probability entry is negative or non-finite");
    s += v;
  }
  if (std::abs(s - 1.0) > kNormTolerance) throw DomainError("probabilities do not sum to 1");
}

/// Shannon entropy with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  check_probs(p);
  double h = 0.0;
  for (double v : p) {
    if (v < kLogFloor) continue;
    h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

/// Entropy of softmax(z) computed from log-probabilities.
inline double entropy_from_logits(std::span<const double> z) {
  const auto lp = log_softmax(z);
  double h = 0.0;
  for (double l : lp) h -= std::exp(l) * l;
  return std::max(h, 0.0);
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Rényi entropy of order infinity: -log max p.
inline double min_entropy(std::span<const double> p) {
  check_probs(p);
  const double top = p[argmax(p)];
  return -std::log(std::max(top, kLogFloor));
}

/// Batch mean of the top-1 probability.
inline double peak_probability(std::span<const Probs> batch) {
  if (batch.empty()) throw DomainError("peak_probability: empty batch");
  double s = 0.0;
  for (const auto& p : batch) {
    check_probs(p);
    s += p[argmax(p)];
  }
  return s / static_cast<double>(batch.size());
}

/// Exact KL(softmax(old) || softmax(new)) over the full support.
inline double categorical_kl(std::span<const double> old_logits, std::span<const double> new_logits) {
  if (old_logits.size() != new_logits.size()) throw DomainError("categorical_kl: length mismatch");
  const auto lp_old = log_softmax(old_logits);
  const auto lp_new = log_softmax(new_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp_old.size(); ++i) {
    const double p = std::exp(lp_old[i]);
    if (p < kLogFloor) continue;
    kl += p * (lp_old[i] - lp_new[i]);
  }
  return std::max(kl, 0.0);
}

}  // namespace trelab
