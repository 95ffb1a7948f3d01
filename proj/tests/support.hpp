#pragma once

// Hand-rolled generators for property tests. Each draws from a seeded
// mt19937_64 so failures reproduce from the printed case index.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "trelab/dist.hpp"
#include "trelab/random.hpp"

namespace trelab::testing {

inline constexpr std::size_t kCases = 200;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(derive_seed({seed, 0x7e57ULL})) {}

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(rng_); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_index(rng_, n)); }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }
  bool coin(double p = 0.5) { return uniform01(rng_) < p; }

  Logits logits(std::size_t n, double scale = 3.0) {
    Logits z(n);
    for (double& v : z) v = uniform(-scale, scale);
    return z;
  }

  // Mixes plain draws with duplicated values and one dominant entry, so ties
  // and near-deterministic rows come up regularly.
  Logits awkward_logits(std::size_t n) {
    Logits z = logits(n);
    if (coin(0.3)) {
      const double v = z[index(n)];
      for (double& x : z) {
        if (coin(0.4)) x = v;
      }
    }
    if (coin(0.2)) z[index(n)] += uniform(5.0, 40.0);
    return z;
  }

  std::vector<double> reals(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

// Independent long-double softmax used as a reference.
inline std::vector<long double> ref_softmax(const std::vector<double>& z) {
  long double m = z[0];
  for (double v : z) m = std::max<long double>(m, v);
  long double s = 0.0L;
  std::vector<long double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(static_cast<long double>(z[i]) - m);
  for (auto& x : p) x /= s;
  return p;
}

inline long double ref_entropy(const std::vector<long double>& p) {
  long double h = 0.0L;
  for (auto x : p) {
    if (x > 0.0L) h -= x * std::log(x);
  }
  return h;
}

inline std::string case_label(std::size_t i) { return "case " + std::to_string(i); }

}  // namespace trelab::testing
