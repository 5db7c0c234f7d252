#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace daam {

/// xoshiro256** (Blackman & Vigna, 2018) with its state filled from a
/// SplitMix64 sequence keyed by (seed, stream_id). All derived draws
/// (uniform, normal, bounded integers, shuffles) are implemented here rather
/// than through <random> distributions, whose outputs vary between standard
/// library implementations.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

/// Reproducible stream for (seed, stream_id).
inline Rng seeded_stream(std::uint64_t seed, std::uint64_t stream_id) { return Rng(seed, stream_id); }

/// Derives a stream id from a tuple of small integers (epoch, sample, ...).
std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts);

struct FiniteDiffConfig {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
};

/// Central-difference gradient of f at theta. Throws NumericalError naming the
/// coordinate if f is non-finite at a probe point.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, const FiniteDiffConfig& cfg = {});

/// max|a - b| / max(max|a|, max|b|, abs_tol).
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double abs_tol);

inline double softplus(double x) { return x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace daam
