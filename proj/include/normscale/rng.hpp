#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

namespace normscale {

// splitmix64: tiny, fast, and good enough statistics for simulation work.
// Chosen over std::mt19937_64 so that streams are cheap to fork and the
// bit stream is identical across platforms and standard libraries.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent stream seed from a master seed and a stream index.
/// Used to give every grid cell / replicate its own generator so results do
/// not depend on evaluation order.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  std::uint64_t z = splitmix64_next(s);
  z ^= splitmix64_next(s);
  return z;
}

/// Deterministic pseudo-random generator with uniform and gaussian draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller, one cached draw.
  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    constexpr double two_pi = 6.283185307179586;
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = two_pi * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

inline Eigen::VectorXd gaussian_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.gaussian();
  return v;
}

inline Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows,
                                       Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  // row-major fill order; part of the deterministic contract
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.gaussian();
  return m;
}

}  // namespace normscale
