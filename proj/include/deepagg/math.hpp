#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace deepagg {

inline constexpr double kInvSqrtPi = 0.56418958354775628695;

double std_normal_pdf(double z);
double std_normal_cdf(double z);

// Inverse of the standard normal CDF (Wichura's PPND16 rational
// approximation, accurate to ~1e-15). Throws std::domain_error for p
// outside (0, 1).
double std_normal_quantile(double p);

double softplus(double x);
double softplus_inv(double y);
double sigmoid(double x);

// Pinball (quantile) loss rho_tau(u) with u = y - q.
inline double pinball_loss(double u, double tau) {
  return u >= 0.0 ? tau * u : (tau - 1.0) * u;
}

// SplitMix64 step; used to derive independent seeds for sub-streams.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t s1, std::uint64_t s2);
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t s1, std::uint64_t s2,
                       std::uint64_t s3);

// Deterministic random stream. Uniform bits come from mt19937_64 (bit-exact
// across platforms); normals are drawn by inversion so every draw is a pure
// function of the uniform stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1); safe as input to inverse-CDF sampling.
  double uniform_open() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return std_normal_quantile(uniform_open()); }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Adaptive Simpson quadrature with absolute tolerance `tol`.
double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol);

// Runs fn(begin, end) over chunks of [0, n) on up to `threads` workers
// (threads <= 1 or n small degenerates to a direct call). Chunk boundaries
// are deterministic but execution order is not; fn must write to disjoint
// state per index.
void parallel_for_chunks(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t)>& fn);

int hardware_threads();

}  // namespace deepagg
