#include "spde/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace spde::rng {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> philox_round(
    const std::array<std::uint32_t, 4>& c, const std::array<std::uint32_t, 2>& k) {
  const std::uint64_t p0 = std::uint64_t(kPhiloxM0) * c[0];
  const std::uint64_t p1 = std::uint64_t(kPhiloxM1) * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    counter = philox_round(counter, key);
  }
  return counter;
}

double uniform_open01(std::uint64_t bits) {
  // 52 significant bits, centered so both endpoints are unreachable even
  // after rounding: the result lies in [2^-53, 1 - 2^-53] exactly.
  return static_cast<double>(bits >> 12) * 0x1.0p-52 + 0x1.0p-53;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
  }
  static constexpr double a[8] = {
      3.3871328727963666080e0,  1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4,  4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4,  2.5090809287301226727e3};
  static constexpr double b[8] = {
      1.0,                      4.2313330701600911252e1, 6.8718700749205790830e2,
      5.3941960214247511077e3,  2.1213794301586595867e4, 3.9307895800092710610e4,
      2.8729085735721942674e4,  5.2264952788528545610e3};
  static constexpr double c[8] = {
      1.42343711074968357734e0,  4.63033784615654529590e0,
      5.76949722146069140550e0,  3.64784832476320460504e0,
      1.27045825245236838258e0,  2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr double d[8] = {
      1.0,                       2.05319162663775882187e0,
      1.67638483018380384940e0,  6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2,
      5.47593808499534494600e-4, 1.05075007164441684324e-9};
  static constexpr double e[8] = {
      6.65790464350110377720e0,  5.46378491116411436990e0,
      1.78482653991729133580e0,  2.96560571828504891230e-1,
      2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr double f[8] = {
      1.0,                       5.99832206555887937690e-1,
      1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5,
      1.42151175831644588870e-7, 2.04426310338993978564e-15};

  auto poly = [](const double (&coef)[8], double x) {
    double r = coef[7];
    for (int i = 6; i >= 0; --i) r = r * x + coef[i];
    return r;
  };

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(a, r) / poly(b, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    value = poly(c, r - 1.6) / poly(d, r - 1.6);
  } else {
    value = poly(e, r - 5.0) / poly(f, r - 5.0);
  }
  return q < 0.0 ? -value : value;
}

namespace {

inline double gaussian_from_block(const std::array<std::uint32_t, 4>& block) {
  const std::uint64_t bits =
      (std::uint64_t(block[0]) << 32) | std::uint64_t(block[1]);
  return normal_quantile(uniform_open01(bits));
}

}  // namespace

double gaussian_at(std::uint64_t master_seed, std::uint64_t path_id,
                   std::uint32_t mode, std::uint32_t step) {
  const std::array<std::uint32_t, 4> counter = {
      static_cast<std::uint32_t>(path_id),
      static_cast<std::uint32_t>(path_id >> 32), mode, step};
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(master_seed),
      static_cast<std::uint32_t>(master_seed >> 32)};
  return gaussian_from_block(philox4x32(counter, key));
}

std::uint64_t CounterStream::next_bits() {
  // mode word 0x8000... keeps these streams disjoint from lattice draws.
  const std::array<std::uint32_t, 4> counter = {
      static_cast<std::uint32_t>(tag_), static_cast<std::uint32_t>(tag_ >> 32),
      0x80000000u, index_++};
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed_),
      static_cast<std::uint32_t>(seed_ >> 32)};
  const auto block = philox4x32(counter, key);
  return (std::uint64_t(block[0]) << 32) | std::uint64_t(block[1]);
}

double CounterStream::next_gaussian() {
  return normal_quantile(uniform_open01(next_bits()));
}

double CounterStream::next_uniform() { return uniform_open01(next_bits()); }

}  // namespace spde::rng
