#include "flowprior/rng.hpp"

namespace flowprior {

namespace {

// splitmix64 finalizer; spreads nearby seeds/keys over the state space.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

Rng Rng::derive(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key + 0x632be59bd9b4e019ULL))); }

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double Rng::normal() { return normal_(engine_); }

int Rng::uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(engine_);
  return t;
}

Tensor Rng::normal_tensor(const Shape& shape) {
  Tensor t(shape);
  for (double& v : t.data()) v = normal_(engine_);
  return t;
}

}  // namespace flowprior
