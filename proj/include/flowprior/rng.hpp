#pragma once

#include <cstdint>
#include <random>

#include "flowprior/tensor.hpp"

namespace flowprior {

// Seedable generator shared by training, dequantization, degradation and
// sampling. `derive` gives an independent stream that depends only on the
// parent seed and a key, so step t of a run can be regenerated from
// (seed, t) without replaying steps 0..t-1.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  Rng derive(std::uint64_t key) const;

  double uniform();                    // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                     // N(0, 1)
  int uniform_int(int lo, int hi);     // inclusive bounds

  Tensor uniform_tensor(const Shape& shape, double lo, double hi);
  Tensor normal_tensor(const Shape& shape);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace flowprior
