#pragma once

#include "flowprior/autodiff.hpp"
#include "flowprior/rng.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Diagonal Gaussian with sigma = exp(log_std), so sigma > 0 by construction.
struct DiagGaussian {
  Tensor mean;
  Tensor log_std;

  DiagGaussian() = default;
  DiagGaussian(Tensor mean_, Tensor log_std_);
  static DiagGaussian standard(const Shape& shape);

  double log_prob(const Tensor& x) const;
  Tensor sample(Rng& rng) const;
  const Tensor& mean_of() const { return mean; }
  double entropy() const;
};

// Per-sample log-density on a tape. `mean` and `log_std` share x's shape;
// the result has shape (N).
Var gaussian_log_prob(Var x, Var mean, Var log_std);

}  // namespace flowprior
