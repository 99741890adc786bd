#include "flowprior/distributions.hpp"

#include <cmath>

#include "flowprior/errors.hpp"

namespace flowprior {

DiagGaussian::DiagGaussian(Tensor mean_, Tensor log_std_)
    : mean(std::move(mean_)), log_std(std::move(log_std_)) {
  require_same_shape(mean, log_std, "DiagGaussian");
}

DiagGaussian DiagGaussian::standard(const Shape& shape) {
  return DiagGaussian(Tensor(shape, 0.0), Tensor(shape, 0.0));
}

double DiagGaussian::log_prob(const Tensor& x) const {
  require_same_shape(x, mean, "DiagGaussian::log_prob");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mean[i]) * std::exp(-log_std[i]);
    acc += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return acc;
}

Tensor DiagGaussian::sample(Rng& rng) const {
  Tensor out = mean;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::exp(log_std[i]) * rng.normal();
  return out;
}

double DiagGaussian::entropy() const {
  double acc = 0.0;
  for (double ls : log_std.data()) acc += 0.5 + kHalfLog2Pi + ls;
  return acc;
}

Var gaussian_log_prob(Var x, Var mean, Var log_std) {
  using namespace ops;
  Var z = mul(sub(x, mean), exp(neg(log_std)));
  Var per_entry = sub(scale(square(z), -0.5), log_std);
  Var lp = sum_per_sample(per_entry);
  const double per_sample = static_cast<double>(x.value().size() / x.value().dim(0));
  return add_scalar(lp, -kHalfLog2Pi * per_sample);
}

}  // namespace flowprior
