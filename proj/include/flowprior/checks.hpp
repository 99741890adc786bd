#pragma once

// Independent numerical oracles used by the tests, the acceptance binary and
// the `sanity` command. Nothing here is used by the library itself.

#include <functional>
#include <string>
#include <vector>

#include "flowprior/model.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior::checks {

using TensorFn = std::function<Tensor(const Tensor&)>;

// Dense Jacobian of f at x by central differences, one input coordinate per
// column. Returned as a (rows = outputs, cols = inputs) tensor.
Tensor dense_jacobian(const TensorFn& f, const Tensor& x, double step = 1e-5);

// log |det J| by full-pivot LU.
double log_abs_det(const Tensor& square_matrix);

// Plain scalar density, no tape involved.
double scalar_normal_log_density(double x, double mean, double std_dev);

// -log N(x; 0, I) summed over every entry.
double standard_normal_nll(const Tensor& x);

double relative_error(double a, double b);

// Finite-difference check of d loss / d parameter for a model parameter.
// `loss` builds the scalar on a fresh tape each call.
double param_grad_check(Tensor& parameter, const std::function<Var(Tape&)>& loss, double step = 1e-5);

// Small model with every parameter random; actnorm layers count as initialized.
FlowModel random_model(const ModelConfig& config, std::uint64_t seed, double scale = 0.3);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Fast invariant suite: bijectivity, log-det oracle, gradients, Gaussian
// reduction. Used by the `sanity` CLI command.
std::vector<CheckResult> run_sanity(std::uint64_t seed);

}  // namespace flowprior::checks
