#include "flowprior/checks.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "flowprior/distributions.hpp"
#include "flowprior/errors.hpp"
#include "flowprior/training.hpp"

namespace flowprior::checks {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace


Tensor dense_jacobian(const TensorFn& f, const Tensor& x, double step) {
  const Tensor y0 = f(x);
  const int rows = static_cast<int>(y0.size());
  const int cols = static_cast<int>(x.size());
  Tensor jac({rows, cols}, 0.0);
  Tensor probe = x;
  for (int j = 0; j < cols; ++j) {
    const double keep = probe[static_cast<std::size_t>(j)];
    probe[static_cast<std::size_t>(j)] = keep + step;
    const Tensor plus = f(probe);
    probe[static_cast<std::size_t>(j)] = keep - step;
    const Tensor minus = f(probe);
    probe[static_cast<std::size_t>(j)] = keep;
    for (int i = 0; i < rows; ++i) {
      const auto k = static_cast<std::size_t>(i);
      jac[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)] =
          (plus[k] - minus[k]) / (2.0 * step);
    }
  }
  return jac;
}

double log_abs_det(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw ShapeError("log_abs_det needs a square matrix, got " + to_string(m.shape()));
  const int n = m.dim(0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = m[static_cast<std::size_t>(i * n + j)];
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::MatrixXd& packed = lu.matrixLU();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::log(std::abs(packed(i, i)));
  return acc;
}

double scalar_normal_log_density(double x, double mean, double std_dev) {
  const double z = (x - mean) / std_dev;
  return std::log(std::exp(-0.5 * z * z) / (std_dev * std::sqrt(2.0 * std::numbers::pi)));
}

double standard_normal_nll(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += 0.5 * v * v + 0.5 * std::log(2.0 * std::numbers::pi);
  return acc;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b))); }

double param_grad_check(Tensor& parameter, const std::function<Var(Tape&)>& loss, double step) {
  Tensor analytic;
  {
    Tape tape;
    tape.set_trainable_params(true);
    Var l = loss(tape);
    const GradientMap g = tape.backprop(l);
    Var leaf = tape.find_param(parameter);
    analytic = leaf.valid() ? g.at(leaf) : Tensor(parameter.shape(), 0.0);
  }
  auto eval = [&] {
    Tape tape;
    return loss(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < parameter.size(); ++i) {
    const double keep = parameter[i];
    parameter[i] = keep + step;
    const double plus = eval();
    parameter[i] = keep - step;
    const double minus = eval();
    parameter[i] = keep;
    const double numeric = (plus - minus) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

FlowModel random_model(const ModelConfig& config, std::uint64_t seed, double scale) {
  FlowModel model(config);
  Rng rng(seed);
  model.randomize(rng, scale);
  return model;
}

namespace {

CheckResult bijectivity(std::uint64_t seed) {
  CheckResult r{"bijectivity", true, {}};
  double worst = 0.0;
  Rng rng(seed);
  for (int levels = 1; levels <= 3; ++levels) {
    ModelConfig c;
    c.channels = 1;
    c.height = c.width = 8;
    c.levels = levels;
    c.steps = 2;
    c.hidden = 4;
    c.blocks = 1;
    c.encoder_hidden = 4;
    c.learn_base_std = true;
    const FlowModel m = random_model(c, seed + static_cast<std::uint64_t>(levels));
    const Tensor x = rng.normal_tensor({2, 1, 8, 8});
    worst = std::max(worst, max_abs_diff(m.inverse(m.forward(x).first), x));
  }
  r.passed = worst < 1e-8;
  r.detail = "max |x - T(T^-1(x))| = " + sci(worst);
  return r;
}

CheckResult logdet_oracle(std::uint64_t seed) {
  CheckResult r{"log-det oracle", true, {}};
  ModelConfig c;
  c.channels = 1;
  c.height = c.width = 4;
  c.levels = 1;
  c.steps = 2;
  c.hidden = 4;
  c.blocks = 1;
  c.learn_base_std = true;
  const FlowModel m = random_model(c, seed);
  Rng rng(seed ^ 0x5eedULL);
  const Tensor x = rng.normal_tensor({1, 1, 4, 4});
  auto latent = [&](const Tensor& in) { return m.forward(in).first[0]; };
  const double numeric = log_abs_det(dense_jacobian(latent, x));
  // log p(x) = log p_base(u) + log|det J|
  const auto [stack, log_prob] = m.forward(x);
  const DiagGaussian base(m.base_mean, m.base_log_std);
  const double analytic = log_prob.item() - base.log_prob(stack[0]);
  const double err = relative_error(numeric, analytic);
  r.passed = err < 1e-6;
  r.detail = "rel. err " + sci(err);
  return r;
}

CheckResult gradients(std::uint64_t seed) {
  CheckResult r{"loss gradients", true, {}};
  ModelConfig c;
  c.channels = 1;
  c.height = c.width = 4;
  c.levels = 2;
  c.steps = 1;
  c.hidden = 4;
  c.blocks = 1;
  c.learn_base_std = true;
  const FlowModel m = random_model(c, seed);
  Rng rng(seed + 7);
  const Tensor x = rng.uniform_tensor({1, 1, 4, 4}, 0.0, 1.0);
  const double err = grad_check([&](Tape& t, Var v) { return loss_nll(m, t, v); }, x, 1e-5);
  r.passed = err < 1e-4;
  r.detail = "nll input-gradient rel. err " + sci(err);
  return r;
}

CheckResult gaussian_reduction(std::uint64_t seed) {
  CheckResult r{"gaussian reduction", true, {}};
  ModelConfig c;
  c.channels = 1;
  c.height = c.width = 8;
  c.levels = 2;
  c.steps = 2;
  c.hidden = 4;
  c.blocks = 1;
  FlowModel m(c);
  for (FlowLevel& level : m.levels)
    for (FlowStep& s : level.steps) {
      const int ch = s.invconv.channels();
      Tensor eye({ch, ch}, 0.0);
      for (int i = 0; i < ch; ++i) eye[static_cast<std::size_t>(i * ch + i)] = 1.0;
      s.invconv.weight = eye;
    }
  Rng rng(seed);
  const Tensor x = rng.normal_tensor({1, 1, 8, 8});
  const double nll = -m.forward(x).second.item();
  const double expect = standard_normal_nll(x);
  const double err = std::abs(nll - expect);
  r.passed = err < 1e-9;
  r.detail = "abs. err " + sci(err);
  return r;
}

}  // namespace

std::vector<CheckResult> run_sanity(std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (auto check : {bijectivity, logdet_oracle, gradients, gaussian_reduction}) {
    try {
      out.push_back(check(seed));
    } catch (const std::exception& e) {
      out.push_back({"exception", false, e.what()});
    }
  }
  return out;
}

}  // namespace flowprior::checks
