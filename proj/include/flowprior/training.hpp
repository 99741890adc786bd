#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowprior/autodiff.hpp"
#include "flowprior/model.hpp"
#include "flowprior/rng.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

// Pixel data lives in [0, 255]; the flow sees (pixel + eps) / 256 in [0, 1).
inline constexpr double kPixelLevels = 256.0;

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 1e-4;
  int batch_size = 50;
  long total_steps = 100000;
  double grad_clip_value = 1e5;
  double grad_clip_norm = 1e4;
  double beta_ln = 0.0;
  double beta_ae = 0.0;
  double beta_in = 0.0;
  double latent_noise = 0.5;  // xi ~ U(-a, a) on latents
  double image_noise = 10.0;  // eta ~ U(-a, a) on the 0-255 scale
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;

  static TrainConfig mnist();
  static TrainConfig sprites();
  static TrainConfig div2k();
  // Alternative DIV2K reading with L = 8, K = 4 (needs 256x256 patches).
  static TrainConfig div2k_deep();
  static TrainConfig preset(const std::string& name);
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> first;   // mirrors the parameter list
  std::vector<Tensor> second;

  void update(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr);
};

double global_norm(const std::vector<Tensor>& grads);

// Clamps every entry to [-max_value, max_value], then rescales all tensors
// so the global L2 norm is at most max_norm.
std::vector<Tensor> clip_gradients(std::vector<Tensor> grads, double max_value, double max_norm);

// pixels + U[0, 1) noise (no noise when rng is null), still on the 0-255 scale.
Tensor dequantize_pixels(const Tensor& pixels, Rng* rng);
Tensor to_model_range(const Tensor& values);
// Both steps; the usual entry point.
Tensor dequantize(const Tensor& pixels, Rng* rng);

double bits_per_dim(double nll_nats_per_image, int dims);

// ---------------------------------------------------------------------------
// Losses. `x` is a dequantized batch in model range; scalar results.

// Mean over the batch of -log p(x). Throws NumericalError naming the first
// sample with a non-finite log-density.
Var loss_nll(const FlowModel& model, Tape& tape, Var x, const ApplyContext& ctx = {});

// Mean over the batch of || T(T^-1(x) + xi) - x ||_2.
Var loss_latent_noise(const FlowModel& model, Tape& tape, Var x, const LatentStack& xi,
                      const ApplyContext& ctx = {});

// Mean over the batch of || mean_decode(u_0(x)) - x ||_2; zero for L = 1.
Var loss_autoencoder(const FlowModel& model, Tape& tape, Var x, const ApplyContext& ctx = {});

// Mean over the batch of || T^-1(x) - T^-1(x + eta) ||_2 over the whole stack.
Var loss_image_noise(const FlowModel& model, Tape& tape, Var x, const Tensor& eta,
                     const ApplyContext& ctx = {});

LatentStack sample_latent_noise(const FlowModel& model, int n, double magnitude, Rng& rng);
// eta in model units for a magnitude given on the 0-255 scale.
Tensor sample_image_noise(const Shape& shape, double magnitude_pixels, Rng& rng);

struct NoiseDraw {
  LatentStack latent;  // used when beta_ln > 0
  Tensor image;        // used when beta_in > 0
};

struct LossTerms {
  Var total;
  double nll = 0.0;
  double l_ln = 0.0;
  double l_ae = 0.0;
  double l_in = 0.0;
};

// nll + beta_ln * l_ln + beta_ae * l_ae + beta_in * l_in. Terms with a zero
// weight are not computed. The encoding of x is shared between terms.
LossTerms total_loss(const FlowModel& model, Tape& tape, Var x, const TrainConfig& cfg,
                     const NoiseDraw& noise, const ApplyContext& ctx = {});

// ---------------------------------------------------------------------------
// Training loop

struct MetricsRow {
  long step = 0;
  double nll = 0.0;
  double bits_per_dim = 0.0;
  double l_ln = 0.0;
  double l_ae = 0.0;
  double l_in = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_header();
std::string format_metrics(const MetricsRow& row);

struct TrainState {
  long step = 0;  // number of completed updates
  AdamState adam;
};

struct TrainHooks {
  std::ostream* metrics = nullptr;
  std::function<void(const MetricsRow&)> on_step;
  std::function<void(const FlowModel&, const TrainState&)> checkpoint;
};

// Runs updates until state.step == cfg.total_steps. Each step's randomness
// (batch choice, dequantization, loss noise) is drawn from a stream derived
// from (cfg.seed, step), so a resumed run continues bit-identically.
// A non-finite loss throws NumericalError before the update is applied.
void train(FlowModel& model, const std::vector<Tensor>& dataset, const TrainConfig& cfg,
           TrainState& state, const TrainHooks& hooks = {});

// Dequantized batch for a given step, as drawn by `train`.
Tensor training_batch(const std::vector<Tensor>& dataset, const TrainConfig& cfg, Rng& step_rng);

}  // namespace flowprior
