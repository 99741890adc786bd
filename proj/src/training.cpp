#include "flowprior/training.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "flowprior/errors.hpp"

namespace flowprior {

using namespace ops;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  model.validate();
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (total_steps < 0) throw ParameterError("total_steps must be >= 0");
  if (!(grad_clip_value > 0.0) || !(grad_clip_norm > 0.0)) {
    throw ParameterError("gradient clipping thresholds must be positive");
  }
  if (beta_ln < 0.0 || beta_ae < 0.0 || beta_in < 0.0) throw ParameterError("loss weights must be >= 0");
  if (latent_noise < 0.0 || image_noise < 0.0) throw ParameterError("noise magnitudes must be >= 0");
  if (checkpoint_every < 0) throw ParameterError("checkpoint_every must be >= 0");
}

TrainConfig TrainConfig::mnist() {
  TrainConfig c;
  c.model.channels = 1;
  c.model.height = 32;  // 28x28 digits zero-padded
  c.model.width = 32;
  c.model.levels = 1;
  c.model.steps = 16;
  c.model.hidden = 128;
  c.model.blocks = 2;
  c.model.learn_base_mean = true;
  c.model.learn_base_std = false;  // N(mu, 1)
  c.learning_rate = 1e-4;
  c.batch_size = 50;
  c.total_steps = 100000;
  c.grad_clip_value = 1e5;
  c.grad_clip_norm = 1e4;
  return c;
}

TrainConfig TrainConfig::sprites() {
  TrainConfig c;
  c.model.channels = 3;
  c.model.height = 64;
  c.model.width = 64;
  c.model.levels = 3;
  c.model.steps = 8;
  c.model.hidden = 128;
  c.model.blocks = 2;
  c.model.encoder = EncoderKind::single_conv;
  c.model.learn_base_mean = true;
  c.model.learn_base_std = true;
  c.learning_rate = 1e-4;
  c.batch_size = 20;
  c.total_steps = 100000;
  c.grad_clip_value = 1e5;
  c.grad_clip_norm = 1e4;
  c.latent_noise = 0.5;
  c.beta_ln = 100.0;
  c.beta_ae = 1.0;
  return c;
}

TrainConfig TrainConfig::div2k() {
  TrainConfig c;
  c.model.channels = 3;
  c.model.height = 64;
  c.model.width = 64;
  c.model.levels = 3;
  c.model.steps = 4;
  c.model.hidden = 256;
  c.model.blocks = 2;
  c.model.encoder = EncoderKind::deep;
  c.model.encoder_hidden = 256;
  c.model.encoder_dropout = 0.2;
  c.model.learn_base_mean = true;
  c.model.learn_base_std = true;
  c.learning_rate = 1e-4;
  c.batch_size = 15;
  c.total_steps = 3200000;  // "20^5" as printed in the table
  c.grad_clip_value = 1e5;
  c.grad_clip_norm = 1e4;
  c.latent_noise = 0.5;
  c.beta_ln = 100.0;
  c.beta_ae = 1.0;
  c.beta_in = 100.0;
  c.image_noise = 10.0;
  return c;
}

TrainConfig TrainConfig::div2k_deep() {
  TrainConfig c = div2k();
  c.model.levels = 8;
  c.model.steps = 4;
  c.model.height = 256;
  c.model.width = 256;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "mnist") return mnist();
  if (name == "sprites") return sprites();
  if (name == "div2k") return div2k();
  if (name == "div2k-deep") return div2k_deep();
  throw ParameterError("unknown preset '" + name + "' (mnist, sprites, div2k, div2k-deep)");
}

// ---------------------------------------------------------------------------
// Optimizer and clipping

void AdamState::update(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
                       double lr) {
  if (grads.size() != params.size()) throw ContractError("Adam: one gradient per parameter expected");
  if (first.empty()) {
    for (const ParamRef& p : params) {
      first.emplace_back(p.value->shape(), 0.0);
      second.emplace_back(p.value->shape(), 0.0);
    }
  }
  if (first.size() != params.size()) throw ContractError("Adam state does not match the parameter list");
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].value;
    const Tensor& g = grads[i];
    Tensor& m = first[i];
    Tensor& v = second[i];
    require_same_shape(p, g, "Adam update");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

double global_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data()) sq += v * v;
  return std::sqrt(sq);
}

std::vector<Tensor> clip_gradients(std::vector<Tensor> grads, double max_value, double max_norm) {
  if (!(max_value > 0.0) || !(max_norm > 0.0)) throw ParameterError("clip thresholds must be positive");
  for (Tensor& g : grads)
    for (double& v : g.data()) v = std::clamp(v, -max_value, max_value);
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data()) v *= k;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Dequantization

Tensor dequantize_pixels(const Tensor& pixels, Rng* rng) {
  Tensor out = pixels;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = out[i];
    if (!(p >= 0.0 && p <= 255.0) || p != std::floor(p)) {
      std::ostringstream os;
      os << "dequantize: entry " << i << " = " << p << " is not an integer pixel in [0, 255]";
      throw ValidationError(os.str());
    }
    if (rng) out[i] = p + rng->uniform();
  }
  return out;
}

Tensor to_model_range(const Tensor& values) {
  Tensor out = values;
  for (double& v : out.data()) v /= kPixelLevels;
  return out;
}

Tensor dequantize(const Tensor& pixels, Rng* rng) { return to_model_range(dequantize_pixels(pixels, rng)); }

double bits_per_dim(double nll_nats_per_image, int dims) {
  return nll_nats_per_image / (dims * std::numbers::ln2) + std::log2(kPixelLevels);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void require_finite_log_prob(Var log_prob) {
  const Tensor& lp = log_prob.value();
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (!std::isfinite(lp[i])) {
      throw NumericalError("non-finite log-density for batch sample " + std::to_string(i));
    }
  }
}

Var nll_from(const FlowModel::Encoded& enc) {
  require_finite_log_prob(enc.log_prob);
  return neg(mean(enc.log_prob));
}

Var latent_noise_from(const FlowModel& model, Tape& tape, Var x, const FlowModel::Encoded& enc,
                      const LatentStack& xi, const ApplyContext& ctx) {
  if (xi.size() != enc.latents.size()) throw ShapeError("latent noise stack has the wrong depth");
  std::vector<Var> noisy;
  for (std::size_t i = 0; i < xi.size(); ++i) noisy.push_back(add(enc.latents[i], tape.constant(xi[i])));
  FlowModel::Decoded dec = model.decode(tape, noisy, ctx);
  return mean(l2_norm_per_sample(sub(dec.x, x)));
}

Var autoencoder_from(const FlowModel& model, Tape& tape, Var x, const FlowModel::Encoded& enc,
                     const ApplyContext& ctx) {
  if (model.num_levels() == 1) return tape.constant(Tensor::scalar(0.0));
  FlowModel::Decoded dec = model.mean_decode(tape, enc.latents[0], ctx);
  return mean(l2_norm_per_sample(sub(dec.x, x)));
}

// Per-sample flattening of a whole latent stack into (N, D, 1, 1).
Var flatten_stack(const std::vector<Var>& latents) {
  Var out;
  for (Var u : latents) {
    const int n = u.value().dim(0);
    const int d = static_cast<int>(u.value().size() / static_cast<std::size_t>(n));
    Var flat = reshape(u, {n, d, 1, 1});
    out = out.valid() ? concat_channels(out, flat) : flat;
  }
  return out;
}

Var image_noise_from(const FlowModel& model, Tape& tape, Var x, const FlowModel::Encoded& enc,
                     const Tensor& eta, const ApplyContext& ctx) {
  require_same_shape(x.value(), eta, "image noise");
  FlowModel::Encoded noisy = model.encode(tape, add(x, tape.constant(eta)), ctx);
  return mean(l2_norm_per_sample(sub(flatten_stack(enc.latents), flatten_stack(noisy.latents))));
}

}  // namespace

Var loss_nll(const FlowModel& model, Tape& tape, Var x, const ApplyContext& ctx) {
  return nll_from(model.encode(tape, x, ctx));
}

Var loss_latent_noise(const FlowModel& model, Tape& tape, Var x, const LatentStack& xi,
                      const ApplyContext& ctx) {
  return latent_noise_from(model, tape, x, model.encode(tape, x, ctx), xi, ctx);
}

Var loss_autoencoder(const FlowModel& model, Tape& tape, Var x, const ApplyContext& ctx) {
  if (model.num_levels() == 1) return tape.constant(Tensor::scalar(0.0));
  return autoencoder_from(model, tape, x, model.encode(tape, x, ctx), ctx);
}

Var loss_image_noise(const FlowModel& model, Tape& tape, Var x, const Tensor& eta,
                     const ApplyContext& ctx) {
  return image_noise_from(model, tape, x, model.encode(tape, x, ctx), eta, ctx);
}

LatentStack sample_latent_noise(const FlowModel& model, int n, double magnitude, Rng& rng) {
  LatentStack xi;
  for (const Shape& s : model.latent_shapes(n)) xi.push_back(rng.uniform_tensor(s, -magnitude, magnitude));
  return xi;
}

Tensor sample_image_noise(const Shape& shape, double magnitude_pixels, Rng& rng) {
  const double a = magnitude_pixels / kPixelLevels;
  return rng.uniform_tensor(shape, -a, a);
}

LossTerms total_loss(const FlowModel& model, Tape& tape, Var x, const TrainConfig& cfg,
                     const NoiseDraw& noise, const ApplyContext& ctx) {
  LossTerms terms;
  FlowModel::Encoded enc = model.encode(tape, x, ctx);
  Var total = nll_from(enc);
  terms.nll = total.value().item();
  if (cfg.beta_ln > 0.0) {
    Var l = latent_noise_from(model, tape, x, enc, noise.latent, ctx);
    terms.l_ln = l.value().item();
    total = add(total, scale(l, cfg.beta_ln));
  }
  if (cfg.beta_ae > 0.0) {
    Var l = autoencoder_from(model, tape, x, enc, ctx);
    terms.l_ae = l.value().item();
    total = add(total, scale(l, cfg.beta_ae));
  }
  if (cfg.beta_in > 0.0) {
    Var l = image_noise_from(model, tape, x, enc, noise.image, ctx);
    terms.l_in = l.value().item();
    total = add(total, scale(l, cfg.beta_in));
  }
  terms.total = total;
  return terms;
}

// ---------------------------------------------------------------------------
// Loop

std::string metrics_header() { return "step,nll,bits_per_dim,l_ln,l_ae,l_in,total,grad_norm"; }

std::string format_metrics(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.nll << ',' << r.bits_per_dim << ',' << r.l_ln << ',' << r.l_ae << ','
     << r.l_in << ',' << r.total << ',' << r.grad_norm;
  return os.str();
}

Tensor training_batch(const std::vector<Tensor>& dataset, const TrainConfig& cfg, Rng& step_rng) {
  if (dataset.empty()) throw ParameterError("training dataset is empty");
  std::vector<Tensor> picked;
  picked.reserve(static_cast<std::size_t>(cfg.batch_size));
  const int last = static_cast<int>(dataset.size()) - 1;
  for (int b = 0; b < cfg.batch_size; ++b) {
    picked.push_back(dataset[static_cast<std::size_t>(step_rng.uniform_int(0, last))]);
  }
  return dequantize(stack_batch(picked), &step_rng);
}

namespace {

constexpr std::uint64_t kInitStream = 0xac7a11f0'00000000ULL;

}  // namespace

void train(FlowModel& model, const std::vector<Tensor>& dataset, const TrainConfig& cfg,
           TrainState& state, const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw ParameterError("training dataset is empty");
  const Rng root(cfg.seed);
  if (!model.initialized()) {
    Rng init_rng = root.derive(kInitStream);
    model.data_init(training_batch(dataset, cfg, init_rng));
  }
  std::vector<ParamRef> params = model.parameters();
  const int dims = model.dims();

  while (state.step < cfg.total_steps) {
    Rng rng = root.derive(static_cast<std::uint64_t>(state.step));
    Tensor batch = training_batch(dataset, cfg, rng);
    NoiseDraw noise;
    if (cfg.beta_ln > 0.0) noise.latent = sample_latent_noise(model, cfg.batch_size, cfg.latent_noise, rng);
    if (cfg.beta_in > 0.0) noise.image = sample_image_noise(batch.shape(), cfg.image_noise, rng);

    Tape tape;
    tape.set_trainable_params(true);
    const ApplyContext ctx{true, &rng};
    LossTerms terms = total_loss(model, tape, tape.constant(std::move(batch)), cfg, noise, ctx);
    const double total = terms.total.value().item();
    if (!std::isfinite(total)) {
      throw NumericalError("non-finite training loss at step " + std::to_string(state.step + 1));
    }
    GradientMap gmap = tape.backprop(terms.total);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const ParamRef& p : params) {
      Var v = tape.find_param(*p.value);
      grads.push_back(v.valid() ? gmap.at(v) : Tensor(p.value->shape(), 0.0));
    }
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) {
      throw NumericalError("non-finite gradient at step " + std::to_string(state.step + 1));
    }
    grads = clip_gradients(std::move(grads), cfg.grad_clip_value, cfg.grad_clip_norm);
    state.adam.update(params, grads, cfg.learning_rate);
    ++state.step;

    MetricsRow row;
    row.step = state.step;
    row.nll = terms.nll;
    row.bits_per_dim = bits_per_dim(terms.nll, dims);
    row.l_ln = terms.l_ln;
    row.l_ae = terms.l_ae;
    row.l_in = terms.l_in;
    row.total = total;
    row.grad_norm = norm;
    if (hooks.metrics) *hooks.metrics << format_metrics(row) << '\n';
    if (hooks.on_step) hooks.on_step(row);
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      hooks.checkpoint(model, state);
    }
  }
}

}  // namespace flowprior
