#include "flowprior/model.hpp"

#include <cmath>

#include "flowprior/distributions.hpp"
#include "flowprior/errors.hpp"

namespace flowprior {

using namespace ops;

void ModelConfig::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw ParameterError("image extents must be positive");
  if (levels < 1 || steps < 1 || hidden < 1 || blocks < 0 || encoder_hidden < 1) {
    throw ParameterError("levels, steps and widths must be positive");
  }
  const int f = 1 << levels;
  if (height % f != 0 || width % f != 0) {
    throw ParameterError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by 2^L = " + std::to_string(f) + "; pad the input");
  }
  if (encoder_dropout < 0.0 || encoder_dropout >= 1.0) {
    throw ParameterError("encoder dropout must lie in [0, 1)");
  }
}

FlowModel::FlowModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.init_seed);
  int c = config_.channels;
  int h = config_.height;
  int w = config_.width;
  for (int l = 0; l < config_.levels; ++l) {
    c *= 4;
    h /= 2;
    w /= 2;
    FlowLevel level;
    for (int k = 0; k < config_.steps; ++k) {
      FlowStep step{ActNorm(c), InvConv1x1::random_rotation(c, rng),
                    AffineCoupling(c, config_.hidden, config_.blocks, rng)};
      level.steps.push_back(std::move(step));
    }
    if (l + 1 < config_.levels) {
      level.has_split = true;
      level.encoder = ContextEncoder(config_.encoder, c / 2, c / 2, config_.encoder_hidden,
                                     config_.encoder_dropout, rng);
      c /= 2;
    }
    levels.push_back(std::move(level));
  }
  base_mean = Tensor({1, c, h, w}, 0.0);
  base_log_std = Tensor({1, c, h, w}, 0.0);
}

std::vector<Shape> FlowModel::latent_shapes(int n) const {
  std::vector<Shape> factored;
  int c = config_.channels;
  int h = config_.height;
  int w = config_.width;
  for (int l = 0; l < config_.levels; ++l) {
    c *= 4;
    h /= 2;
    w /= 2;
    if (l + 1 < config_.levels) {
      factored.push_back({n, c / 2, h, w});
      c /= 2;
    }
  }
  std::vector<Shape> out{{n, c, h, w}};
  out.insert(out.end(), factored.rbegin(), factored.rend());
  return out;
}

void FlowModel::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.channels || x.dim(2) != config_.height ||
      x.dim(3) != config_.width) {
    const int f = 1 << config_.levels;
    std::string msg = "model expects (N, " + std::to_string(config_.channels) + ", " +
                      std::to_string(config_.height) + ", " + std::to_string(config_.width) +
                      ") input, got " + to_string(x.shape());
    if (x.rank() == 4 && (x.dim(2) % f != 0 || x.dim(3) % f != 0)) {
      msg += "; spatial extents must be divisible by " + std::to_string(f) +
             ", zero-pad the image to the model size";
    }
    throw ShapeError(msg);
  }
}

Var FlowModel::base_log_prob(Tape& tape, Var u) const {
  const int n = u.value().dim(0);
  Var mean = config_.learn_base_mean ? tape.param(base_mean) : tape.constant(base_mean);
  Var log_std = config_.learn_base_std ? tape.param(base_log_std) : tape.constant(base_log_std);
  if (n > 1) {
    mean = tile_batch(mean, n);
    log_std = tile_batch(log_std, n);
  }
  if (u.shape() != mean.shape()) {
    throw ShapeError("deepest latent " + to_string(u.shape()) + " does not match base " +
                     to_string(mean.shape()));
  }
  return gaussian_log_prob(u, mean, log_std);
}

FlowModel::Encoded FlowModel::encode(Tape& tape, Var x, const ApplyContext& ctx) const {
  check_input(x.value());
  const int n = x.value().dim(0);
  Var log_prob = tape.constant(Tensor({n}, 0.0));
  std::vector<Var> factored;
  Var h = x;
  for (const FlowLevel& level : levels) {
    h = squeeze2(h);
    for (const FlowStep& step : level.steps) {
      LayerOutput normed = step.actnorm.apply(tape, h, Direction::forward);
      log_prob = add(log_prob, normed.logdet);
      LayerOutput mixed = step.invconv.apply(tape, normed.y, Direction::forward);
      log_prob = add(log_prob, mixed.logdet);
      LayerOutput coupled = step.coupling.apply(tape, mixed.y, Direction::forward);
      log_prob = add(log_prob, coupled.logdet);
      h = coupled.y;
    }
    if (level.has_split) {
      SplitOutput split = split_forward(level.encoder, tape, h, ctx);
      factored.push_back(split.latent);
      log_prob = add(log_prob, split.log_prob);
      h = split.kept;
    }
  }
  log_prob = add(log_prob, base_log_prob(tape, h));
  Encoded enc;
  enc.latents.push_back(h);
  enc.latents.insert(enc.latents.end(), factored.rbegin(), factored.rend());
  enc.log_prob = log_prob;
  return enc;
}

FlowModel::Decoded FlowModel::decode(Tape& tape, const std::vector<Var>& latents,
                                     const ApplyContext& ctx) const {
  const int num = config_.levels;
  if (latents.empty() || !latents[0].valid()) throw ContractError("decode needs the deepest latent");
  if (static_cast<int>(latents.size()) > num) {
    throw ShapeError("decode got " + std::to_string(latents.size()) + " latents for a " +
                     std::to_string(num) + "-level model");
  }
  const int n = latents[0].value().dim(0);
  const std::vector<Shape> shapes = latent_shapes(n);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].valid() && latents[i].shape() != shapes[i]) {
      throw ShapeError("latent " + std::to_string(i) + " has shape " + to_string(latents[i].shape()) +
                       ", expected " + to_string(shapes[i]));
    }
  }

  Decoded dec;
  dec.latents.assign(static_cast<std::size_t>(num), Var{});
  dec.latents[0] = latents[0];
  Var h = latents[0];
  Var log_prob = base_log_prob(tape, h);
  for (int l = num - 1; l >= 0; --l) {
    const FlowLevel& level = levels[static_cast<std::size_t>(l)];
    if (level.has_split) {
      const auto idx = static_cast<std::size_t>(num - 1 - l);
      Var given = idx < latents.size() ? latents[idx] : Var{};
      SplitOutput merged = split_inverse(level.encoder, tape, h, given, !given.valid(), ctx);
      dec.latents[idx] = merged.latent;
      log_prob = add(log_prob, merged.log_prob);
      h = merged.kept;
    }
    for (auto it = level.steps.rbegin(); it != level.steps.rend(); ++it) {
      LayerOutput coupled = it->coupling.apply(tape, h, Direction::inverse);
      LayerOutput mixed = it->invconv.apply(tape, coupled.y, Direction::inverse);
      LayerOutput normed = it->actnorm.apply(tape, mixed.y, Direction::inverse);
      // Inverse log-dets are the negated forward ones.
      log_prob = sub(log_prob, coupled.logdet);
      log_prob = sub(log_prob, mixed.logdet);
      log_prob = sub(log_prob, normed.logdet);
      h = normed.y;
    }
    h = unsqueeze2(h);
  }
  dec.x = h;
  dec.log_prob = log_prob;
  return dec;
}

FlowModel::Decoded FlowModel::mean_decode(Tape& tape, Var deepest, const ApplyContext& ctx) const {
  return decode(tape, {deepest}, ctx);
}

std::pair<LatentStack, Tensor> FlowModel::forward(const Tensor& x) const {
  Tape tape;
  Encoded enc = encode(tape, tape.constant(x));
  LatentStack stack;
  for (Var v : enc.latents) stack.push_back(v.value());
  return {std::move(stack), enc.log_prob.value()};
}

Tensor FlowModel::inverse(const LatentStack& latents) const {
  if (static_cast<int>(latents.size()) != config_.levels) {
    throw ShapeError("latent stack has " + std::to_string(latents.size()) + " levels, model has " +
                     std::to_string(config_.levels));
  }
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : latents) vars.push_back(tape.constant(t));
  return decode(tape, vars).x.value();
}

Tensor FlowModel::mean_decode(const Tensor& deepest) const {
  Tape tape;
  return mean_decode(tape, tape.constant(deepest)).x.value();
}

Tensor FlowModel::sample(Rng& rng, int n) const {
  Tape tape;
  const std::vector<Shape> shapes = latent_shapes(n);
  Tensor u0(shapes[0]);
  const std::size_t per = base_mean.size();
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < per; ++j)
      u0[i * per + j] = base_mean[j] + std::exp(base_log_std[j]) * rng.normal();
  Var h = tape.constant(u0);
  for (int l = config_.levels - 1; l >= 0; --l) {
    const FlowLevel& level = levels[static_cast<std::size_t>(l)];
    if (level.has_split) {
      auto [mean, log_std] = level.encoder.predict(tape, h, {});
      Tensor u = mean.value();
      for (std::size_t j = 0; j < u.size(); ++j) u[j] += std::exp(log_std.value()[j]) * rng.normal();
      h = concat_channels(h, tape.constant(std::move(u)));
    }
    for (auto it = level.steps.rbegin(); it != level.steps.rend(); ++it) {
      h = it->coupling.apply(tape, h, Direction::inverse).y;
      h = it->invconv.apply(tape, h, Direction::inverse).y;
      h = it->actnorm.apply(tape, h, Direction::inverse).y;
    }
    h = unsqueeze2(h);
  }
  return h.value();
}

void FlowModel::data_init(const Tensor& batch) {
  check_input(batch);
  Tape tape;
  Var h = tape.constant(batch);
  for (FlowLevel& level : levels) {
    h = squeeze2(h);
    for (FlowStep& step : level.steps) {
      h = actnorm_apply(step.actnorm, tape, h, Direction::forward).y;
      h = step.invconv.apply(tape, h, Direction::forward).y;
      h = step.coupling.apply(tape, h, Direction::forward).y;
    }
    if (level.has_split) h = split_forward(level.encoder, tape, h, {}).kept;
  }
}

bool FlowModel::initialized() const {
  for (const FlowLevel& level : levels)
    for (const FlowStep& step : level.steps)
      if (!step.actnorm.initialized) return false;
  return true;
}

std::vector<ParamRef> FlowModel::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::string lp = "level" + std::to_string(l);
    for (std::size_t k = 0; k < levels[l].steps.size(); ++k) {
      const std::string sp = lp + ".step" + std::to_string(k);
      FlowStep& step = levels[l].steps[k];
      step.actnorm.collect(sp + ".actnorm", out);
      step.invconv.collect(sp + ".invconv", out);
      step.coupling.collect(sp + ".coupling", out);
    }
    if (levels[l].has_split) levels[l].encoder.collect(lp + ".encoder", out);
  }
  if (config_.learn_base_mean) out.push_back({"base.mean", &base_mean});
  if (config_.learn_base_std) out.push_back({"base.log_std", &base_log_std});
  return out;
}

std::vector<std::pair<std::string, bool*>> FlowModel::actnorm_flags() {
  std::vector<std::pair<std::string, bool*>> out;
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (std::size_t k = 0; k < levels[l].steps.size(); ++k)
      out.emplace_back("level" + std::to_string(l) + ".step" + std::to_string(k) + ".actnorm",
                       &levels[l].steps[k].actnorm.initialized);
  return out;
}

void FlowModel::randomize(Rng& rng, double scale) {
  for (FlowLevel& level : levels) {
    for (FlowStep& step : level.steps) {
      for (double& v : step.actnorm.log_scale.data()) v = 0.3 * scale * rng.normal();
      for (double& v : step.actnorm.bias.data()) v = scale * rng.normal();
      step.actnorm.initialized = true;
      const int c = step.invconv.channels();
      InvConv1x1 rot = InvConv1x1::random_rotation(c, rng);
      for (std::size_t i = 0; i < rot.weight.size(); ++i) {
        step.invconv.weight[i] = rot.weight[i] + 0.3 * scale * rng.normal();
      }
      step.coupling.randomize(rng, scale);
    }
    if (level.has_split) level.encoder.randomize(rng, scale);
  }
  for (double& v : base_mean.data()) v = 0.3 * scale * rng.normal();
  if (config_.learn_base_std) {
    for (double& v : base_log_std.data()) v = 0.3 * scale * rng.normal();
  }
}

}  // namespace flowprior
