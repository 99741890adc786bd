#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flowprior/autodiff.hpp"
#include "flowprior/layers.hpp"
#include "flowprior/rng.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

struct ModelConfig {
  int channels = 1;
  int height = 32;
  int width = 32;
  int levels = 1;           // L
  int steps = 16;           // K flow steps per level
  int hidden = 128;         // coupling conditioner width
  int blocks = 2;           // residual blocks per conditioner
  EncoderKind encoder = EncoderKind::single_conv;
  int encoder_hidden = 128;  // deep encoder only
  double encoder_dropout = 0.2;
  bool learn_base_mean = true;
  bool learn_base_std = false;
  std::uint64_t init_seed = 0;

  void validate() const;
};

// Per-level latents u_0 ... u_{L-1}; index 0 is the deepest (coarsest) one.
using LatentStack = std::vector<Tensor>;

struct FlowStep {
  ActNorm actnorm;
  InvConv1x1 invconv;
  AffineCoupling coupling;
};

struct FlowLevel {
  std::vector<FlowStep> steps;
  bool has_split = false;
  ContextEncoder encoder;  // used when has_split
};

// Multi-scale flow: every level squeezes, runs K steps, and all but the last
// factor out half of their channels.
class FlowModel {
 public:
  explicit FlowModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  int num_levels() const { return config_.levels; }
  int dims() const { return config_.channels * config_.height * config_.width; }

  // Latent shapes for a batch of `n`, deepest first.
  std::vector<Shape> latent_shapes(int n) const;

  struct Encoded {
    std::vector<Var> latents;  // deepest first
    Var log_prob;              // (N)
  };
  struct Decoded {
    Var x;
    Var log_prob;              // (N), log-density of x under the model
    std::vector<Var> latents;  // latents actually used, means filled in
  };

  Encoded encode(Tape& tape, Var x, const ApplyContext& ctx = {}) const;

  // latents[0] is required. A missing (invalid) entry i >= 1 is replaced by
  // the mean predicted by that level's context encoder.
  Decoded decode(Tape& tape, const std::vector<Var>& latents, const ApplyContext& ctx = {}) const;
  Decoded mean_decode(Tape& tape, Var deepest, const ApplyContext& ctx = {}) const;

  // Tape-free conveniences (parameters are constants).
  std::pair<LatentStack, Tensor> forward(const Tensor& x) const;
  Tensor inverse(const LatentStack& latents) const;
  Tensor mean_decode(const Tensor& deepest) const;
  // Draws u_0 from the base and every other level from its conditional.
  Tensor sample(Rng& rng, int n) const;

  // Data-dependent actnorm initialization on one batch.
  void data_init(const Tensor& batch);
  bool initialized() const;

  std::vector<ParamRef> parameters();
  std::vector<std::pair<std::string, bool*>> actnorm_flags();

  // Random values for every parameter, including the zero-initialized ones,
  // and marks actnorm layers initialized. Test helper.
  void randomize(Rng& rng, double scale = 0.5);

  std::vector<FlowLevel> levels;
  Tensor base_mean;     // (1, C, H, W) of the deepest latent
  Tensor base_log_std;

 private:
  void check_input(const Tensor& x) const;
  Var base_log_prob(Tape& tape, Var u) const;

  ModelConfig config_;
};

}  // namespace flowprior
