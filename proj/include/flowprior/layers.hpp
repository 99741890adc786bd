#pragma once

// Invertible building blocks of the flow. Every layer maps (N, C, H, W) to a
// tensor of the same size and reports log|det J| of the direction applied.

#include <string>
#include <utility>
#include <vector>

#include "flowprior/autodiff.hpp"
#include "flowprior/rng.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

enum class Direction { forward, inverse };

// `logdet` is a single-element tensor when it is the same for every sample,
// otherwise shape (N).
struct LayerOutput {
  Var y;
  Var logdet;
};

// Named handle to a trainable tensor owned by a layer.
struct ParamRef {
  std::string name;
  Tensor* value;
};

struct ApplyContext {
  bool training = false;
  Rng* rng = nullptr;  // dropout masks, training only
};

struct Conv2dParams {
  Tensor weight;  // (C_out, C_in, k, k)
  Tensor bias;    // (C_out)
  int kernel = 3;

  Conv2dParams() = default;
  Conv2dParams(int in_channels, int out_channels, int kernel);

  // He-normal weights, zero bias.
  static Conv2dParams he_normal(int in_channels, int out_channels, int kernel, Rng& rng);

  Var apply(Tape& tape, Var x) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void randomize(Rng& rng, double scale);
};

// y = s * x + t per channel with s = exp(log_scale).
class ActNorm {
 public:
  explicit ActNorm(int channels = 1);

  int channels() const { return static_cast<int>(log_scale.size()); }

  // Sets s, t so that the output of this batch has zero mean and unit
  // variance per channel.
  void initialize(const Tensor& x);

  // Uninitialized layers act as the identity going forward; inverting one is
  // a StateError.
  LayerOutput apply(Tape& tape, Var x, Direction dir) const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor log_scale;
  Tensor bias;
  bool initialized = false;
};

// Forward on an uninitialized layer initializes it from x first.
LayerOutput actnorm_apply(ActNorm& layer, Tape& tape, Var x, Direction dir);

// Learned channel mixing with a C x C matrix applied at every pixel.
class InvConv1x1 {
 public:
  static constexpr double kMinAbsDet = 1e-12;

  InvConv1x1() = default;
  explicit InvConv1x1(Tensor weight);
  static InvConv1x1 random_rotation(int channels, Rng& rng);

  int channels() const { return weight.dim(0); }
  double abs_det() const;
  LayerOutput apply(Tape& tape, Var x, Direction dir) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor weight;
};

// Affine coupling: the first half of the channels conditions a scale and
// translation of the second half. The conditioner is
//   3x3 conv -> relu -> blocks x [3x3 conv -> relu -> 1x1 conv -> relu, + skip]
//   -> zero-initialized 3x3 conv producing (raw scale, translation).
class AffineCoupling {
 public:
  AffineCoupling() = default;
  AffineCoupling(int channels, int hidden, int blocks, Rng& rng);

  int channels() const { return channels_; }

  // Returns (raw log-scale, translation) for the conditioning half.
  std::pair<Var, Var> conditioner(Tape& tape, Var x1) const;
  LayerOutput apply(Tape& tape, Var x, Direction dir) const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void randomize(Rng& rng, double scale);

  Conv2dParams input;
  std::vector<std::pair<Conv2dParams, Conv2dParams>> blocks;
  Conv2dParams output;

 private:
  int channels_ = 0;
};

enum class EncoderKind { single_conv, deep };

// Predicts the mean and log std of factored-out latents from the kept half.
// `single_conv` is one zero-initialized 3x3 conv; `deep` is dropout followed
// by five convs, the last zero-initialized.
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(EncoderKind kind, int in_channels, int out_channels, int hidden, double dropout,
                 Rng& rng);

  EncoderKind kind() const { return kind_; }
  std::pair<Var, Var> predict(Tape& tape, Var h, const ApplyContext& ctx) const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void randomize(Rng& rng, double scale);

  std::vector<Conv2dParams> convs;

 private:
  EncoderKind kind_ = EncoderKind::single_conv;
  int out_channels_ = 0;
  double dropout_ = 0.0;
};

struct SplitOutput {
  Var kept;      // h_next
  Var latent;    // u
  Var log_prob;  // log p(u | h_next), shape (N)
};

// Forward: kept = first half of the channels, latent = second half.
SplitOutput split_forward(const ContextEncoder& enc, Tape& tape, Var h, const ApplyContext& ctx);

// Inverse: concatenates kept with `latent`, or with the predicted mean when
// `use_mean` is set. Returns the merged tensor in `kept` and the latent used.
SplitOutput split_inverse(const ContextEncoder& enc, Tape& tape, Var kept, Var latent, bool use_mean,
                          const ApplyContext& ctx);

}  // namespace flowprior
