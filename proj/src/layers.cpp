#include "flowprior/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "flowprior/distributions.hpp"
#include "flowprior/errors.hpp"

namespace flowprior {

using namespace ops;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& v : t.data()) v = stddev * rng.normal();
}

double spatial_size(const Tensor& x) { return static_cast<double>(x.dim(2)) * x.dim(3); }

}  // namespace

// ---------------------------------------------------------------------------

Conv2dParams::Conv2dParams(int in_channels, int out_channels, int kernel_)
    : weight({out_channels, in_channels, kernel_, kernel_}, 0.0), bias({out_channels}, 0.0),
      kernel(kernel_) {}

Conv2dParams Conv2dParams::he_normal(int in_channels, int out_channels, int kernel, Rng& rng) {
  Conv2dParams p(in_channels, out_channels, kernel);
  fill_normal(p.weight, rng, std::sqrt(2.0 / (in_channels * kernel * kernel)));
  return p;
}

Var Conv2dParams::apply(Tape& tape, Var x) const {
  return conv2d(x, tape.param(weight), tape.param(bias), kernel);
}

void Conv2dParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

void Conv2dParams::randomize(Rng& rng, double scale) {
  const int fan_in = weight.dim(1) * kernel * kernel;
  fill_normal(weight, rng, scale / std::sqrt(static_cast<double>(fan_in)));
  fill_normal(bias, rng, 0.1 * scale);
}

// ---------------------------------------------------------------------------
// ActNorm

ActNorm::ActNorm(int channels) : log_scale({channels}, 0.0), bias({channels}, 0.0) {}

void ActNorm::initialize(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != channels()) {
    throw ShapeError("actnorm init: expected " + std::to_string(channels()) +
                     " channels, got " + to_string(x.shape()));
  }
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n) * static_cast<double>(hw);
  for (int k = 0; k < c; ++k) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) mean += x[(static_cast<std::size_t>(i) * c + k) * hw + j];
    mean /= count;
    double var = 0.0;
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        const double d = x[(static_cast<std::size_t>(i) * c + k) * hw + j] - mean;
        var += d * d;
      }
    var /= count;
    const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    log_scale[static_cast<std::size_t>(k)] = -std::log(sd);
    bias[static_cast<std::size_t>(k)] = -mean / sd;
  }
  initialized = true;
}

LayerOutput ActNorm::apply(Tape& tape, Var x, Direction dir) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != channels()) {
    throw ShapeError("actnorm: expected " + std::to_string(channels()) + " channels, got " +
                     to_string(xv.shape()));
  }
  Var ls = tape.param(log_scale);
  Var b = tape.param(bias);
  const double hw = spatial_size(xv);
  if (dir == Direction::forward) {
    Var y = add_channel(mul_channel(x, exp(ls)), b);
    return {y, scale(sum(ls), hw)};
  }
  if (!initialized) throw StateError("actnorm inverse called before data-dependent initialization");
  Var y = mul_channel(add_channel(x, neg(b)), exp(neg(ls)));
  return {y, scale(sum(ls), -hw)};
}

void ActNorm::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".log_scale", &log_scale});
  out.push_back({prefix + ".bias", &bias});
}

LayerOutput actnorm_apply(ActNorm& layer, Tape& tape, Var x, Direction dir) {
  if (dir == Direction::forward && !layer.initialized) layer.initialize(x.value());
  return layer.apply(tape, x, dir);
}

// ---------------------------------------------------------------------------
// InvConv1x1

InvConv1x1::InvConv1x1(Tensor w) : weight(std::move(w)) {
  if (weight.rank() != 2 || weight.dim(0) != weight.dim(1)) {
    throw ShapeError("1x1 conv weight must be square, got " + to_string(weight.shape()));
  }
}

InvConv1x1 InvConv1x1::random_rotation(int channels, Rng& rng) {
  RowMatrix g(channels, channels);
  for (int i = 0; i < channels; ++i)
    for (int j = 0; j < channels; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<RowMatrix> qr(g);
  RowMatrix q = qr.householderQ();
  Tensor w({channels, channels});
  Eigen::Map<RowMatrix>(w.data().data(), channels, channels) = q;
  return InvConv1x1(std::move(w));
}

double InvConv1x1::abs_det() const {
  const int c = channels();
  Eigen::Map<const RowMatrix> m(weight.data().data(), c, c);
  return std::abs(m.determinant());
}

LayerOutput InvConv1x1::apply(Tape& tape, Var x, Direction dir) const {
  const int c = channels();
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != c) {
    throw ShapeError("1x1 conv: expected " + std::to_string(c) + " channels, got " +
                     to_string(xv.shape()));
  }
  const double det = abs_det();
  if (!(det >= kMinAbsDet)) {
    std::ostringstream os;
    os << "1x1 conv weight is near-singular: |det W| = " << det;
    throw SingularityError(os.str());
  }
  Var w = tape.param(weight);
  const double hw = spatial_size(xv);
  Var logdet = scale(log_abs_det(w), dir == Direction::forward ? hw : -hw);
  Var mix = dir == Direction::forward ? w : mat_inverse(w);
  Var y = conv2d(x, reshape(mix, {c, c, 1, 1}), Var{}, 1);
  return {y, logdet};
}

void InvConv1x1::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight});
}

// ---------------------------------------------------------------------------
// AffineCoupling

AffineCoupling::AffineCoupling(int channels, int hidden, int num_blocks, Rng& rng)
    : channels_(channels) {
  if (channels % 2 != 0) {
    throw ShapeError("affine coupling needs an even channel count, got " + std::to_string(channels));
  }
  const int half = channels / 2;
  input = Conv2dParams::he_normal(half, hidden, 3, rng);
  for (int b = 0; b < num_blocks; ++b) {
    blocks.emplace_back(Conv2dParams::he_normal(hidden, hidden, 3, rng),
                        Conv2dParams::he_normal(hidden, hidden, 1, rng));
  }
  output = Conv2dParams(hidden, channels, 3);
}

std::pair<Var, Var> AffineCoupling::conditioner(Tape& tape, Var x1) const {
  Var h = relu(input.apply(tape, x1));
  for (const auto& [conv3, conv1] : blocks) {
    Var r = relu(conv3.apply(tape, h));
    r = relu(conv1.apply(tape, r));
    h = add(h, r);
  }
  Var out = output.apply(tape, h);
  const int half = channels_ / 2;
  return {slice_channels(out, 0, half), slice_channels(out, half, channels_)};
}

LayerOutput AffineCoupling::apply(Tape& tape, Var x, Direction dir) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) % 2 != 0) {
    throw ShapeError("affine coupling needs an even channel count, got " + to_string(xv.shape()));
  }
  if (xv.dim(1) != channels_) {
    throw ShapeError("affine coupling: expected " + std::to_string(channels_) + " channels, got " +
                     to_string(xv.shape()));
  }
  const int half = channels_ / 2;
  Var a = slice_channels(x, 0, half);
  Var b = slice_channels(x, half, channels_);
  auto [raw, shift] = conditioner(tape, a);
  if (dir == Direction::forward) {
    Var y2 = add(mul(b, exp(raw)), shift);
    return {concat_channels(a, y2), sum_per_sample(raw)};
  }
  Var x2 = mul(sub(b, shift), exp(neg(raw)));
  return {concat_channels(a, x2), neg(sum_per_sample(raw))};
}

void AffineCoupling::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  input.collect(prefix + ".input", out);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].first.collect(prefix + ".block" + std::to_string(b) + ".conv3", out);
    blocks[b].second.collect(prefix + ".block" + std::to_string(b) + ".conv1", out);
  }
  output.collect(prefix + ".output", out);
}

void AffineCoupling::randomize(Rng& rng, double scale) {
  input.randomize(rng, scale);
  for (auto& [c3, c1] : blocks) {
    c3.randomize(rng, scale);
    c1.randomize(rng, scale);
  }
  output.randomize(rng, scale);
}

// ---------------------------------------------------------------------------
// ContextEncoder and factor-out

ContextEncoder::ContextEncoder(EncoderKind kind, int in_channels, int out_channels, int hidden,
                               double dropout, Rng& rng)
    : kind_(kind), out_channels_(out_channels), dropout_(dropout) {
  if (kind == EncoderKind::single_conv) {
    convs.emplace_back(in_channels, 2 * out_channels, 3);
    return;
  }
  convs.push_back(Conv2dParams::he_normal(in_channels, hidden, 3, rng));
  convs.push_back(Conv2dParams::he_normal(hidden, hidden, 1, rng));
  convs.push_back(Conv2dParams::he_normal(hidden, hidden, 1, rng));
  convs.push_back(Conv2dParams::he_normal(hidden, hidden, 3, rng));
  convs.emplace_back(hidden, 2 * out_channels, 3);
}

std::pair<Var, Var> ContextEncoder::predict(Tape& tape, Var h, const ApplyContext& ctx) const {
  Var x = h;
  if (kind_ == EncoderKind::deep && ctx.training && dropout_ > 0.0) {
    if (!ctx.rng) throw ContractError("training-mode dropout needs an rng");
    Tensor keep(x.shape());
    for (double& k : keep.data()) k = ctx.rng->uniform() < dropout_ ? 0.0 : 1.0;
    x = dropout(x, keep, dropout_);
  }
  for (std::size_t i = 0; i < convs.size(); ++i) {
    x = convs[i].apply(tape, x);
    if (i + 1 < convs.size()) x = relu(x);
  }
  return {slice_channels(x, 0, out_channels_), slice_channels(x, out_channels_, 2 * out_channels_)};
}

void ContextEncoder::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
}

void ContextEncoder::randomize(Rng& rng, double scale) {
  for (auto& c : convs) c.randomize(rng, scale);
}

SplitOutput split_forward(const ContextEncoder& enc, Tape& tape, Var h, const ApplyContext& ctx) {
  const Tensor& hv = h.value();
  if (hv.rank() != 4 || hv.dim(1) % 2 != 0) {
    throw ShapeError("split needs an even channel count, got " + to_string(hv.shape()));
  }
  const int c = hv.dim(1);
  Var kept = slice_channels(h, 0, c / 2);
  Var latent = slice_channels(h, c / 2, c);
  auto [mean, log_std] = enc.predict(tape, kept, ctx);
  return {kept, latent, gaussian_log_prob(latent, mean, log_std)};
}

SplitOutput split_inverse(const ContextEncoder& enc, Tape& tape, Var kept, Var latent, bool use_mean,
                          const ApplyContext& ctx) {
  if (!use_mean && !latent.valid()) {
    throw ContractError("split inverse needs a latent unless mean sampling is requested");
  }
  auto [mean, log_std] = enc.predict(tape, kept, ctx);
  Var u = use_mean ? mean : latent;
  if (u.shape() != mean.shape()) {
    throw ShapeError("split inverse: latent " + to_string(u.shape()) + " does not match " +
                     to_string(mean.shape()));
  }
  return {concat_channels(kept, u), u, gaussian_log_prob(u, mean, log_std)};
}

}  // namespace flowprior
