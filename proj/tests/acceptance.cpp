// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,5] [--work DIR]
//
// Exit status is 0 only if every selected criterion passed.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowprior/checks.hpp"
#include "flowprior/cli.hpp"
#include "flowprior/degrade.hpp"
#include "flowprior/distributions.hpp"
#include "flowprior/io.hpp"
#include "flowprior/restoration.hpp"
#include "flowprior/tiler.hpp"
#include "flowprior/toy_data.hpp"
#include "flowprior/training.hpp"

using namespace flowprior;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances and budgets

constexpr int kInvertPairs = 100;
constexpr double kInvertTol = 1e-8;
constexpr double kInvertBudgetS = 60.0;

constexpr double kLogDetTol = 1e-6;
constexpr double kLogDetBudgetS = 120.0;

constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-4;

constexpr double kGaussTol = 1e-9;

constexpr long kToySteps = 2000;
constexpr int kToyImages = 1000;
constexpr double kToyDrop = 0.20;         // final bits/dim at least 20% under the early median
constexpr int kToyEarlyWindow = 50;
constexpr double kToyPinnedBpd = 3.2989;  // regression pin, see below
constexpr double kToyPinTol = 0.05;
constexpr double kToyBudgetS = 15.0 * 60.0;

constexpr long kSpriteSteps = 5000;
constexpr int kSpriteImages = 1000;
constexpr int kRestoreImages = 50;
constexpr double kNoiseSigma = 30.0;
constexpr double kPsnrGain = 2.0;
constexpr double kGainFraction = 0.80;
constexpr double kRestoreBudgetS = 3600.0;
constexpr double kAblationSlack = 0.5;
// Report-only: the same restoration at a small learning rate. Never gates a result.
constexpr double kDiagnosticEta = 0.01;

constexpr double kPsnrDiff10 = 28.13;
constexpr double kPsnrTol = 0.01;

// ---------------------------------------------------------------------------

struct Outcome {
  bool passed = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

ModelConfig tiny(int channels, int size, int levels, int steps) {
  ModelConfig c;
  c.channels = channels;
  c.height = c.width = size;
  c.levels = levels;
  c.steps = steps;
  c.hidden = 4;
  c.blocks = 1;
  c.encoder_hidden = 4;
  c.learn_base_std = true;
  return c;
}

// Unit-floored relative error: |a - b| / max(1, |b|).
double floored_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

// ---------------------------------------------------------------------------
// 1. Invertibility

Outcome invertibility() {
  Stopwatch clock;
  Rng rng(101);
  double worst = 0.0;
  const int ls[] = {1, 2, 3};
  const int ks[] = {1, 2, 4};
  for (int i = 0; i < kInvertPairs; ++i) {
    const int levels = ls[i % 3];
    const int steps = ks[(i / 3) % 3];
    const int channels = (i % 2) ? 3 : 1;
    const int size = (i % 4 < 2) ? 8 : 16;
    ModelConfig c = tiny(channels, size, levels, steps);
    c.encoder = (i % 5 == 0) ? EncoderKind::deep : EncoderKind::single_conv;
    c.hidden = 8;
    const FlowModel m = checks::random_model(c, 1000 + static_cast<std::uint64_t>(i), 0.3);
    const Tensor x = rng.uniform_tensor({2, channels, size, size}, 0.0, 1.0);
    worst = std::max(worst, max_abs_diff(m.inverse(m.forward(x).first), x));
  }
  const double t = clock.seconds();
  return {worst < kInvertTol && t < kInvertBudgetS,
          std::to_string(kInvertPairs) + " pairs, max |T^-1(T(x)) - x| = " + sci(worst) + " (< " + sci(kInvertTol) +
              "), " + fixed(t, 1) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Log-determinant oracle

Outcome logdet_oracle() {
  Stopwatch clock;
  Rng rng(202);
  std::vector<std::pair<std::string, double>> errors;
  auto check = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f, double analytic,
                   const Tensor& x) {
    const double numeric = checks::log_abs_det(checks::dense_jacobian(f, x, kFdStep));
    errors.emplace_back(name, floored_error(analytic, numeric));
  };
  auto layer_check = [&](const std::string& name, const auto& layer, const Tensor& x) {
    auto run = [&](const Tensor& v) {
      Tape t;
      return layer.apply(t, t.constant(v), Direction::forward).y.value();
    };
    Tape t;
    check(name, run, layer.apply(t, t.constant(x), Direction::forward).logdet.value().item(), x);
  };

  ActNorm an(3);
  an.log_scale = rng.normal_tensor({3});
  an.bias = rng.normal_tensor({3});
  an.initialized = true;
  layer_check("actnorm", an, rng.normal_tensor({1, 3, 4, 4}));

  const InvConv1x1 ic(rng.normal_tensor({4, 4}));
  layer_check("invconv", ic, rng.normal_tensor({1, 4, 2, 3}));

  AffineCoupling cp(4, 6, 1, rng);
  cp.randomize(rng, 0.4);
  layer_check("coupling", cp, rng.normal_tensor({1, 4, 3, 3}));

  check("squeeze", [](const Tensor& v) { return squeeze2(v); }, 0.0, rng.normal_tensor({1, 2, 4, 4}));

  for (int channels : {1, 3}) {
    const FlowModel m = checks::random_model(tiny(channels, 4, 1, 2), 203 + static_cast<std::uint64_t>(channels));
    const Tensor x = rng.uniform_tensor({1, channels, 4, 4}, 0.0, 1.0);
    const auto [stack, log_prob] = m.forward(x);
    const double analytic = log_prob.item() - DiagGaussian(m.base_mean, m.base_log_std).log_prob(stack[0]);
    check("model C=" + std::to_string(channels), [&](const Tensor& v) { return m.forward(v).first[0]; }, analytic, x);
  }

  double worst = 0.0;
  std::string parts;
  for (const auto& [name, err] : errors) {
    worst = std::max(worst, err);
    parts += (parts.empty() ? "" : ", ") + name + " " + sci(err);
  }
  const double t = clock.seconds();
  return {worst < kLogDetTol && t < kLogDetBudgetS,
          "max unit-floored rel. err " + sci(worst) + " (< " + sci(kLogDetTol) + "; " + parts + "), " + fixed(t, 1) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Gradient suite

Outcome gradient_suite() {
  using LossFn = std::function<Var(Tape&, Var)>;
  std::map<std::string, double> worst;
  int checked_params = 0;
  for (int levels : {1, 2}) {
    ModelConfig c = tiny(1, 4, levels, 1);
    FlowModel m = checks::random_model(c, 300 + static_cast<std::uint64_t>(levels));
    Rng rng(310 + static_cast<std::uint64_t>(levels));
    const Tensor x = rng.uniform_tensor({2, 1, 4, 4}, 0.05, 0.95);
    const LatentStack xi = sample_latent_noise(m, 2, 0.5, rng);
    const Tensor eta = sample_image_noise(x.shape(), 10.0, rng);
    const std::vector<std::pair<std::string, LossFn>> losses = {
        {"L_nll", [&](Tape& t, Var v) { return loss_nll(m, t, v); }},
        {"L_ln", [&](Tape& t, Var v) { return loss_latent_noise(m, t, v, xi); }},
        {"L_ae", [&](Tape& t, Var v) { return loss_autoencoder(m, t, v); }},
        {"L_in", [&](Tape& t, Var v) { return loss_image_noise(m, t, v, eta); }},
    };
    for (const auto& [name, fn] : losses) {
      // L_ae is identically zero for a single level; its gradient check is vacuous there.
      if (name == "L_ae" && levels == 1) continue;
      double& w = worst[name];
      w = std::max(w, grad_check(fn, x, kFdStep));
      for (const ParamRef& p : m.parameters()) {
        w = std::max(w, checks::param_grad_check(*p.value, [&](Tape& t) { return fn(t, t.constant(x)); }, kFdStep));
        ++checked_params;
      }
    }

    // MAP objective, gradient per latent level.
    Tensor mask(Shape{1, 1, 4, 4}, 1.0);
    mask[5] = 0.0;
    const RestorationProblem problem{rng.uniform_tensor({1, 1, 4, 4}, 0.0, 1.0), mask, 7.0};
    const LatentStack z = m.forward(rng.uniform_tensor({1, 1, 4, 4}, 0.0, 1.0)).first;
    double& w = worst["MAP"];
    for (std::size_t level = 0; level < z.size(); ++level) {
      w = std::max(w, grad_check(
                          [&](Tape& t, Var v) {
                            std::vector<Var> zs;
                            for (std::size_t i = 0; i < z.size(); ++i) zs.push_back(i == level ? v : t.constant(z[i]));
                            return map_objective(m, t, problem, zs).total;
                          },
                          z[level], kFdStep));
    }
  }
  bool ok = true;
  std::string parts;
  for (const auto& [name, err] : worst) {
    ok = ok && err < kGradTol;
    parts += (parts.empty() ? "" : ", ") + name + " " + sci(err);
  }
  return {ok, parts + " (< " + sci(kGradTol) + ", step " + sci(kFdStep) + ", " + std::to_string(checked_params) +
                  " parameter tensors)"};
}

// ---------------------------------------------------------------------------
// 4. Gaussian reduction

Outcome gaussian_reduction() {
  double worst = 0.0;
  Rng rng(404);
  for (int levels : {1, 2, 3}) {
    ModelConfig c = tiny(levels == 2 ? 3 : 1, 8, levels, 2);
    FlowModel m(c);  // zero-init couplings and encoders, uninitialized actnorm
    for (FlowLevel& level : m.levels)
      for (FlowStep& s : level.steps) {
        const int ch = s.invconv.channels();
        Tensor eye({ch, ch}, 0.0);
        for (int i = 0; i < ch; ++i) eye[static_cast<std::size_t>(i * ch + i)] = 1.0;
        s.invconv.weight = eye;
      }
    const Tensor x = rng.normal_tensor({1, c.channels, 8, 8});
    // Closed form on the squeezed input; squeezing only permutes entries.
    Tensor squeezed = x;
    for (int l = 0; l < levels; ++l) squeezed = squeeze2(squeezed);
    const double expect = checks::standard_normal_nll(squeezed);
    worst = std::max(worst, std::abs(-m.forward(x).second.item() - expect));
  }
  return {worst < kGaussTol, "max |NLL - Gaussian NLL| = " + sci(worst) + " (< " + sci(kGaussTol) + ")"};
}

// ---------------------------------------------------------------------------
// 5. Toy training

Outcome toy_training() {
  Stopwatch clock;
  const std::vector<Tensor> data = pad_images(generate_digits(kToyImages, 505), 32, 32);
  TrainConfig cfg = TrainConfig::mnist();
  cfg.model.levels = 1;
  cfg.model.steps = 4;
  cfg.model.hidden = 32;
  cfg.batch_size = 50;
  cfg.learning_rate = 1e-4;
  cfg.total_steps = kToySteps;
  cfg.seed = 5;
  cfg.model.init_seed = 5;
  FlowModel model(cfg.model);
  TrainState state;
  std::vector<double> bpd;
  TrainHooks hooks;
  hooks.on_step = [&](const MetricsRow& r) { bpd.push_back(r.bits_per_dim); };
  train(model, data, cfg, state, hooks);
  const double t = clock.seconds();

  const double early = median(std::vector<double>(bpd.begin(), bpd.begin() + kToyEarlyWindow));
  const double final_bpd = bpd.back();
  const bool dropped = final_bpd <= (1.0 - kToyDrop) * early;
  const bool pinned = kToyPinnedBpd <= 0.0 || std::abs(final_bpd - kToyPinnedBpd) <= kToyPinTol * kToyPinnedBpd;
  std::string detail = "bits/dim median(steps 1-50) " + fixed(early, 4) + " -> step " + std::to_string(kToySteps) +
                       " " + fixed(final_bpd, 4) + " (need <= " + fixed((1.0 - kToyDrop) * early, 4) + ")";
  detail += kToyPinnedBpd > 0.0 ? ", pin " + fixed(kToyPinnedBpd, 4) + " +-5%" : ", no pin recorded";
  detail += ", " + fixed(t / 60.0, 1) + " min";
  return {dropped && pinned && t < kToyBudgetS, detail};
}

// ---------------------------------------------------------------------------
// 6 and 7. Toy restoration and loss ablation

struct SpriteRun {
  std::vector<double> degraded_psnr, restored_psnr, diagnostic_psnr;
  double train_s = 0.0, restore_s = 0.0;
  double median_restored() const { return median(restored_psnr); }
};

struct SpriteBench {
  std::vector<Tensor> train_set;
  std::vector<Tensor> clean, noisy;  // held-out, 8-bit
};

SpriteBench sprite_bench() {
  SpriteSpec spec;
  spec.seed = 606;
  DataSplit split = split_dataset(generate_sprites(spec, kSpriteImages), 0.9);
  SpriteBench b;
  b.train_set = std::move(split.train);
  const Degradation noise = Degradation::gaussian(kNoiseSigma);
  for (int i = 0; i < kRestoreImages; ++i) {
    const Tensor& img = split.test[static_cast<std::size_t>(i)];
    Rng rng = Rng(607).derive(static_cast<std::uint64_t>(i));
    b.clean.push_back(img);
    b.noisy.push_back(apply(noise, img, rng).image);
  }
  return b;
}

SpriteRun sprite_run(const SpriteBench& bench, double beta_ln, double beta_ae, const std::string& tag) {
  TrainConfig cfg = TrainConfig::sprites();
  cfg.model.channels = 1;
  cfg.model.height = cfg.model.width = 32;
  cfg.model.levels = 3;
  cfg.model.steps = 2;
  cfg.model.hidden = 32;
  cfg.total_steps = kSpriteSteps;
  cfg.beta_ln = beta_ln;
  cfg.beta_ae = beta_ae;
  cfg.seed = 61;
  cfg.model.init_seed = 61;

  SpriteRun run;
  Stopwatch train_clock;
  FlowModel model(cfg.model);
  TrainState state;
  train(model, bench.train_set, cfg, state);
  run.train_s = train_clock.seconds();

  Stopwatch restore_clock;
  const Schedule schedule = Schedule::sprites();
  for (std::size_t i = 0; i < bench.noisy.size(); ++i) {
    const RestorationProblem p{pixels_to_model(bench.noisy[i]), Tensor(bench.noisy[i].shape(), 1.0), 99.0};
    const RestoreResult r = coarse_to_fine_optimize(model, p, schedule);
    const Tensor restored = model_to_pixels(r.restored);
    run.degraded_psnr.push_back(psnr_capped(bench.clean[i], bench.noisy[i]));
    run.restored_psnr.push_back(psnr_capped(bench.clean[i], restored));
  }
  run.restore_s = restore_clock.seconds();
  Schedule slow = schedule;
  slow.eta = kDiagnosticEta;
  int slow_gained = 0;
  for (std::size_t i = 0; i < bench.noisy.size(); ++i) {
    const RestorationProblem p{pixels_to_model(bench.noisy[i]), Tensor(bench.noisy[i].shape(), 1.0), 99.0};
    run.diagnostic_psnr.push_back(psnr_capped(bench.clean[i], model_to_pixels(coarse_to_fine_optimize(model, p, slow).restored)));
    if (run.diagnostic_psnr.back() >= run.degraded_psnr[i] + kPsnrGain) ++slow_gained;
  }
  std::cout << "  [" << tag << "] beta_ln " << beta_ln << " beta_ae " << beta_ae << ": median PSNR degraded "
            << fixed(median(run.degraded_psnr)) << " restored " << fixed(run.median_restored()) << " dB; train "
            << fixed(run.train_s / 60.0, 1) << " min, restore " << fixed(run.restore_s, 0) << " s" << std::endl;
  std::cout << "  [" << tag << "] diagnostic only, eta " << kDiagnosticEta << ": median restored "
            << fixed(median(run.diagnostic_psnr)) << " dB, " << slow_gained << "/" << run.diagnostic_psnr.size()
            << " gain >= " << fixed(kPsnrGain, 1) << " dB" << std::endl;
  return run;
}

Outcome toy_restoration(const SpriteRun& c) {
  int gained = 0;
  for (std::size_t i = 0; i < c.restored_psnr.size(); ++i)
    if (c.restored_psnr[i] >= c.degraded_psnr[i] + kPsnrGain) ++gained;
  const double fraction = static_cast<double>(gained) / static_cast<double>(c.restored_psnr.size());
  const double t = c.train_s + c.restore_s;
  return {fraction >= kGainFraction && t < kRestoreBudgetS,
          std::to_string(gained) + "/" + std::to_string(c.restored_psnr.size()) + " images gain >= " +
              fixed(kPsnrGain, 1) + " dB (need " + fixed(100.0 * kGainFraction, 0) + "%), median " +
              fixed(median(c.degraded_psnr)) + " -> " + fixed(c.median_restored()) + " dB, " + fixed(t / 60.0, 1) +
              " min"};
}

Outcome loss_ablation(const SpriteRun& ln_only, const SpriteRun& plain, const SpriteRun& ln_ae) {
  const double a = ln_only.median_restored(), b = plain.median_restored(), c = ln_ae.median_restored();
  return {a > b && c >= a - kAblationSlack,
          "median PSNR beta_ln=100: " + fixed(a) + ", beta_ln=0: " + fixed(b) + ", beta_ln=100 beta_ae=1: " + fixed(c) +
              " dB"};
}

// ---------------------------------------------------------------------------
// 8. Coarse-to-fine gating

Outcome gating() {
  long steps_seen = 0, violations = 0, dead_active = 0;
  for (std::uint64_t seed : {801u, 802u}) {
    const FlowModel m = checks::random_model(tiny(1, 16, 3, 2), seed, 0.2);
    Rng rng(seed + 10);
    const RestorationProblem p{rng.uniform_tensor({1, 1, 16, 16}, 0.1, 0.9), Tensor(Shape{1, 1, 16, 16}, 1.0), 99.0};
    RestoreOptions opts;
    opts.observer = [&](long, int stage, int active, const std::vector<Tensor>& grads) {
      ++steps_seen;
      for (std::size_t l = 0; l < grads.size(); ++l) {
        const bool any = std::any_of(grads[l].data().begin(), grads[l].data().end(), [](double g) { return g != 0.0; });
        if (static_cast<int>(l) >= active && any) ++violations;
        if (static_cast<int>(l) < active && !any) ++dead_active;
      }
      if (stage < 3 && active != stage + 1) ++violations;
    };
    coarse_to_fine_optimize(m, p, Schedule::parse("10,10,10+10", 0.01), opts);
  }
  return {violations == 0 && dead_active == 0 && steps_seen == 80,
          std::to_string(steps_seen) + " steps observed, " + std::to_string(violations) +
              " nonzero gradients on inactive levels, " + std::to_string(dead_active) + " all-zero active levels"};
}

// ---------------------------------------------------------------------------
// 9. Tiler exactness

Outcome tiler_exactness() {
  long plans = 0, bad_plans = 0;
  std::vector<int> cover;
  for (const auto [patch, margin] : {std::pair{64, 4}, std::pair{32, 4}}) {
    for (int h = 16; h <= 200; ++h)
      for (int w = 16; w <= 200; ++w) {
        const TileGrid g = plan(h, w, patch, margin);
        ++plans;
        cover.assign(static_cast<std::size_t>(h) * w, 0);
        bool ok = true;
        for (const Tile& t : g.tiles) {
          ok = ok && t.src.h == patch && t.src.w == patch;
          ok = ok && t.core.y >= t.src.y && t.core.x >= t.src.x && t.core.y + t.core.h <= t.src.y + t.src.h &&
               t.core.x + t.core.w <= t.src.x + t.src.w;
          ok = ok && t.core.y >= 0 && t.core.x >= 0 && t.core.y + t.core.h <= h && t.core.x + t.core.w <= w;
          if (!ok) break;
          for (int y = t.core.y; y < t.core.y + t.core.h; ++y)
            for (int x = t.core.x; x < t.core.x + t.core.w; ++x) ++cover[static_cast<std::size_t>(y) * w + x];
        }
        ok = ok && std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; });
        if (!ok) ++bad_plans;
      }
  }

  // Identity-like restorer: a pointwise map, so tiling must not change a bit.
  long images = 0, mismatches = 0;
  const auto pointwise = [](const Tensor& patch, const Tensor&, std::size_t) {
    Tensor out = patch;
    for (double& v : out.data()) v = std::sqrt(v) * 0.75 + 0.125;
    return out;
  };
  std::vector<int> sizes;
  for (int s = 16; s <= 200; s += 9) sizes.push_back(s);
  for (int s : {63, 64, 65, 120, 199, 200}) sizes.push_back(s);
  Rng rng(909);
  for (int h : sizes)
    for (int w : sizes) {
      const Tensor img = rng.uniform_tensor({1, 2, h, w}, 0.0, 1.0);
      const Tensor mask(img.shape(), 1.0);
      const TiledResult r = restore_tiled(img, mask, plan(h, w, 64, 4), pointwise, 1 + (h + w) % 3);
      const Tensor direct = pointwise(img, mask, 0);
      ++images;
      if (!(r.image == direct) || !r.failures.empty()) ++mismatches;
    }
  return {bad_plans == 0 && mismatches == 0,
          std::to_string(plans) + " plans (sizes 16..200, patch 64/4 and 32/4), " + std::to_string(bad_plans) +
              " not partitions; " + std::to_string(images) + " pass-through images, " + std::to_string(mismatches) +
              " differ"};
}

// ---------------------------------------------------------------------------
// 10. PSNR, checkpoint, IDX

Outcome units(const fs::path& work) {
  std::vector<std::string> failures;
  const double p = psnr(Tensor({1, 1, 16, 16}, 100.0), Tensor({1, 1, 16, 16}, 110.0));
  if (std::abs(p - kPsnrDiff10) > kPsnrTol) failures.push_back("psnr " + fixed(p, 4));

  TrainConfig cfg;
  cfg.model = tiny(3, 8, 2, 2);
  FlowModel m = checks::random_model(cfg.model, 1010);
  AdamState adam;
  adam.step = 3;
  Rng rng(1011);
  for (const ParamRef& ref : m.parameters()) {
    adam.first.push_back(rng.normal_tensor(ref.value->shape()));
    adam.second.push_back(rng.uniform_tensor(ref.value->shape(), 0.0, 1.0));
  }
  const std::string ck = (work / "units.ckpt").string();
  save_checkpoint(ck, cfg, m, 17, &adam);
  Checkpoint back = load_checkpoint(ck);
  bool same = back.step == 17 && back.adam && back.adam->first == adam.first && back.adam->second == adam.second;
  const auto pa = m.parameters(), pb = back.model.parameters();
  same = same && pa.size() == pb.size();
  for (std::size_t i = 0; same && i < pa.size(); ++i) {
    same = pa[i].name == pb[i].name && pa[i].value->shape() == pb[i].value->shape() &&
           std::equal(pa[i].value->data().begin(), pa[i].value->data().end(), pb[i].value->data().begin(),
                      [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; });
  }
  if (!same) failures.push_back("checkpoint round trip");

  const std::vector<std::uint8_t> idx = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                         0, 1, 2, 127, 128, 255, 9, 8, 7, 6, 5, 4};
  const auto images = parse_idx_images(idx);
  const bool idx_ok = images.size() == 2 && images[0].shape() == Shape{1, 1, 2, 3} &&
                      images[0].values() == std::vector<double>{0, 1, 2, 127, 128, 255} &&
                      images[1].values() == std::vector<double>{9, 8, 7, 6, 5, 4};
  if (!idx_ok) failures.push_back("idx fixture");

  std::string detail = "psnr(diff 10) = " + fixed(p, 4) + " dB; checkpoint " + (same ? "bit-exact" : "MISMATCH") +
                       "; idx fixture " + (idx_ok ? "exact" : "WRONG");
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------------------
// 11. Determinism through the CLI

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"flowprior"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cout << "  cli error: " << err.str();
  return code;
}

Outcome determinism(const fs::path& work) {
  const fs::path base = work / "determinism";
  fs::create_directories(base);
  const std::string data = (base / "data").string();
  if (cli({"gen-data", "--n", "24", "--size", "16", "--seed", "11", "--out", data}) != 0) return {false, "gen-data"};
  std::ofstream((base / "c.cfg").string()) << "preset = sprites\nchannels = 1\nheight = 16\nwidth = 16\nlevels = 2\n"
                                              "steps = 2\nhidden = 8\nbatch_size = 4\ntotal_steps = 6\n";
  std::vector<std::string> differing;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = base / ("run" + std::to_string(run));
    fs::create_directories(dir);
    auto f = [&](const char* name) { return (dir / name).string(); };
    bool ok = cli({"train", "--config", (base / "c.cfg").string(), "--data", data, "--seed", "12", "--out",
                   f("m.ckpt"), "--metrics", f("metrics.csv")}) == 0;
    ok = ok && cli({"degrade", "--in", data + "/00000.pgm", "--degrade", "gauss:30+mask:2x3", "--seed", "13", "--out",
                    f("d.pgm"), "--mask", f("m.pgm")}) == 0;
    ok = ok && cli({"restore", "--ckpt", f("m.ckpt"), "--in", f("d.pgm"), "--mask", f("m.pgm"), "--schedule",
                    "5,5+5", "--out", f("r.pgm"), "--trace", f("t.csv")}) == 0;
    if (!ok) return {false, "cli run " + std::to_string(run) + " failed"};
  }
  int compared = 0;
  for (const char* name : {"m.ckpt", "metrics.csv", "d.pgm", "m.pgm", "r.pgm", "t.csv"}) {
    ++compared;
    if (read_file((base / "run0" / name).string()) != read_file((base / "run1" / name).string()))
      differing.push_back(name);
  }
  std::string detail = std::to_string(compared) + " output files compared";
  for (const auto& d : differing) detail += ", " + d + " differs";
  return {differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "flowprior_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.insert(i);
  fs::create_directories(work);

  std::map<int, Outcome> results;
  auto run = [&](int id, const std::function<Outcome()>& f) {
    if (!selected.count(id)) return;
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << std::setw(2) << id << ": " << (results[id].passed ? "PASS" : "FAIL") << "  "
              << results[id].detail << std::endl;
  };

  run(1, invertibility);
  run(2, logdet_oracle);
  run(3, gradient_suite);
  run(4, gaussian_reduction);
  run(5, toy_training);
  if (selected.count(6) || selected.count(7)) {
    try {
      const SpriteBench bench = sprite_bench();
      const SpriteRun c = sprite_run(bench, 100.0, 1.0, "C");
      run(6, [&] { return toy_restoration(c); });
      if (selected.count(7)) {
        const SpriteRun a = sprite_run(bench, 100.0, 0.0, "A");
        const SpriteRun b = sprite_run(bench, 0.0, 0.0, "B");
        run(7, [&] { return loss_ablation(a, b, c); });
      }
    } catch (const std::exception& e) {
      for (int id : {6, 7})
        if (selected.count(id)) run(id, [&] { return Outcome{false, std::string("exception: ") + e.what()}; });
    }
  }
  run(8, gating);
  run(9, tiler_exactness);
  run(10, [&] { return units(work); });
  run(11, [&] { return determinism(work); });

  const bool all = std::all_of(results.begin(), results.end(), [](const auto& kv) { return kv.second.passed; });
  std::cout << (all ? "all selected criteria passed" : "some criteria FAILED") << std::endl;
  return all ? 0 : 1;
}
