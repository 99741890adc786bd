#include "flowprior/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "flowprior/checks.hpp"
#include "flowprior/degrade.hpp"
#include "flowprior/errors.hpp"
#include "flowprior/io.hpp"
#include "flowprior/restoration.hpp"
#include "flowprior/tiler.hpp"
#include "flowprior/toy_data.hpp"
#include "flowprior/training.hpp"

namespace flowprior {
namespace {

namespace fs = std::filesystem;

// Thrown for bad flag values that CLI11 cannot see (degradation grammar,
// schedules, incompatible sizes); mapped to the usage exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool is_pixmap(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

// A directory of pixmaps (sorted by name) or one IDX image file.
std::vector<Tensor> load_dataset(const std::string& path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && is_pixmap(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Tensor> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(read_pnm(f.string()));
    return images;
  }
  return read_idx_images(path);
}

std::vector<Tensor> fit_dataset(std::vector<Tensor> images, const ModelConfig& m) {
  for (const Tensor& img : images) {
    if (img.dim(1) != m.channels || img.dim(2) > m.height || img.dim(3) > m.width) {
      throw ValidationError("dataset image " + to_string(img.shape()) + " does not fit a " +
                            std::to_string(m.channels) + "x" + std::to_string(m.height) + "x" +
                            std::to_string(m.width) + " model");
    }
  }
  return pad_images(std::move(images), m.height, m.width);
}

void write_dataset(const std::string& path, const std::vector<Tensor>& images) {
  if (fs::path(path).extension() == ".idx") {
    write_idx_images(path, images);
    return;
  }
  fs::create_directories(path);
  const int width = std::max<int>(5, static_cast<int>(std::to_string(images.size()).size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::ostringstream name;
    name << std::setw(width) << std::setfill('0') << i << (images[i].dim(1) == 1 ? ".pgm" : ".ppm");
    write_pnm((fs::path(path) / name.str()).string(), images[i]);
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, metrics, resume;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg;
  std::optional<FlowModel> loaded;
  TrainState state;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    cfg = ck.config;
    loaded.emplace(std::move(ck.model));
    state.step = ck.step;
    if (ck.adam) state.adam = *ck.adam;
    if (!a.config.empty()) throw UsageError("--config and --resume are exclusive");
  } else {
    if (a.config.empty()) throw UsageError("train needs --config or --resume");
    cfg = load_config(a.config);
    if (a.seed) {
      cfg.seed = *a.seed;
      cfg.model.init_seed = *a.seed;
    }
    loaded.emplace(cfg.model);
  }
  FlowModel& model = *loaded;
  if (a.steps) cfg.total_steps = *a.steps;
  cfg.validate();

  const std::vector<Tensor> data = fit_dataset(load_dataset(a.data), cfg.model);
  if (data.empty()) throw ValidationError("dataset " + a.data + " is empty");

  std::ofstream metrics;
  TrainHooks hooks;
  if (!a.metrics.empty()) {
    metrics.open(a.metrics, std::ios::app);
    if (!metrics) throw ValidationError("cannot open " + a.metrics);
    if (state.step == 0) metrics << metrics_header() << '\n';
    hooks.metrics = &metrics;
  }
  MetricsRow last;
  hooks.on_step = [&](const MetricsRow& r) { last = r; };
  hooks.checkpoint = [&](const FlowModel&, const TrainState& s) {
    save_checkpoint(a.out, cfg, model, s.step, &s.adam);
  };
  train(model, data, cfg, state, hooks);
  save_checkpoint(a.out, cfg, model, state.step, &state.adam);
  out << "trained " << state.step << " steps";
  if (last.step > 0) out << ", last bits/dim " << std::setprecision(6) << last.bits_per_dim;
  out << '\n';
}

struct DegradeArgs {
  std::string in, spec, out, mask;
  std::uint64_t seed = 0;
};

void cmd_degrade(const DegradeArgs& a) {
  std::vector<Degradation> chain;
  try {
    chain = parse_degradations(a.spec);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  const Tensor image = read_pnm(a.in);
  Rng rng(a.seed);
  const Degraded d = compose(chain, image, rng);
  write_pnm(a.out, d.image);
  if (!a.mask.empty()) write_mask(a.mask, d.mask);
}

struct RestoreArgs {
  std::string ckpt, in, mask, schedule = "50,50,50+150", out, trace, init = "encode";
  double lambda = 99.0, eta = 1.0;
  std::optional<int> patch;
  int margin = 4;
  int workers = 1;
  std::uint64_t seed = 0;
};

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

void cmd_restore(const RestoreArgs& a, std::ostream& out) {
  Schedule schedule;
  try {
    schedule = Schedule::parse(a.schedule, a.eta);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const FlowModel& model = ck.model;
  if (static_cast<int>(schedule.stage_steps.size()) != model.num_levels()) {
    throw UsageError("schedule " + a.schedule + " has " + std::to_string(schedule.stage_steps.size()) +
                     " stages but the model has " + std::to_string(model.num_levels()) + " levels");
  }
  const Tensor pixels = read_pnm(a.in);
  if (pixels.dim(1) != model.config().channels) {
    throw ValidationError("image has " + std::to_string(pixels.dim(1)) + " channels, model expects " +
                          std::to_string(model.config().channels));
  }
  RestorationProblem problem;
  problem.degraded = pixels_to_model(pixels);
  problem.mask = a.mask.empty() ? Tensor(pixels.shape(), 1.0) : read_mask(a.mask, pixels.dim(1));
  if (problem.mask.shape() != pixels.shape()) throw ValidationError("mask size differs from the image");
  problem.lambda = a.lambda;
  problem.validate();

  RestoreOptions options;
  if (a.init == "base-mean") options.init = InitMode::base_mean;
  else if (a.init != "encode") throw UsageError("--init must be encode or base-mean");

  const int mh = model.config().height, mw = model.config().width;
  const bool direct = !a.patch && pixels.dim(2) == mh && pixels.dim(3) == mw;
  std::ostringstream trace;
  trace << "# schedule=" << schedule.to_string() << " lambda=" << format_number(a.lambda)
        << " eta=" << format_number(schedule.eta) << '\n';

  Tensor restored;
  if (direct) {
    const RestoreResult r = coarse_to_fine_optimize(model, problem, schedule, options);
    if (r.aborted) out << "warning: optimization stopped early: " << r.abort_reason << '\n';
    restored = r.restored;
    trace << "tile," << trace_header() << '\n';
    for (const TraceRow& row : r.trace) trace << "0," << format_trace(row) << '\n';
  } else {
    if (mh != mw) throw UsageError("tiled restoration needs a square model");
    const int patch = a.patch.value_or(mh);
    if (patch != mh) {
      throw UsageError("--patch " + std::to_string(patch) + " differs from the model size " + std::to_string(mh));
    }
    if (a.margin < 0 || 2 * a.margin >= patch) throw UsageError("--margin must be in [0, patch/2)");
    const TileGrid grid = plan(pixels.dim(2), pixels.dim(3), patch, a.margin);
    std::vector<std::vector<TraceRow>> traces(grid.tiles.size());
    const TileRestorer restorer = [&](const Tensor& tile, const Tensor& mask, std::size_t index) {
      RestorationProblem p{tile, mask, problem.lambda};
      RestoreResult r = coarse_to_fine_optimize(model, p, schedule, options);
      traces[index] = std::move(r.trace);
      if (r.aborted) throw NumericalError(r.abort_reason);
      return r.restored;
    };
    const TiledResult r = restore_tiled(problem.degraded, problem.mask, grid, restorer, a.workers);
    for (const TileFailure& f : r.failures)
      out << "warning: tile " << f.tile << " kept degraded pixels: " << f.message << '\n';
    restored = r.image;
    trace << "tile," << trace_header() << '\n';
    for (std::size_t t = 0; t < traces.size(); ++t)
      for (const TraceRow& row : traces[t]) trace << t << ',' << format_trace(row) << '\n';
  }
  write_pnm(a.out, model_to_pixels(restored));
  if (!a.trace.empty()) {
    std::ofstream f(a.trace);
    if (!f) throw ValidationError("cannot open " + a.trace);
    f << trace.str();
  }
}

void cmd_eval_psnr(const std::string& a, const std::string& b, std::ostream& out) {
  const double v = psnr_capped(read_pnm(a), read_pnm(b));
  out << std::fixed << std::setprecision(2) << v << '\n';
}

void cmd_sample(const std::string& ckpt, std::uint64_t seed, const std::string& path) {
  const Checkpoint ck = load_checkpoint(ckpt);
  Rng rng(seed);
  write_pnm(path, model_to_pixels(ck.model.sample(rng, 1)));
}

int cmd_sanity(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const checks::CheckResult& r : checks::run_sanity(seed)) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

struct GenArgs {
  std::string kind = "sprites", out;
  int n = 1000, size = 32, channels = 1;
  double noise = SpriteSpec{}.noise;
  std::uint64_t seed = 0;
};

void cmd_gen_data(const GenArgs& a) {
  if (a.n < 0) throw UsageError("--n must be non-negative");
  if (a.kind == "sprites") {
    SpriteSpec spec;
    spec.size = a.size;
    spec.channels = a.channels;
    spec.seed = a.seed;
    spec.noise = a.noise;
    write_dataset(a.out, generate_sprites(spec, a.n));
  } else if (a.kind == "digits") {
    write_dataset(a.out, generate_digits(a.n, a.seed));
  } else {
    throw UsageError("--kind must be sprites or digits");
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flow-prior image restoration"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a flow on a dataset");
  train_cmd->add_option("--config", ta.config, "Config file (key = value lines)");
  train_cmd->add_option("--data", ta.data, "IDX image file or directory of pixmaps")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint to write")->required();
  train_cmd->add_option("--metrics", ta.metrics, "Per-step metrics CSV (appended)");
  train_cmd->add_option("--resume", ta.resume, "Continue from this checkpoint");
  train_cmd->add_option("--seed", ta.seed, "Overrides seed and init_seed");
  train_cmd->add_option("--steps", ta.steps, "Overrides total_steps");

  DegradeArgs da;
  CLI::App* degrade_cmd = app.add_subcommand("degrade", "Apply a degradation chain");
  degrade_cmd->add_option("--in", da.in)->required();
  degrade_cmd->add_option("--degrade", da.spec, "e.g. gauss:30 or mask:6x10+dct:20")->required();
  degrade_cmd->add_option("--seed", da.seed);
  degrade_cmd->add_option("--out", da.out)->required();
  degrade_cmd->add_option("--mask", da.mask, "Write the validity mask here");

  RestoreArgs ra;
  CLI::App* restore_cmd = app.add_subcommand("restore", "MAP restoration in latent space");
  restore_cmd->add_option("--ckpt", ra.ckpt)->required();
  restore_cmd->add_option("--in", ra.in)->required();
  restore_cmd->add_option("--mask", ra.mask);
  restore_cmd->add_option("--lambda", ra.lambda)->capture_default_str();
  restore_cmd->add_option("--schedule", ra.schedule)->capture_default_str();
  restore_cmd->add_option("--eta", ra.eta)->capture_default_str();
  restore_cmd->add_option("--patch", ra.patch, "Tile size (defaults to the model size)");
  restore_cmd->add_option("--margin", ra.margin)->capture_default_str();
  restore_cmd->add_option("--workers", ra.workers)->capture_default_str()->check(CLI::PositiveNumber);
  restore_cmd->add_option("--init", ra.init, "encode or base-mean")->capture_default_str();
  restore_cmd->add_option("--seed", ra.seed, "Accepted for uniformity; restoration draws nothing");
  restore_cmd->add_option("--out", ra.out)->required();
  restore_cmd->add_option("--trace", ra.trace, "Objective trace CSV");

  std::string psnr_a, psnr_b;
  CLI::App* psnr_cmd = app.add_subcommand("eval-psnr", "PSNR between two 8-bit images");
  psnr_cmd->add_option("a", psnr_a)->required();
  psnr_cmd->add_option("b", psnr_b)->required();

  std::string sample_ckpt, sample_out;
  std::uint64_t sample_seed = 0;
  CLI::App* sample_cmd = app.add_subcommand("sample", "Draw one image from a trained flow");
  sample_cmd->add_option("--ckpt", sample_ckpt)->required();
  sample_cmd->add_option("--seed", sample_seed);
  sample_cmd->add_option("--out", sample_out)->required();

  std::uint64_t sanity_seed = 0;
  CLI::App* sanity_cmd = app.add_subcommand("sanity", "Run the invariant suite");
  sanity_cmd->add_option("--seed", sanity_seed);

  GenArgs ga;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen_cmd->add_option("--kind", ga.kind, "sprites or digits")->capture_default_str();
  gen_cmd->add_option("--n", ga.n)->capture_default_str();
  gen_cmd->add_option("--size", ga.size, "Sprite size")->capture_default_str();
  gen_cmd->add_option("--channels", ga.channels, "Sprite channels")->capture_default_str();
  gen_cmd->add_option("--noise", ga.noise, "Sprite pixel noise sd, 0-255 scale")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", ga.seed);
  gen_cmd->add_option("--out", ga.out, "Directory, or a .idx file for grayscale")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*train_cmd) cmd_train(ta, out);
    else if (*degrade_cmd) cmd_degrade(da);
    else if (*restore_cmd) cmd_restore(ra, out);
    else if (*psnr_cmd) cmd_eval_psnr(psnr_a, psnr_b, out);
    else if (*sample_cmd) cmd_sample(sample_ckpt, sample_seed, sample_out);
    else if (*sanity_cmd) return cmd_sanity(sanity_seed, out);
    else if (*gen_cmd) cmd_gen_data(ga);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace flowprior
