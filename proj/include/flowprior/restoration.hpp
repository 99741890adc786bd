#pragma once

// MAP restoration in latent space: minimize
//   lambda * || m * (x_hat - T(u)) ||_2 - log p(T(u))
// over the latent stack, deepest level first.

#include <functional>
#include <string>
#include <vector>

#include "flowprior/autodiff.hpp"
#include "flowprior/model.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

struct RestorationProblem {
  Tensor degraded;  // x_hat in model range, (1, C, H, W)
  Tensor mask;      // 1 = valid pixel; same shape
  double lambda = 99.0;

  void validate() const;
};

// Pixels (0-255) -> model range: centre of the dequantization bin.
Tensor pixels_to_model(const Tensor& pixels);
// Model range -> integer pixels, rounded and clamped.
Tensor model_to_pixels(const Tensor& x);

struct Schedule {
  std::vector<int> stage_steps;  // one entry per level, deepest first
  int final_steps = 0;           // all levels active
  double eta = 1.0;

  // "a,b,c+f"; "+f" may be omitted.
  static Schedule parse(const std::string& text, double eta = 1.0);
  static Schedule sprites() { return {{50, 50, 50}, 150, 1.0}; }
  std::string to_string() const;
  long total_steps() const;
  void validate() const;
};

double data_term(const Tensor& x_hat, const Tensor& mask, double lambda, const Tensor& x);
Var data_term(Var x_hat, const Tensor& mask, double lambda, Var x);

struct MapObjective {
  Var total;
  Var data;
  Var neg_log_prior;
  FlowModel::Decoded decoded;
};

// Invalid entries of `latents` (index >= 1) are filled with conditional means.
MapObjective map_objective(const FlowModel& model, Tape& tape, const RestorationProblem& problem,
                           const std::vector<Var>& latents);

// u_0 from encoding x_hat, the other levels as conditional means of the
// mean-decode path.
LatentStack init_latents(const FlowModel& model, const Tensor& x_hat);
// u_0 = base mean, other levels conditional means.
LatentStack base_mean_latents(const FlowModel& model);

enum class InitMode { encode, base_mean };

struct TraceRow {
  long step = 0;
  int stage = 0;  // 0 .. L-1 for the coarse-to-fine stages, L for the final stage
  double objective = 0.0;
  double data_term = 0.0;
  double neg_log_prior = 0.0;
};

std::string trace_header();
std::string format_trace(const TraceRow& row);

// Called once per gradient step with the gradient of every level (inactive
// levels included) before the update.
using GradientObserver = std::function<void(long step, int stage, int active_levels, const std::vector<Tensor>& grads)>;

struct RestoreOptions {
  InitMode init = InitMode::encode;
  GradientObserver observer;
};

struct RestoreResult {
  Tensor restored;  // model range, clamped to [0, 1]
  LatentStack latents;  // the full stack behind `restored`
  std::vector<TraceRow> trace;
  double best_objective = 0.0;
  long best_step = 0;
  bool aborted = false;
  std::string abort_reason;
};

RestoreResult coarse_to_fine_optimize(const FlowModel& model, const RestorationProblem& problem,
                                      const Schedule& schedule, const RestoreOptions& options = {});

}  // namespace flowprior
