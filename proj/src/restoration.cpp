#include "flowprior/restoration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "flowprior/errors.hpp"
#include "flowprior/training.hpp"

namespace flowprior {

using namespace ops;

void RestorationProblem::validate() const {
  if (degraded.rank() != 4 || degraded.dim(0) != 1) {
    throw ShapeError("restoration expects a single (1, C, H, W) image, got " + to_string(degraded.shape()));
  }
  require_same_shape(degraded, mask, "restoration mask");
  for (double m : mask.data())
    if (m != 0.0 && m != 1.0) throw ValidationError("restoration mask entries must be 0 or 1");
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be >= 0");
}

Tensor pixels_to_model(const Tensor& pixels) {
  Tensor out = pixels;
  for (double& v : out.data()) v = (v + 0.5) / kPixelLevels;
  return out;
}

Tensor model_to_pixels(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::clamp(std::round(v * kPixelLevels - 0.5), 0.0, 255.0);
  return out;
}

// ---------------------------------------------------------------------------

Schedule Schedule::parse(const std::string& text, double eta) {
  Schedule s;
  s.eta = eta;
  const auto plus = text.find('+');
  const std::string stages = text.substr(0, plus);
  auto to_count = [&](const std::string& part) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v < 0) {
      throw ParseError("schedule '" + text + "': '" + part + "' is not a step count >= 0");
    }
    return v;
  };
  std::stringstream ss(stages);
  std::string part;
  while (std::getline(ss, part, ',')) s.stage_steps.push_back(to_count(part));
  if (s.stage_steps.empty()) throw ParseError("schedule '" + text + "' has no stages");
  if (plus != std::string::npos) s.final_steps = to_count(text.substr(plus + 1));
  return s;
}

std::string Schedule::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < stage_steps.size(); ++i) os << (i ? "," : "") << stage_steps[i];
  os << '+' << final_steps;
  return os.str();
}

long Schedule::total_steps() const {
  long n = final_steps;
  for (int s : stage_steps) n += s;
  return n;
}

void Schedule::validate() const {
  if (stage_steps.empty()) throw ParameterError("schedule needs one stage per level");
  if (final_steps < 0 || std::any_of(stage_steps.begin(), stage_steps.end(), [](int s) { return s < 0; })) {
    throw ParameterError("schedule step counts must be >= 0");
  }
  if (!(eta > 0.0)) throw ParameterError("schedule eta must be positive");
}

// ---------------------------------------------------------------------------

double data_term(const Tensor& x_hat, const Tensor& mask, double lambda, const Tensor& x) {
  require_same_shape(x_hat, x, "data term");
  require_same_shape(x_hat, mask, "data term mask");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = mask[i] * (x_hat[i] - x[i]);
    sq += d * d;
  }
  return lambda * std::sqrt(sq);
}

Var data_term(Var x_hat, const Tensor& mask, double lambda, Var x) {
  require_same_shape(x_hat.value(), x.value(), "data term");
  require_same_shape(x_hat.value(), mask, "data term mask");
  Tape& tape = x.tape();
  return scale(l2_norm(mul(sub(x_hat, x), tape.constant(mask))), lambda);
}

MapObjective map_objective(const FlowModel& model, Tape& tape, const RestorationProblem& problem,
                           const std::vector<Var>& latents) {
  MapObjective out;
  out.decoded = model.decode(tape, latents);
  out.data = data_term(tape.constant(problem.degraded), problem.mask, problem.lambda, out.decoded.x);
  out.neg_log_prior = neg(sum(out.decoded.log_prob));
  out.total = add(out.data, out.neg_log_prior);
  return out;
}

LatentStack init_latents(const FlowModel& model, const Tensor& x_hat) {
  Tape tape;
  const FlowModel::Encoded enc = model.encode(tape, tape.constant(x_hat));
  const FlowModel::Decoded md = model.mean_decode(tape, enc.latents[0]);
  LatentStack out;
  for (Var v : md.latents) out.push_back(v.value());
  return out;
}

LatentStack base_mean_latents(const FlowModel& model) {
  Tape tape;
  const FlowModel::Decoded md = model.mean_decode(tape, tape.constant(model.base_mean));
  LatentStack out;
  for (Var v : md.latents) out.push_back(v.value());
  return out;
}

std::string trace_header() { return "step,stage,objective,data_term,neg_log_prior"; }

std::string format_trace(const TraceRow& r) {
  std::ostringstream os;
  os.precision(12);
  os << r.step << ',' << r.stage << ',' << r.objective << ',' << r.data_term << ',' << r.neg_log_prior;
  return os.str();
}

namespace {

struct LatentAdam {
  std::vector<Tensor> m, v;
  long t = 0;

  void reset(const LatentStack& shape_like) {
    m.clear();
    v.clear();
    for (const Tensor& u : shape_like) {
      m.emplace_back(u.shape(), 0.0);
      v.emplace_back(u.shape(), 0.0);
    }
    t = 0;
  }

  void step(LatentStack& latents, const std::vector<Tensor>& grads, int active, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (int l = 0; l < active; ++l) {
      const auto i = static_cast<std::size_t>(l);
      for (std::size_t j = 0; j < latents[i].size(); ++j) {
        const double g = grads[i][j];
        m[i][j] = b1 * m[i][j] + (1.0 - b1) * g;
        v[i][j] = b2 * v[i][j] + (1.0 - b2) * g * g;
        latents[i][j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
      }
    }
  }
};

Tensor clamp_unit(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace

namespace {

void refresh_means(const FlowModel& model, LatentStack& latents, int active) {
  Tape tape;
  std::vector<Var> fed;
  for (int l = 0; l < static_cast<int>(latents.size()); ++l)
    fed.push_back(l < active ? tape.constant(latents[static_cast<std::size_t>(l)]) : Var{});
  const FlowModel::Decoded d = model.decode(tape, fed);
  for (std::size_t l = static_cast<std::size_t>(active); l < latents.size(); ++l) latents[l] = d.latents[l].value();
}

}  // namespace

RestoreResult coarse_to_fine_optimize(const FlowModel& model, const RestorationProblem& problem,
                                      const Schedule& schedule, const RestoreOptions& options) {
  problem.validate();
  schedule.validate();
  const int levels = model.num_levels();
  if (static_cast<int>(schedule.stage_steps.size()) != levels) {
    throw ParameterError("schedule has " + std::to_string(schedule.stage_steps.size()) + " stages for a " +
                         std::to_string(levels) + "-level model");
  }

  RestoreResult result;
  LatentStack latents = options.init == InitMode::base_mean ? base_mean_latents(model)
                                                             : init_latents(model, problem.degraded);
  result.best_objective = std::numeric_limits<double>::infinity();
  result.restored = clamp_unit(problem.degraded);

  // (stage, active levels, steps); the final stage keeps every level active.
  std::vector<std::pair<int, int>> stages;
  for (int j = 0; j < levels; ++j) stages.emplace_back(j + 1, schedule.stage_steps[static_cast<std::size_t>(j)]);
  stages.emplace_back(levels, schedule.final_steps);

  LatentAdam adam;
  long step = 0;
  // Evaluates the objective at the current latents; returns false on a
  // non-finite value.
  auto evaluate = [&](int stage, int active, bool with_grad) -> bool {
    Tape tape;
    std::vector<Var> leaves, fed;
    for (int l = 0; l < levels; ++l) {
      leaves.push_back(tape.leaf(latents[static_cast<std::size_t>(l)]));
      fed.push_back(l < active ? leaves.back() : Var{});
    }
    MapObjective obj;
    try {
      obj = map_objective(model, tape, problem, fed);
    } catch (const DomainError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      return false;
    }
    TraceRow row{step, stage, obj.total.value().item(), obj.data.value().item(), obj.neg_log_prior.value().item()};
    result.trace.push_back(row);
    if (!std::isfinite(row.objective)) {
      result.aborted = true;
      result.abort_reason = "non-finite objective at step " + std::to_string(step);
      return false;
    }
    if (row.objective < result.best_objective) {
      result.best_objective = row.objective;
      result.best_step = step;
      result.restored = clamp_unit(obj.decoded.x.value());
      result.latents.clear();
      for (const Var& u : obj.decoded.latents) result.latents.push_back(u.value());
    }
    // Inactive levels follow the conditional means of the current decode.
    for (int l = active; l < levels; ++l) {
      latents[static_cast<std::size_t>(l)] = obj.decoded.latents[static_cast<std::size_t>(l)].value();
    }
    if (!with_grad) return true;
    const GradientMap g = tape.backprop(obj.total);
    std::vector<Tensor> grads;
    for (Var leaf : leaves) grads.push_back(g.at(leaf));
    if (options.observer) options.observer(step, stage, active, grads);
    adam.step(latents, grads, active, schedule.eta);
    return true;
  };

  for (std::size_t s = 0; s < stages.size() && !result.aborted; ++s) {
    const auto [active, count] = stages[s];
    adam.reset(latents);
    for (int k = 0; k < count; ++k) {
      if (!evaluate(static_cast<int>(s), active, true)) break;
      ++step;
    }
    // The last update moved the active levels; bring the inactive ones along
    // so the next stage starts from a consistent stack.
    if (!result.aborted && count > 0 && active < levels) refresh_means(model, latents, active);
  }
  if (!result.aborted) evaluate(levels, levels, false);
  if (result.latents.empty()) result.latents = std::move(latents);
  return result;
}

}  // namespace flowprior
