#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saq/data.hpp"
#include "saq/net.hpp"

namespace saq {

enum class ScheduleKind { constant, step_decay, cosine };

// Pure learning-rate schedule. step_decay interprets `step` as an epoch index
// and multiplies by gamma at each milestone; cosine anneals to zero over
// total_steps.
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base_lr = 0.01;
  std::vector<std::int64_t> milestones{80, 120};
  double gamma = 0.1;
  std::int64_t total_steps = 1;

  double at(std::int64_t step) const;
};

struct OptimConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;  // applies to weights and biases only
  double rho = 0.0;           // perturbation radius; 0 disables the ascent pass
  double xi = 0.01;           // adaptive-perturbation stabilizer
  std::int64_t m = 128;       // microbatch cap for m-sharpness
  LrSchedule schedule;

  void validate() const;
};

// A flat perturbation over all weighted layers' effective weights, plus the
// gradient it was derived from. norm == rho whenever the gradient is nonzero.
struct PerturbationState {
  std::vector<double> epsilon;
  double norm = 0.0;
  std::vector<double> source_grad;
};

// Formula cores (directly testable; the model-level ops wrap these).
// rho * g / ||g||; zero when ||g|| < 1e-12.
std::vector<double> scaled_epsilon(const std::vector<double>& grad, double rho);
// t = |q| + xi elementwise; rho * t^2 g / ||t g||; zero when ||t g|| < 1e-12.
std::vector<double> adaptive_epsilon(const std::vector<double>& q,
                                     const std::vector<double>& grad, double rho, double xi);

// One forward/backward at the effective weights (batch statistics used but
// not committed) exposing the loss gradient taken at the quantized weights.
PerturbationState compute_epsilon_hat(Model& model, const Batch& batch,
                                      const std::vector<int>& config, double rho);
PerturbationState asaq_epsilon(Model& model, const Batch& batch,
                               const std::vector<int>& config, double rho, double xi);

// Diagnostic for the perturb-then-quantize route: computes the ascent step on
// the full-precision weights and returns the fraction of quantized weight
// elements whose discrete value it fails to change.
double naive_sam_quant_diag(Model& model, const Batch& batch,
                            const std::vector<int>& config, double rho);

// In-place momentum-SGD update: d = g + decay*w; v = momentum*v + d;
// w -= lr*v. Velocity is zero-initialized on first use.
void momentum_update(std::vector<double>& w, std::vector<double>& v,
                     const std::vector<double>& g, double lr, double momentum, double decay);

// Momentum-SGD training engine with optional sharpness-ascent passes.
// Every step splits the batch into fixed-order microbatches of at most m
// samples; gradients are sample-weighted averages across microbatches, so a
// step with rho = 0 is bit-exact plain SGD regardless of the variant used.
class Optimizer {
 public:
  Optimizer(Model& model, OptimConfig cfg);

  // One pass per microbatch; stats committed, straight-through gradients.
  double sgd_step(const Batch& batch, const std::vector<int>& config);
  // Two passes per microbatch: ascend at the quantized weights, then descend.
  double saq_step(const Batch& batch, const std::vector<int>& config);
  // As saq_step with the elementwise-adaptive perturbation.
  double asaq_step(const Batch& batch, const std::vector<int>& config);
  // Full-precision min-max baseline: saq_step under the all-32 bypass.
  double sam_step(const Batch& batch);

  const OptimConfig& config() const { return cfg_; }
  std::int64_t steps_taken() const { return steps_; }
  double current_lr() const { return cfg_.schedule.at(schedule_step_); }

  // Schedule position, advanced by the caller (epoch or step granularity).
  void set_schedule_step(std::int64_t step) { schedule_step_ = step; }
  std::int64_t schedule_step() const { return schedule_step_; }

  // Velocity buffers keyed by parameter name (checkpoint surface).
  std::map<std::string, std::vector<double>>& velocities() { return velocity_; }
  void set_steps_taken(std::int64_t steps) { steps_ = steps; }

 private:
  enum class Variant { plain, scaled, adaptive };

  double step_impl(const Batch& batch, const std::vector<int>& config, Variant variant);

  Model& model_;
  OptimConfig cfg_;
  std::map<std::string, std::vector<double>> velocity_;
  std::int64_t steps_ = 0;
  std::int64_t schedule_step_ = 0;
};

}  // namespace saq
