#include "saq/optim.hpp"

#include <algorithm>
#include <cmath>

#include "saq/error.hpp"

namespace saq {

double LrSchedule::at(std::int64_t step) const {
  if (base_lr <= 0.0) throw ConfigError("learning rate must be positive");
  switch (kind) {
    case ScheduleKind::constant:
      return base_lr;
    case ScheduleKind::step_decay: {
      double lr = base_lr;
      for (std::int64_t ms : milestones) {
        if (step >= ms) lr *= gamma;
      }
      return lr;
    }
    case ScheduleKind::cosine: {
      if (total_steps < 1) throw ConfigError("cosine schedule needs total_steps >= 1");
      const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
      return base_lr * 0.5 * (1.0 + std::cos(M_PI * t / static_cast<double>(total_steps)));
    }
  }
  throw ConfigError("unknown schedule kind");
}

void OptimConfig::validate() const {
  schedule.at(0);  // checks base_lr and schedule shape
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (rho < 0.0) throw ConfigError("perturbation radius must be nonnegative");
  if (xi <= 0.0) throw ConfigError("adaptive stabilizer must be positive");
  if (m < 1) throw ConfigError("microbatch size must be positive");
}

std::vector<double> scaled_epsilon(const std::vector<double>& grad, double rho) {
  if (rho < 0.0) throw ValueError("perturbation radius must be nonnegative");
  std::vector<double> eps(grad.size(), 0.0);
  const double norm = l2_norm(grad);
  if (norm < 1e-12) return eps;
  const double s = rho / norm;
  for (std::size_t i = 0; i < grad.size(); ++i) eps[i] = s * grad[i];
  return eps;
}

std::vector<double> adaptive_epsilon(const std::vector<double>& q,
                                     const std::vector<double>& grad, double rho, double xi) {
  if (q.size() != grad.size()) {
    throw ValueError("adaptive scale and gradient sizes disagree");
  }
  if (rho < 0.0) throw ValueError("perturbation radius must be nonnegative");
  if (xi < 0.0) throw ValueError("adaptive stabilizer must be nonnegative");
  std::vector<double> eps(grad.size(), 0.0);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double tg = (std::abs(q[i]) + xi) * grad[i];
    norm2 += tg * tg;
  }
  const double norm = std::sqrt(norm2);
  if (norm < 1e-12) return eps;
  const double s = rho / norm;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double t = std::abs(q[i]) + xi;
    eps[i] = s * t * t * grad[i];
  }
  return eps;
}

namespace {

struct AscentPass {
  double loss = 0.0;
  std::vector<double> eff_grad;   // gradient at the effective weights
  std::vector<double> eff_value;  // effective weight values (adaptive scales)
};

// Forward/backward with batch statistics used but not committed; reads the
// gradient at the effective weights ahead of the straight-through mask.
AscentPass run_ascent_pass(Model& model, const Batch& batch, const std::vector<int>& config) {
  for (auto& p : model.trainable(config)) p.tensor.zero_grad();
  AscentPass out;
  Tape tape;
  Tensor logits = model.forward(batch.x, config, Model::Mode::train_frozen_stats);
  Tensor loss = softmax_cross_entropy(logits, batch.labels);
  out.loss = loss.item();
  tape.backward(loss);
  for (const Tensor& q : model.last_effective_weights()) {
    const auto& g = q.grad();
    out.eff_grad.insert(out.eff_grad.end(), g.begin(), g.end());
    const auto& v = q.values();
    out.eff_value.insert(out.eff_value.end(), v.begin(), v.end());
  }
  return out;
}

Batch slice_batch(const Batch& batch, std::int64_t start, std::int64_t end) {
  const std::int64_t n = batch.x.shape()[0];
  if (start == 0 && end == n) return batch;
  const std::int64_t stride = batch.x.size() / n;
  std::vector<int> shape = batch.x.shape();
  shape[0] = static_cast<int>(end - start);
  const auto& src = batch.x.values();
  Batch out;
  out.x = Tensor::from_values(
      shape, std::vector<double>(src.begin() + start * stride, src.begin() + end * stride));
  out.labels.assign(batch.labels.begin() + start, batch.labels.begin() + end);
  return out;
}

}  // namespace

PerturbationState compute_epsilon_hat(Model& model, const Batch& batch,
                                      const std::vector<int>& config, double rho) {
  if (rho <= 0.0) throw ValueError("ascent step needs rho > 0");
  AscentPass pass = run_ascent_pass(model, batch, config);
  PerturbationState st;
  st.epsilon = scaled_epsilon(pass.eff_grad, rho);
  st.norm = l2_norm(st.epsilon);
  st.source_grad = std::move(pass.eff_grad);
  return st;
}

PerturbationState asaq_epsilon(Model& model, const Batch& batch,
                               const std::vector<int>& config, double rho, double xi) {
  if (rho <= 0.0) throw ValueError("ascent step needs rho > 0");
  if (xi <= 0.0) throw ValueError("adaptive stabilizer must be positive");
  AscentPass pass = run_ascent_pass(model, batch, config);
  PerturbationState st;
  st.epsilon = adaptive_epsilon(pass.eff_value, pass.eff_grad, rho, xi);
  st.norm = l2_norm(st.epsilon);
  st.source_grad = std::move(pass.eff_grad);
  return st;
}

double naive_sam_quant_diag(Model& model, const Batch& batch,
                            const std::vector<int>& config, double rho) {
  if (rho <= 0.0) throw ValueError("ascent step needs rho > 0");
  const std::vector<int> eff = model.effective_bitwidths(config);

  // ascent on the full-precision weights: gradient from the all-32 bypass
  AscentPass pass = run_ascent_pass(model, batch, model.uniform_config(32));
  const std::vector<double> eps = scaled_epsilon(pass.eff_grad, rho);

  std::int64_t kept = 0;
  std::int64_t total = 0;
  std::int64_t off = 0;
  int qi = 0;
  int wi = 0;
  for (const LayerSpec& l : model.spec().layers) {
    if (!l.weighted()) continue;
    WeightedLayer& wl = model.weighted()[wi++];
    const std::int64_t n = wl.weight.size();
    int b = 32;
    if (l.quantized) b = eff[qi++];
    if (b != 32) {
      const double alpha = std::exp(wl.log_alpha_w.at(b).values()[0]);
      const auto& w = wl.weight.values();
      for (std::int64_t i = 0; i < n; ++i) {
        const double before = quantize_w_scalar(w[i], b, alpha);
        const double after = quantize_w_scalar(w[i] + eps[off + i], b, alpha);
        kept += before == after ? 1 : 0;
      }
      total += n;
    }
    off += n;
  }
  if (total == 0) throw ValueError("no quantized layers under this config");
  return static_cast<double>(kept) / static_cast<double>(total);
}

void momentum_update(std::vector<double>& w, std::vector<double>& v,
                     const std::vector<double>& g, double lr, double momentum, double decay) {
  if (w.size() != g.size()) throw ValueError("parameter and gradient sizes disagree");
  if (v.size() != w.size()) v.assign(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = g[i] + decay * w[i];
    v[i] = momentum * v[i] + d;
    w[i] -= lr * v[i];
  }
}

Optimizer::Optimizer(Model& model, OptimConfig cfg) : model_(model), cfg_(cfg) {
  cfg_.validate();
}

double Optimizer::step_impl(const Batch& batch, const std::vector<int>& config,
                            Variant variant) {
  const std::int64_t n = batch.x.shape().empty() ? 0 : batch.x.shape()[0];
  if (n < 1) throw ValueError("empty batch");
  if (static_cast<std::int64_t>(batch.labels.size()) != n) {
    throw ValueError("batch labels and rows disagree");
  }

  auto params = model_.trainable(config);
  std::vector<std::vector<double>> acc(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    acc[i].assign(static_cast<std::size_t>(params[i].tensor.size()), 0.0);
  }
  double loss_acc = 0.0;

  const std::int64_t mb = std::min(cfg_.m, n);
  for (std::int64_t start = 0; start < n; start += mb) {
    const std::int64_t end = std::min(n, start + mb);
    const Batch micro = slice_batch(batch, start, end);

    if (cfg_.rho > 0.0 && variant != Variant::plain) {
      AscentPass pre = run_ascent_pass(model_, micro, config);
      model_.apply_perturbation(
          variant == Variant::scaled
              ? scaled_epsilon(pre.eff_grad, cfg_.rho)
              : adaptive_epsilon(pre.eff_value, pre.eff_grad, cfg_.rho, cfg_.xi));
    }

    for (auto& p : params) p.tensor.zero_grad();
    double micro_loss = 0.0;
    {
      Tape tape;
      Tensor logits = model_.forward(micro.x, config, Model::Mode::train);
      Tensor loss = softmax_cross_entropy(logits, micro.labels);
      micro_loss = loss.item();
      tape.backward(loss);
    }
    if (model_.perturbed()) model_.remove_perturbation();
    if (!std::isfinite(micro_loss)) {
      throw NumericError("non-finite training loss; update aborted");
    }

    // fixed-order, sample-weighted accumulation
    const double weight = static_cast<double>(end - start) / static_cast<double>(n);
    loss_acc += micro_loss * weight;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].tensor.has_grad()) continue;
      const auto& g = params[i].tensor.grad();
      for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j] * weight;
    }
  }

  const double lr = current_lr();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    momentum_update(p.tensor.values(), velocity_[p.name], acc[i], lr, cfg_.momentum,
                    p.decayed ? cfg_.weight_decay : 0.0);
  }
  ++steps_;
  return loss_acc;
}

double Optimizer::sgd_step(const Batch& batch, const std::vector<int>& config) {
  return step_impl(batch, config, Variant::plain);
}

double Optimizer::saq_step(const Batch& batch, const std::vector<int>& config) {
  return step_impl(batch, config, Variant::scaled);
}

double Optimizer::asaq_step(const Batch& batch, const std::vector<int>& config) {
  return step_impl(batch, config, Variant::adaptive);
}

double Optimizer::sam_step(const Batch& batch) {
  return step_impl(batch, model_.uniform_config(32), Variant::scaled);
}

}  // namespace saq
