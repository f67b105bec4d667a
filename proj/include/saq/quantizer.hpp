#pragma once

#include <map>
#include <vector>

#include "saq/tensor.hpp"

namespace saq {

// Uniform fixed-point quantization with learnable clipping levels.
//
// Weights:      w_hat = (clip(w/alpha_w, -1, 1) + 1) / 2
//               Q_w(w, b) = alpha_w * (2 * D(w_hat, s) - 1)
// Activations:  z_hat = clip(z/alpha_z, 0, 1)
//               Q_z(z, b) = alpha_z * D(z_hat, s)
// with D(v, s) = round(v * s) / s, s = 2^b - 1, ties rounding half away
// from zero. Gradients flow through D as identity (straight-through),
// which yields closed-form branch rules for w, z and the clipping levels.

struct QuantSpec {
  enum class TieRule { half_away_from_zero };

  std::vector<int> bitwidth_set{2, 3, 4, 5};
  std::map<int, double> alpha_w;  // bitwidth -> weight clipping level
  std::map<int, double> alpha_z;  // bitwidth -> activation clipping level
  TieRule rounding = TieRule::half_away_from_zero;

  // Positivity of every clipping level and coverage of bitwidth_set.
  void validate() const;
};

// ---- Scalar kernels (exact arithmetic order used everywhere) ---------------

double normalize_w_scalar(double w, double alpha_w);
double normalize_z_scalar(double z, double alpha_z);
double discretize_scalar(double v_hat, int b);
double quantize_w_scalar(double w, int b, double alpha_w);
double quantize_z_scalar(double z, int b, double alpha_z);

// Closed-form straight-through branch gradients.
double dqw_dw(double w, double alpha_w);
double dqw_dalpha(double w, int b, double alpha_w);
double dqz_dz(double z, double alpha_z);
double dqz_dalpha(double z, int b, double alpha_z);

// ---- Forward-only tensor maps ----------------------------------------------

Tensor normalize_w(const Tensor& w, double alpha_w);
Tensor normalize_z(const Tensor& z, double alpha_z);
// Inputs must lie in [0, 1] up to 1e-12 slack (clamped); beyond that throws.
Tensor discretize(const Tensor& v_hat, int b);
Tensor quantize_w(const Tensor& w, int b, double alpha_w);
Tensor quantize_z(const Tensor& z, int b, double alpha_z);

// ---- Straight-through differentiable ops ------------------------------------

// Registered custom-gradient rules. Handles are process-wide singletons;
// bitwidth rides along as a constant scalar input.
struct SteRuleSet {
  PrimitiveHandle discretize;  // {v_hat, b} -> D(v_hat, s), pass-through grad
  PrimitiveHandle clip_w;      // {w, alpha} -> clip(w, -alpha, alpha), exact grad
  PrimitiveHandle clip_z;      // {z, alpha} -> clip(z, 0, alpha), exact grad
  PrimitiveHandle quantize_w;  // {w, alpha, b} -> Q_w, branch-rule grad
  PrimitiveHandle quantize_z;  // {z, alpha, b} -> Q_z, branch-rule grad
};
const SteRuleSet& ste_rules();

// Full quantization chains on the tape; alpha is a defined [1] tensor.
Tensor quantize_w_ste(const Tensor& w, const Tensor& alpha, int b);
Tensor quantize_z_ste(const Tensor& z, const Tensor& alpha, int b);

// Per-output-channel standardization to zero mean / unit variance applied to
// weights ahead of quantization: rows are the leading extent, everything else
// flattens. Differentiable (wraps standardize_rows).
Tensor weight_standardize(const Tensor& w, double eps = 1e-5);

// ---- Cached quantized weights ------------------------------------------------

// Pairs a shared full-precision weight tensor with quantized values at one
// bitwidth. refresh() recomputes the cache from the live weight storage.
class QuantizedView {
 public:
  QuantizedView(Tensor weights, int bitwidth);

  const Tensor& weights() const { return weights_; }
  int bitwidth() const { return bitwidth_; }

  const Tensor& refresh(double alpha_w);
  const Tensor& cached() const;  // throws if refresh was never called

 private:
  Tensor weights_;
  int bitwidth_;
  Tensor cache_;
};

}  // namespace saq
