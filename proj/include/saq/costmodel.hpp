#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saq/net.hpp"

namespace saq {

// MAC and bit-operation accounting. One BOP row per weighted layer:
// BOPs = MACs * weight_bits * activation_bits, where a layer's activation
// bits follow its own assigned bitwidth (its input activations are quantized
// by the layer itself). Pooling, BN, ReLU and residual adds are cost-free.

struct LayerCost {
  std::string label;
  std::int64_t macs = 0;
  int weight_bits = 32;
  int activation_bits = 32;
  double bops = 0.0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  double total_bops = 0.0;
  double fp_bops = 0.0;            // same model at 32/32 everywhere
  double compression_ratio = 0.0;  // fp_bops / total_bops
};

// conv: C_in * C_out * k^2 * H_out * W_out; linear: in * out.
// Bias, BN and activation costs are excluded.
std::int64_t layer_macs(const LayerSpec& layer);

// config holds one bitwidth per quantized layer (layer order); fixed-bitwidth
// layers override their entry; non-quantized weighted layers count at 32.
CostReport total_bops(const ModelSpec& model, const std::vector<int>& config);

// Budget penalty beta * (c/normalizer - budget/normalizer)^2. Pass the
// model's full-precision BOPs as normalizer for the dimensionless form, or
// 1.0 to work in raw bit-operations.
double constraint_penalty(double bops, double budget, double beta,
                          double normalizer = 1.0);

}  // namespace saq
