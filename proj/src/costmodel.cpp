#include "saq/costmodel.hpp"

namespace saq {

std::int64_t layer_macs(const LayerSpec& layer) {
  if (layer.kind == LayerKind::conv) {
    return static_cast<std::int64_t>(layer.in_channels) * layer.out_channels *
           layer.kernel * layer.kernel * layer.out_h() * layer.out_w();
  }
  if (layer.kind == LayerKind::linear) {
    return static_cast<std::int64_t>(layer.in_channels) * layer.out_channels;
  }
  throw ValueError("only conv and linear layers carry MACs");
}

CostReport total_bops(const ModelSpec& model, const std::vector<int>& config) {
  const auto quantized = model.quantized_layers();
  if (config.size() != quantized.size()) {
    throw ConfigError(model.name + ": config holds " + std::to_string(config.size()) +
                      " entries for " + std::to_string(quantized.size()) +
                      " quantized layers");
  }
  CostReport report;
  std::size_t qi = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    if (!l.weighted()) continue;
    LayerCost cost;
    cost.macs = layer_macs(l);
    if (l.quantized) {
      int b = config[qi];
      // 32 disables quantization outright, so the endpoint pin does not apply
      if (b != 32 && l.fixed_bitwidth != 0) b = l.fixed_bitwidth;
      if (b < 2 || b > 32) {
        throw ConfigError(model.name + ": bitwidth " + std::to_string(b) +
                          " out of range");
      }
      cost.weight_bits = b;
      cost.activation_bits = b;
      ++qi;
    }
    if (l.kind == LayerKind::conv) {
      cost.label = "conv " + std::to_string(l.in_channels) + "->" +
                   std::to_string(l.out_channels) + " k" + std::to_string(l.kernel) +
                   " s" + std::to_string(l.stride) + " @" + std::to_string(l.out_h()) +
                   "x" + std::to_string(l.out_w()) + (l.projection ? " (shortcut)" : "");
    } else {
      cost.label = "linear " + std::to_string(l.in_channels) + "->" +
                   std::to_string(l.out_channels);
    }
    cost.bops = static_cast<double>(cost.macs) * cost.weight_bits * cost.activation_bits;
    report.total_bops += cost.bops;
    report.fp_bops += static_cast<double>(cost.macs) * 32.0 * 32.0;
    report.layers.push_back(std::move(cost));
  }
  report.compression_ratio = report.total_bops > 0.0
                                 ? report.fp_bops / report.total_bops
                                 : 0.0;
  return report;
}

double constraint_penalty(double bops, double budget, double beta, double normalizer) {
  if (beta < 0.0) throw ValueError("penalty weight must be non-negative");
  if (!(normalizer > 0.0)) throw ValueError("penalty normalizer must be positive");
  const double d = (bops - budget) / normalizer;
  return beta * d * d;
}

}  // namespace saq
