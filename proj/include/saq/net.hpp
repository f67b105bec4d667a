#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "saq/quantizer.hpp"
#include "saq/tensor.hpp"

namespace saq {

enum class LayerKind { conv, linear, bn, relu, pool, residual_add };
enum class PoolKind { max2x2, global_avg };

// Static description of one layer. Geometry fields are populated by the spec
// builders so cost accounting never re-derives shapes.
struct LayerSpec {
  // Sentinels for input_layer.
  static constexpr int kPrevious = -2;     // output of the preceding layer
  static constexpr int kModelInput = -1;   // the model input tensor

  LayerKind kind = LayerKind::conv;
  int in_channels = 0;   // conv: input channels; linear: input features
  int out_channels = 0;  // conv: filters; linear: output features; bn: channels
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int in_h = 0;  // input spatial size seen by this layer (conv only)
  int in_w = 0;
  bool bias = false;
  bool quantized = false;    // conv/linear weight layers only
  int fixed_bitwidth = 0;    // 0 = follows the config; 8 on first/last in policy mode
  int input_layer = kPrevious;
  int residual_from = -1;    // residual_add: layer index whose output is added
  bool projection = false;   // shortcut projection conv, off the main path
  PoolKind pool = PoolKind::max2x2;

  bool weighted() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
  int out_h() const;  // conv/pool output extents
  int out_w() const;
};

// Ordered layer list plus model-level switches.
struct ModelSpec {
  std::string name;
  std::vector<int> input_shape;  // {C,H,W} or {D}
  int classes = 0;
  std::vector<LayerSpec> layers;
  bool paper_policy = false;   // first/last quantized layers pinned to 8-bit
  bool quantize_input = false; // quantize the first quantized layer's input activations
  bool weight_norm = true;     // standardize weights per output channel before quantizing
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  // Shape-walks the layer graph; throws ConfigError/ShapeError on inconsistency.
  void validate() const;

  std::vector<int> weighted_layers() const;   // indices of conv/linear layers
  std::vector<int> quantized_layers() const;  // indices of quantized conv/linear layers
  int weighted_depth() const;                 // main-path conv/linear count
  std::int64_t weight_parameter_count() const;  // weights + biases
};

// Pins the first and last quantized layers to 8-bit.
void apply_fixed_endpoint_bitwidths(ModelSpec& spec);

// ---- Stock specifications ---------------------------------------------------

ModelSpec mlp_spec(int in_features, int hidden, int classes, bool bias = true,
                   bool quantized = true);
// conv3x3(cin->8)-BN-ReLU-pool, conv3x3(8->16)-BN-ReLU-pool, fc(->32)-ReLU,
// fc(32->classes); all four weight layers carry searchable bitwidths.
ModelSpec miniconv_spec(int in_channels, int in_hw, int classes);
ModelSpec resnet20_spec(int classes = 100);
ModelSpec resnet18_spec(int classes = 1000);

// ---- Runtime model ------------------------------------------------------------

// Batch-norm parameter/statistics sets kept per bitwidth key. Distinct keys own
// distinct storage; a forward under key b reads and updates only set b.
struct SwitchableBN {
  int spec_index = -1;
  int channels = 0;
  std::map<int, Tensor> gamma;
  std::map<int, Tensor> beta;
  std::map<int, std::vector<double>> running_mean;
  std::map<int, std::vector<double>> running_var;
};

struct WeightedLayer {
  int spec_index = -1;
  Tensor weight;  // conv [F,C,k,k]; linear [out,in]
  Tensor bias;    // undefined when absent
  // Per-bitwidth clipping levels, stored as log(alpha) so positivity is
  // structural. Present only on quantized layers.
  std::map<int, Tensor> log_alpha_w;
  std::map<int, Tensor> log_alpha_z;
};

// A bitwidth config assigns one entry per quantized layer, in layer order.
// Entry values come from the candidate set, or 8, or 32 (= full precision,
// quantization bypassed). Fixed-bitwidth layers override their entry.
class Model {
 public:
  enum class Mode { train, train_frozen_stats, eval };

  Model(ModelSpec spec, QuantSpec quant, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const QuantSpec& quant() const { return quant_; }

  Tensor forward(const Tensor& x, const std::vector<int>& config, Mode mode);

  int quantized_layer_count() const;
  // Positions (within the config vector) that are free to search.
  std::vector<int> searchable_positions() const;
  std::vector<int> uniform_config(int b) const;
  // Config with fixed endpoints applied; validates entries.
  std::vector<int> effective_bitwidths(const std::vector<int>& config) const;

  // One trainable parameter under some config, with its checkpoint name and
  // whether weight decay applies (weights and biases; clipping levels and BN
  // affine stay decay-free).
  struct ParamRef {
    std::string name;
    Tensor tensor;
    bool decayed = false;
  };

  // Parameters touched by a step under this config: weights, biases, the
  // selected clipping levels and the selected BN sets. Stable order.
  std::vector<ParamRef> trainable(const std::vector<int>& config);
  std::vector<Tensor> trainable_params(const std::vector<int>& config);
  // Every parameter tensor with a stable, unique name (checkpoint order).
  std::vector<std::pair<std::string, Tensor>> named_params();
  // Every BN running-stat vector with a stable, unique name.
  std::vector<std::pair<std::string, std::vector<double>*>> named_stats();

  std::vector<WeightedLayer>& weighted() { return weighted_; }
  std::vector<SwitchableBN>& bn_sets() { return bn_; }

  std::int64_t weight_parameter_count() const;

  // Additive perturbation of the effective (quantized or full-precision)
  // weights, one flat slot per weight coordinate over all weighted layers.
  std::int64_t perturbation_size() const;
  void apply_perturbation(const std::vector<double>& eps);
  void remove_perturbation();
  bool perturbed() const { return !perturbation_.empty(); }

  // Effective weight tensors from the most recent forward, one per weighted
  // layer. Their tape gradients are the loss gradients at the quantized
  // weights (ahead of the straight-through mask).
  const std::vector<Tensor>& last_effective_weights() const { return last_effective_; }

  // Number of forward passes run on this model (pass-count accounting).
  std::int64_t forward_count() const { return forward_count_; }

 private:
  ModelSpec spec_;
  QuantSpec quant_;
  std::vector<WeightedLayer> weighted_;
  std::vector<SwitchableBN> bn_;
  std::vector<int> bn_keys_;            // bitwidth keys with dedicated sets
  std::vector<std::int64_t> pert_offset_;  // per weighted layer
  std::vector<double> perturbation_;
  std::vector<Tensor> last_effective_;
  std::int64_t forward_count_ = 0;

  const WeightedLayer& weighted_at(int spec_index) const;
  SwitchableBN& bn_at(int spec_index);
};

}  // namespace saq
