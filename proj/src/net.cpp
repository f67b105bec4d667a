#include "saq/net.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace saq {

namespace {

int conv_extent(int in, int pad, int kernel, int stride) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

int LayerSpec::out_h() const {
  if (kind == LayerKind::conv) return conv_extent(in_h, pad, kernel, stride);
  if (kind == LayerKind::pool && pool == PoolKind::max2x2) return in_h / 2;
  return in_h;
}

int LayerSpec::out_w() const {
  if (kind == LayerKind::conv) return conv_extent(in_w, pad, kernel, stride);
  if (kind == LayerKind::pool && pool == PoolKind::max2x2) return in_w / 2;
  return in_w;
}

// ---- ModelSpec ---------------------------------------------------------------

void ModelSpec::validate() const {
  if (layers.empty()) throw ConfigError(name + ": no layers");
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw ConfigError(name + ": input shape must be {D} or {C,H,W}");
  }
  if (classes < 2) throw ConfigError(name + ": needs at least two classes");
  for (int d : input_shape) {
    if (d <= 0) throw ConfigError(name + ": non-positive input extent");
  }

  std::vector<std::vector<int>> out_shapes(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::vector<int>* in = nullptr;
    if (l.input_layer == LayerSpec::kPrevious) {
      in = i == 0 ? &input_shape : &out_shapes[i - 1];
    } else if (l.input_layer == LayerSpec::kModelInput) {
      in = &input_shape;
    } else if (l.input_layer >= 0 && l.input_layer < static_cast<int>(i)) {
      in = &out_shapes[l.input_layer];
    } else {
      throw ConfigError(name + ": layer " + std::to_string(i) + " has a bad input link");
    }

    switch (l.kind) {
      case LayerKind::conv: {
        if (in->size() != 3) throw ShapeError(name + ": conv input must be {C,H,W}");
        if ((*in)[0] != l.in_channels || (*in)[1] != l.in_h || (*in)[2] != l.in_w) {
          throw ShapeError(name + ": conv geometry mismatch at layer " + std::to_string(i));
        }
        if (l.kernel <= 0 || l.stride <= 0 || l.pad < 0 || l.out_channels <= 0 ||
            l.out_h() <= 0 || l.out_w() <= 0 || l.kernel > l.in_h + 2 * l.pad ||
            l.kernel > l.in_w + 2 * l.pad) {
          throw ShapeError(name + ": degenerate conv geometry at layer " +
                           std::to_string(i));
        }
        if (l.bias) throw ConfigError(name + ": conv layers with bias are unsupported");
        out_shapes[i] = {l.out_channels, l.out_h(), l.out_w()};
        break;
      }
      case LayerKind::linear: {
        std::int64_t flat = 1;
        for (int d : *in) flat *= d;
        if (flat != l.in_channels) {
          throw ShapeError(name + ": linear input features mismatch at layer " +
                           std::to_string(i));
        }
        if (l.out_channels <= 0) throw ShapeError(name + ": linear output must be positive");
        out_shapes[i] = {l.out_channels};
        break;
      }
      case LayerKind::bn: {
        if ((*in)[0] != l.out_channels) {
          throw ShapeError(name + ": bn channel mismatch at layer " + std::to_string(i));
        }
        out_shapes[i] = *in;
        break;
      }
      case LayerKind::relu: {
        out_shapes[i] = *in;
        break;
      }
      case LayerKind::pool: {
        if (in->size() != 3) throw ShapeError(name + ": pool input must be {C,H,W}");
        if (l.pool == PoolKind::max2x2) {
          if ((*in)[1] % 2 != 0 || (*in)[2] % 2 != 0) {
            throw ShapeError(name + ": max pool needs even extents at layer " +
                             std::to_string(i));
          }
          out_shapes[i] = {(*in)[0], (*in)[1] / 2, (*in)[2] / 2};
        } else {
          out_shapes[i] = {(*in)[0]};
        }
        break;
      }
      case LayerKind::residual_add: {
        if (l.residual_from < 0 || l.residual_from >= static_cast<int>(i)) {
          throw ConfigError(name + ": residual link out of range at layer " +
                            std::to_string(i));
        }
        if (out_shapes[l.residual_from] != *in) {
          throw ShapeError(name + ": residual operand shapes differ at layer " +
                           std::to_string(i));
        }
        out_shapes[i] = *in;
        break;
      }
    }
    if (l.quantized && !l.weighted()) {
      throw ConfigError(name + ": only conv/linear layers carry bitwidths");
    }
  }
  if (out_shapes.back() != std::vector<int>{classes}) {
    throw ShapeError(name + ": final layer does not emit the class logits");
  }

  if (paper_policy) {
    const auto q = quantized_layers();
    if (q.size() < 2) throw ConfigError(name + ": endpoint policy needs two layers");
    for (std::size_t i = 0; i < q.size(); ++i) {
      const int want = (i == 0 || i + 1 == q.size()) ? 8 : 0;
      if (layers[q[i]].fixed_bitwidth != want) {
        throw ConfigError(name + ": endpoint bitwidth policy violated at layer " +
                          std::to_string(q[i]));
      }
    }
  }
}

std::vector<int> ModelSpec::weighted_layers() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weighted()) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

std::vector<int> ModelSpec::quantized_layers() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weighted() && layers[i].quantized) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

int ModelSpec::weighted_depth() const {
  int n = 0;
  for (const auto& l : layers) {
    if (l.weighted() && !l.projection) ++n;
  }
  return n;
}

std::int64_t ModelSpec::weight_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv) {
      n += static_cast<std::int64_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
    } else if (l.kind == LayerKind::linear) {
      n += static_cast<std::int64_t>(l.out_channels) * l.in_channels;
      if (l.bias) n += l.out_channels;
    }
  }
  return n;
}

void apply_fixed_endpoint_bitwidths(ModelSpec& spec) {
  const auto q = spec.quantized_layers();
  if (q.size() < 2) throw ConfigError(spec.name + ": endpoint policy needs two layers");
  for (int i : q) spec.layers[i].fixed_bitwidth = 0;
  spec.layers[q.front()].fixed_bitwidth = 8;
  spec.layers[q.back()].fixed_bitwidth = 8;
  spec.paper_policy = true;
}

// ---- Stock specs ----------------------------------------------------------------

namespace {

// Appends layers while tracking the running activation shape.
struct SpecBuilder {
  ModelSpec spec;
  int c = 0, h = 0, w = 0;  // h = w = 0 once flat

  int last() const { return static_cast<int>(spec.layers.size()) - 1; }

  int conv(int out_c, int k, int s, int p, bool quantized, bool projection = false,
           int input_layer = LayerSpec::kPrevious, int in_c = -1, int in_h = -1,
           int in_w = -1) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.in_channels = in_c < 0 ? c : in_c;
    l.in_h = in_h < 0 ? h : in_h;
    l.in_w = in_w < 0 ? w : in_w;
    l.out_channels = out_c;
    l.kernel = k;
    l.stride = s;
    l.pad = p;
    l.quantized = quantized;
    l.projection = projection;
    l.input_layer = input_layer;
    spec.layers.push_back(l);
    c = out_c;
    h = l.out_h();
    w = l.out_w();
    return last();
  }

  int bn() {
    LayerSpec l;
    l.kind = LayerKind::bn;
    l.in_channels = c;
    l.out_channels = c;
    spec.layers.push_back(l);
    return last();
  }

  int relu() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    spec.layers.push_back(l);
    return last();
  }

  int pool_max() {
    LayerSpec l;
    l.kind = LayerKind::pool;
    l.pool = PoolKind::max2x2;
    spec.layers.push_back(l);
    h /= 2;
    w /= 2;
    return last();
  }

  int gap() {
    LayerSpec l;
    l.kind = LayerKind::pool;
    l.pool = PoolKind::global_avg;
    spec.layers.push_back(l);
    h = w = 0;
    return last();
  }

  int linear(int out, bool bias, bool quantized) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.in_channels = h > 0 ? c * h * w : c;
    l.out_channels = out;
    l.bias = bias;
    l.quantized = quantized;
    spec.layers.push_back(l);
    c = out;
    h = w = 0;
    return last();
  }

  int residual(int main_end, int from) {
    LayerSpec l;
    l.kind = LayerKind::residual_add;
    l.input_layer = main_end;
    l.residual_from = from;
    spec.layers.push_back(l);
    return last();
  }

  // Two 3x3 convs with BN; identity shortcut, or 1x1 projection when the
  // shape changes.
  void basic_block(int out_c, int stride) {
    const int block_in = last();
    const int in_c = c, in_h = h, in_w = w;
    conv(out_c, 3, stride, 1, true);
    bn();
    relu();
    conv(out_c, 3, 1, 1, true);
    const int main_end = bn();
    int from = block_in;
    if (stride != 1 || in_c != out_c) {
      conv(out_c, 1, stride, 0, true, true, block_in, in_c, in_h, in_w);
      from = bn();
    }
    residual(main_end, from);
    relu();
  }
};

}  // namespace

ModelSpec mlp_spec(int in_features, int hidden, int classes, bool bias, bool quantized) {
  SpecBuilder b;
  b.spec.name = "mlp";
  b.spec.input_shape = {in_features};
  b.spec.classes = classes;
  b.c = in_features;
  b.linear(hidden, bias, quantized);
  b.relu();
  b.linear(classes, bias, quantized);
  b.spec.validate();
  return b.spec;
}

ModelSpec miniconv_spec(int in_channels, int in_hw, int classes) {
  SpecBuilder b;
  b.spec.name = "miniconv";
  b.spec.input_shape = {in_channels, in_hw, in_hw};
  b.spec.classes = classes;
  b.c = in_channels;
  b.h = b.w = in_hw;
  b.conv(8, 3, 1, 1, true);
  b.bn();
  b.relu();
  b.pool_max();
  b.conv(16, 3, 1, 1, true);
  b.bn();
  b.relu();
  b.pool_max();
  b.linear(32, true, true);
  b.relu();
  b.linear(classes, true, true);
  b.spec.validate();
  return b.spec;
}

ModelSpec resnet20_spec(int classes) {
  SpecBuilder b;
  b.spec.name = "resnet20";
  b.spec.input_shape = {3, 32, 32};
  b.spec.classes = classes;
  b.spec.quantize_input = true;
  b.c = 3;
  b.h = b.w = 32;
  b.conv(16, 3, 1, 1, true);
  b.bn();
  b.relu();
  const int widths[3] = {16, 32, 64};
  for (int stage = 0; stage < 3; ++stage) {
    for (int block = 0; block < 3; ++block) {
      b.basic_block(widths[stage], stage > 0 && block == 0 ? 2 : 1);
    }
  }
  b.gap();
  b.linear(classes, true, true);
  apply_fixed_endpoint_bitwidths(b.spec);
  b.spec.validate();
  return b.spec;
}

ModelSpec resnet18_spec(int classes) {
  SpecBuilder b;
  b.spec.name = "resnet18";
  b.spec.input_shape = {3, 224, 224};
  b.spec.classes = classes;
  b.spec.quantize_input = true;
  b.c = 3;
  b.h = b.w = 224;
  b.conv(64, 7, 2, 3, true);
  b.bn();
  b.relu();
  b.pool_max();
  const int widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    for (int block = 0; block < 2; ++block) {
      b.basic_block(widths[stage], stage > 0 && block == 0 ? 2 : 1);
    }
  }
  b.gap();
  b.linear(classes, true, true);
  apply_fixed_endpoint_bitwidths(b.spec);
  b.spec.validate();
  return b.spec;
}

// ---- Model --------------------------------------------------------------------

Model::Model(ModelSpec spec, QuantSpec quant, std::uint64_t seed)
    : spec_(std::move(spec)), quant_(std::move(quant)) {
  spec_.validate();
  std::set<int> alpha_keys(quant_.bitwidth_set.begin(), quant_.bitwidth_set.end());
  alpha_keys.insert(8);
  std::set<int> bn_key_set = alpha_keys;
  bn_key_set.insert(32);
  bn_keys_.assign(bn_key_set.begin(), bn_key_set.end());

  RandomStream rng(seed);
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    if (l.weighted()) {
      WeightedLayer wl;
      wl.spec_index = static_cast<int>(i);
      if (l.kind == LayerKind::conv) {
        const int fan_in = l.in_channels * l.kernel * l.kernel;
        wl.weight = Tensor::he_uniform({l.out_channels, l.in_channels, l.kernel, l.kernel},
                                       fan_in, rng);
      } else {
        wl.weight = Tensor::he_uniform({l.out_channels, l.in_channels}, l.in_channels, rng);
        if (l.bias) wl.bias = Tensor::zeros({l.out_channels});
      }
      wl.weight.set_requires_grad(true);
      if (wl.bias.defined()) wl.bias.set_requires_grad(true);
      if (l.quantized) {
        for (int b : alpha_keys) {
          auto init = [&](const std::map<int, double>& m) {
            auto it = m.find(b);
            if (it == m.end()) return 0.0;
            if (!(it->second > 0.0)) {
              throw ConfigError("clipping levels must be strictly positive");
            }
            return std::log(it->second);
          };
          wl.log_alpha_w[b] = Tensor::scalar(init(quant_.alpha_w)).set_requires_grad(true);
          wl.log_alpha_z[b] = Tensor::scalar(init(quant_.alpha_z)).set_requires_grad(true);
        }
      }
      pert_offset_.push_back(offset);
      offset += wl.weight.size();
      weighted_.push_back(std::move(wl));
    } else if (l.kind == LayerKind::bn) {
      SwitchableBN sb;
      sb.spec_index = static_cast<int>(i);
      sb.channels = l.out_channels;
      for (int b : bn_keys_) {
        sb.gamma[b] = Tensor::full({sb.channels}, 1.0).set_requires_grad(true);
        sb.beta[b] = Tensor::zeros({sb.channels}).set_requires_grad(true);
        sb.running_mean[b] = std::vector<double>(sb.channels, 0.0);
        sb.running_var[b] = std::vector<double>(sb.channels, 1.0);
      }
      bn_.push_back(std::move(sb));
    }
  }
}

int Model::quantized_layer_count() const {
  return static_cast<int>(spec_.quantized_layers().size());
}

std::vector<int> Model::searchable_positions() const {
  std::vector<int> out;
  const auto q = spec_.quantized_layers();
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (spec_.layers[q[i]].fixed_bitwidth == 0) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> Model::uniform_config(int b) const {
  return std::vector<int>(quantized_layer_count(), b);
}

std::vector<int> Model::effective_bitwidths(const std::vector<int>& config) const {
  const auto q = spec_.quantized_layers();
  if (config.size() != q.size()) {
    throw ConfigError(spec_.name + ": config holds " + std::to_string(config.size()) +
                      " entries for " + std::to_string(q.size()) + " quantized layers");
  }
  std::vector<int> eff(config);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const int fixed = spec_.layers[q[i]].fixed_bitwidth;
    // 32 disables quantization outright, so the endpoint pin does not apply
    if (fixed != 0 && eff[i] != 32) eff[i] = fixed;
    const int b = eff[i];
    const bool known = b == 32 || b == 8 ||
                       std::find(quant_.bitwidth_set.begin(), quant_.bitwidth_set.end(),
                                 b) != quant_.bitwidth_set.end();
    if (!known) {
      throw ConfigError(spec_.name + ": no clipping/BN set for bitwidth " +
                        std::to_string(b));
    }
  }
  return eff;
}

const WeightedLayer& Model::weighted_at(int spec_index) const {
  for (const auto& wl : weighted_) {
    if (wl.spec_index == spec_index) return wl;
  }
  throw ValueError("no weighted layer at this index");
}

SwitchableBN& Model::bn_at(int spec_index) {
  for (auto& sb : bn_) {
    if (sb.spec_index == spec_index) return sb;
  }
  throw ValueError("no batch-norm layer at this index");
}

Tensor Model::forward(const Tensor& x, const std::vector<int>& config, Mode mode) {
  if (!x.defined()) throw ValueError("forward: undefined input");
  std::vector<int> want = {0};
  want.insert(want.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  if (x.shape().size() != want.size()) {
    throw ShapeError(spec_.name + ": input rank mismatch");
  }
  for (std::size_t i = 1; i < want.size(); ++i) {
    if (x.shape()[i] != want[i]) throw ShapeError(spec_.name + ": input shape mismatch");
  }
  const std::vector<int> eff = effective_bitwidths(config);
  ++forward_count_;

  std::vector<Tensor> outs(spec_.layers.size());
  last_effective_.clear();
  int qi = 0;       // index into quantized layers
  int wi = 0;       // index into weighted layers
  int bn_key = 32;  // effective bitwidth of the most recent weighted layer

  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    Tensor in;
    if (l.input_layer == LayerSpec::kPrevious) {
      in = i == 0 ? x : outs[i - 1];
    } else if (l.input_layer == LayerSpec::kModelInput) {
      in = x;
    } else {
      in = outs[l.input_layer];
    }

    Tensor out;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::linear: {
        WeightedLayer& wl = weighted_[wi];
        int b_eff = 32;
        bool first_quantized = false;
        if (l.quantized) {
          first_quantized = qi == 0;
          b_eff = eff[qi];
          ++qi;
        }
        Tensor w_eff;
        if (b_eff != 32) {
          Tensor wn = spec_.weight_norm ? weight_standardize(wl.weight, 1e-5) : wl.weight;
          w_eff = quantize_w_ste(wn, exp_op(wl.log_alpha_w.at(b_eff)), b_eff);
        } else {
          w_eff = wl.weight;
        }
        if (!perturbation_.empty()) {
          const std::int64_t off = pert_offset_[wi];
          std::vector<double> slice(perturbation_.begin() + off,
                                    perturbation_.begin() + off + wl.weight.size());
          w_eff = add(w_eff, Tensor::from_values(wl.weight.shape(), std::move(slice)));
        }
        last_effective_.push_back(w_eff);

        Tensor a = in;
        const bool skip_act = first_quantized && !spec_.quantize_input;
        if (b_eff != 32 && !skip_act) {
          a = quantize_z_ste(a, exp_op(wl.log_alpha_z.at(b_eff)), b_eff);
        }

        if (l.kind == LayerKind::conv) {
          out = conv2d(a, w_eff, l.stride, l.pad);
        } else {
          if (a.shape().size() > 2) {
            out = reshape(a, {a.shape()[0], static_cast<int>(a.size() / a.shape()[0])});
          } else {
            out = a;
          }
          out = matmul_nt(out, w_eff);
          if (wl.bias.defined()) out = add_bias(out, wl.bias);
        }
        bn_key = b_eff;
        ++wi;
        break;
      }
      case LayerKind::bn: {
        SwitchableBN& sb = bn_at(static_cast<int>(i));
        std::vector<double> bm, bv;
        const bool use_batch = mode != Mode::eval;
        out = batch_norm(in, sb.gamma.at(bn_key), sb.beta.at(bn_key), use_batch,
                         sb.running_mean.at(bn_key), sb.running_var.at(bn_key),
                         spec_.bn_eps, &bm, &bv);
        if (mode == Mode::train) {
          auto& rm = sb.running_mean.at(bn_key);
          auto& rv = sb.running_var.at(bn_key);
          for (int c = 0; c < sb.channels; ++c) {
            rm[c] = spec_.bn_momentum * rm[c] + (1.0 - spec_.bn_momentum) * bm[c];
            rv[c] = spec_.bn_momentum * rv[c] + (1.0 - spec_.bn_momentum) * bv[c];
          }
        }
        break;
      }
      case LayerKind::relu:
        out = relu(in);
        break;
      case LayerKind::pool:
        out = l.pool == PoolKind::max2x2 ? maxpool2x2(in) : global_avg_pool(in);
        break;
      case LayerKind::residual_add:
        out = add(in, outs[l.residual_from]);
        break;
    }
    outs[i] = out;
  }
  return outs.back();
}

std::vector<Model::ParamRef> Model::trainable(const std::vector<int>& config) {
  const std::vector<int> eff = effective_bitwidths(config);
  std::vector<ParamRef> params;
  int qi = 0;
  int wi = 0;
  int bn_key = 32;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string base = "layer" + std::to_string(i);
    if (l.weighted()) {
      WeightedLayer& wl = weighted_[wi++];
      params.push_back({base + ".weight", wl.weight, true});
      if (wl.bias.defined()) params.push_back({base + ".bias", wl.bias, true});
      int b_eff = 32;
      if (l.quantized) b_eff = eff[qi++];
      if (b_eff != 32) {
        const std::string key = std::to_string(b_eff);
        params.push_back({base + ".log_alpha_w." + key, wl.log_alpha_w.at(b_eff), false});
        params.push_back({base + ".log_alpha_z." + key, wl.log_alpha_z.at(b_eff), false});
      }
      bn_key = b_eff;
    } else if (l.kind == LayerKind::bn) {
      SwitchableBN& sb = bn_at(static_cast<int>(i));
      const std::string key = std::to_string(bn_key);
      params.push_back({base + ".gamma." + key, sb.gamma.at(bn_key), false});
      params.push_back({base + ".beta." + key, sb.beta.at(bn_key), false});
    }
  }
  return params;
}

std::vector<Tensor> Model::trainable_params(const std::vector<int>& config) {
  std::vector<Tensor> params;
  for (auto& p : trainable(config)) params.push_back(p.tensor);
  return params;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& wl : weighted_) {
    const std::string base = "layer" + std::to_string(wl.spec_index);
    out.emplace_back(base + ".weight", wl.weight);
    if (wl.bias.defined()) out.emplace_back(base + ".bias", wl.bias);
    for (auto& [b, t] : wl.log_alpha_w) {
      out.emplace_back(base + ".log_alpha_w." + std::to_string(b), t);
    }
    for (auto& [b, t] : wl.log_alpha_z) {
      out.emplace_back(base + ".log_alpha_z." + std::to_string(b), t);
    }
  }
  for (auto& sb : bn_) {
    const std::string base = "layer" + std::to_string(sb.spec_index);
    for (auto& [b, t] : sb.gamma) out.emplace_back(base + ".gamma." + std::to_string(b), t);
    for (auto& [b, t] : sb.beta) out.emplace_back(base + ".beta." + std::to_string(b), t);
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::named_stats() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (auto& sb : bn_) {
    const std::string base = "layer" + std::to_string(sb.spec_index);
    for (auto& [b, v] : sb.running_mean) {
      out.emplace_back(base + ".running_mean." + std::to_string(b), &v);
    }
    for (auto& [b, v] : sb.running_var) {
      out.emplace_back(base + ".running_var." + std::to_string(b), &v);
    }
  }
  return out;
}

std::int64_t Model::weight_parameter_count() const {
  return spec_.weight_parameter_count();
}

std::int64_t Model::perturbation_size() const {
  std::int64_t n = 0;
  for (const auto& wl : weighted_) n += wl.weight.size();
  return n;
}

void Model::apply_perturbation(const std::vector<double>& eps) {
  if (static_cast<std::int64_t>(eps.size()) != perturbation_size()) {
    throw ValueError(spec_.name + ": perturbation holds " + std::to_string(eps.size()) +
                     " slots for " + std::to_string(perturbation_size()) + " weights");
  }
  perturbation_ = eps;
}

void Model::remove_perturbation() { perturbation_.clear(); }

}  // namespace saq
