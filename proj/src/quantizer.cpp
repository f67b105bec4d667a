#include "saq/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace saq {

namespace {

void require_alpha(double alpha) {
  if (!(alpha > 0.0)) throw ValueError("clipping level must be strictly positive");
}

void require_bitwidth(int b) {
  if (b < 2 || b > 30) throw ValueError("bitwidth must lie in [2, 30]");
}

double levels(int b) { return static_cast<double>((1 << b) - 1); }

}  // namespace

void QuantSpec::validate() const {
  if (bitwidth_set.empty()) throw ConfigError("bitwidth set must not be empty");
  for (int b : bitwidth_set) {
    require_bitwidth(b);
    auto it_w = alpha_w.find(b);
    auto it_z = alpha_z.find(b);
    if (it_w == alpha_w.end() || it_z == alpha_z.end()) {
      throw ConfigError("clipping levels missing for bitwidth " + std::to_string(b));
    }
    if (!(it_w->second > 0.0) || !(it_z->second > 0.0)) {
      throw ConfigError("clipping levels must be strictly positive");
    }
  }
  for (const auto& [b, a] : alpha_w) {
    if (!(a > 0.0)) throw ConfigError("clipping levels must be strictly positive");
    (void)b;
  }
  for (const auto& [b, a] : alpha_z) {
    if (!(a > 0.0)) throw ConfigError("clipping levels must be strictly positive");
    (void)b;
  }
}

// ---- Scalar kernels ----------------------------------------------------------

double normalize_w_scalar(double w, double alpha_w) {
  require_alpha(alpha_w);
  return (std::clamp(w / alpha_w, -1.0, 1.0) + 1.0) / 2.0;
}

double normalize_z_scalar(double z, double alpha_z) {
  require_alpha(alpha_z);
  return std::clamp(z / alpha_z, 0.0, 1.0);
}

double discretize_scalar(double v_hat, int b) {
  require_bitwidth(b);
  if (v_hat < -1e-12 || v_hat > 1.0 + 1e-12) {
    throw ValueError("discretize input outside [0, 1]");
  }
  v_hat = std::clamp(v_hat, 0.0, 1.0);
  const double s = levels(b);
  return std::round(v_hat * s) / s;  // std::round ties away from zero
}

double quantize_w_scalar(double w, int b, double alpha_w) {
  return alpha_w * (2.0 * discretize_scalar(normalize_w_scalar(w, alpha_w), b) - 1.0);
}

double quantize_z_scalar(double z, int b, double alpha_z) {
  return alpha_z * discretize_scalar(normalize_z_scalar(z, alpha_z), b);
}

// ---- Straight-through branch gradients ----------------------------------------

double dqw_dw(double w, double alpha_w) {
  require_alpha(alpha_w);
  return std::abs(w) < alpha_w ? 1.0 : 0.0;
}

double dqw_dalpha(double w, int b, double alpha_w) {
  require_alpha(alpha_w);
  if (std::abs(w) >= alpha_w) return w > 0.0 ? 1.0 : -1.0;
  return (quantize_w_scalar(w, b, alpha_w) - w) / alpha_w;
}

double dqz_dz(double z, double alpha_z) {
  require_alpha(alpha_z);
  return (z > 0.0 && z < alpha_z) ? 1.0 : 0.0;
}

double dqz_dalpha(double z, int b, double alpha_z) {
  require_alpha(alpha_z);
  if (z >= alpha_z) return 1.0;
  if (z <= 0.0) return 0.0;
  return (quantize_z_scalar(z, b, alpha_z) - z) / alpha_z;
}

// ---- Forward-only tensor maps --------------------------------------------------

namespace {

template <typename F>
Tensor map_values(const Tensor& a, F&& f) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& in = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) ov[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor normalize_w(const Tensor& w, double alpha_w) {
  require_alpha(alpha_w);
  return map_values(w, [&](double x) { return normalize_w_scalar(x, alpha_w); });
}

Tensor normalize_z(const Tensor& z, double alpha_z) {
  require_alpha(alpha_z);
  return map_values(z, [&](double x) { return normalize_z_scalar(x, alpha_z); });
}

Tensor discretize(const Tensor& v_hat, int b) {
  require_bitwidth(b);
  return map_values(v_hat, [&](double x) { return discretize_scalar(x, b); });
}

Tensor quantize_w(const Tensor& w, int b, double alpha_w) {
  require_alpha(alpha_w);
  require_bitwidth(b);
  return map_values(w, [&](double x) { return quantize_w_scalar(x, b, alpha_w); });
}

Tensor quantize_z(const Tensor& z, int b, double alpha_z) {
  require_alpha(alpha_z);
  require_bitwidth(b);
  return map_values(z, [&](double x) { return quantize_z_scalar(x, b, alpha_z); });
}

// ---- Registered straight-through rules ------------------------------------------

namespace {

double scalar_input(const std::vector<Tensor>& in, std::size_t idx, const char* what) {
  if (idx >= in.size() || !in[idx].defined() || in[idx].size() != 1) {
    throw ShapeError(std::string(what) + " must be a defined scalar tensor");
  }
  return in[idx].values()[0];
}

SteRuleSet register_rules() {
  SteRuleSet set;

  CustomGradRule d_rule;
  d_rule.name = "ste_discretize";
  d_rule.out_shape = [](const std::vector<Tensor>& in) { return in.at(0).shape(); };
  d_rule.forward = [](const std::vector<Tensor>& in) {
    const int b = static_cast<int>(scalar_input(in, 1, "bitwidth"));
    std::vector<double> out(in[0].values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = discretize_scalar(in[0].values()[i], b);
    }
    return out;
  };
  d_rule.backward = [](const std::vector<double>& g, const std::vector<Tensor>&) {
    return std::vector<std::vector<double>>{g, {}};
  };
  set.discretize = register_custom_grad(d_rule);

  CustomGradRule cw_rule;
  cw_rule.name = "clip_w";
  cw_rule.out_shape = [](const std::vector<Tensor>& in) { return in.at(0).shape(); };
  cw_rule.forward = [](const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    require_alpha(alpha);
    std::vector<double> out(in[0].values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::clamp(in[0].values()[i], -alpha, alpha);
    }
    return out;
  };
  cw_rule.backward = [](const std::vector<double>& g, const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    const auto& w = in[0].values();
    std::vector<double> gw(g.size());
    double galpha = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(w[i]) < alpha) {
        gw[i] = g[i];
      } else {
        gw[i] = 0.0;
        galpha += g[i] * (w[i] > 0.0 ? 1.0 : -1.0);
      }
    }
    return std::vector<std::vector<double>>{std::move(gw), {galpha}};
  };
  set.clip_w = register_custom_grad(cw_rule);

  CustomGradRule cz_rule;
  cz_rule.name = "clip_z";
  cz_rule.out_shape = [](const std::vector<Tensor>& in) { return in.at(0).shape(); };
  cz_rule.forward = [](const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    require_alpha(alpha);
    std::vector<double> out(in[0].values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::clamp(in[0].values()[i], 0.0, alpha);
    }
    return out;
  };
  cz_rule.backward = [](const std::vector<double>& g, const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    const auto& z = in[0].values();
    std::vector<double> gz(g.size());
    double galpha = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (z[i] > 0.0 && z[i] < alpha) {
        gz[i] = g[i];
      } else {
        gz[i] = 0.0;
        if (z[i] >= alpha) galpha += g[i];
      }
    }
    return std::vector<std::vector<double>>{std::move(gz), {galpha}};
  };
  set.clip_z = register_custom_grad(cz_rule);

  CustomGradRule qw_rule;
  qw_rule.name = "ste_quantize_w";
  qw_rule.out_shape = [](const std::vector<Tensor>& in) { return in.at(0).shape(); };
  qw_rule.forward = [](const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    const int b = static_cast<int>(scalar_input(in, 2, "bitwidth"));
    require_alpha(alpha);
    std::vector<double> out(in[0].values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = quantize_w_scalar(in[0].values()[i], b, alpha);
    }
    return out;
  };
  qw_rule.backward = [](const std::vector<double>& g, const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    const int b = static_cast<int>(scalar_input(in, 2, "bitwidth"));
    const auto& w = in[0].values();
    std::vector<double> gw(g.size());
    double galpha = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gw[i] = g[i] * dqw_dw(w[i], alpha);
      galpha += g[i] * dqw_dalpha(w[i], b, alpha);
    }
    return std::vector<std::vector<double>>{std::move(gw), {galpha}, {}};
  };
  set.quantize_w = register_custom_grad(qw_rule);

  CustomGradRule qz_rule;
  qz_rule.name = "ste_quantize_z";
  qz_rule.out_shape = [](const std::vector<Tensor>& in) { return in.at(0).shape(); };
  qz_rule.forward = [](const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    const int b = static_cast<int>(scalar_input(in, 2, "bitwidth"));
    require_alpha(alpha);
    std::vector<double> out(in[0].values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = quantize_z_scalar(in[0].values()[i], b, alpha);
    }
    return out;
  };
  qz_rule.backward = [](const std::vector<double>& g, const std::vector<Tensor>& in) {
    const double alpha = scalar_input(in, 1, "clipping level");
    const int b = static_cast<int>(scalar_input(in, 2, "bitwidth"));
    const auto& z = in[0].values();
    std::vector<double> gz(g.size());
    double galpha = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gz[i] = g[i] * dqz_dz(z[i], alpha);
      galpha += g[i] * dqz_dalpha(z[i], b, alpha);
    }
    return std::vector<std::vector<double>>{std::move(gz), {galpha}, {}};
  };
  set.quantize_z = register_custom_grad(qz_rule);

  return set;
}

}  // namespace

const SteRuleSet& ste_rules() {
  static const SteRuleSet set = register_rules();
  return set;
}

Tensor quantize_w_ste(const Tensor& w, const Tensor& alpha, int b) {
  require_bitwidth(b);
  return apply_primitive(ste_rules().quantize_w, {w, alpha, Tensor::scalar(b)});
}

Tensor quantize_z_ste(const Tensor& z, const Tensor& alpha, int b) {
  require_bitwidth(b);
  return apply_primitive(ste_rules().quantize_z, {z, alpha, Tensor::scalar(b)});
}

Tensor weight_standardize(const Tensor& w, double eps) {
  const auto& s = w.shape();
  if (s.size() < 2) throw ShapeError("weight_standardize needs at least 2 dimensions");
  int cols = 1;
  for (std::size_t i = 1; i < s.size(); ++i) cols *= s[i];
  Tensor flat = reshape(w, {s[0], cols});
  return reshape(standardize_rows(flat, eps), s);
}

// ---- QuantizedView ---------------------------------------------------------------

QuantizedView::QuantizedView(Tensor weights, int bitwidth)
    : weights_(std::move(weights)), bitwidth_(bitwidth) {
  if (!weights_.defined()) throw ValueError("QuantizedView needs a defined tensor");
  require_bitwidth(bitwidth_);
}

const Tensor& QuantizedView::refresh(double alpha_w) {
  cache_ = quantize_w(weights_, bitwidth_, alpha_w);
  return cache_;
}

const Tensor& QuantizedView::cached() const {
  if (!cache_.defined()) throw ValueError("QuantizedView cache is empty; call refresh");
  return cache_;
}

}  // namespace saq
