#include "saq/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>

#include "saq/kernels.hpp"

namespace saq {

namespace {

thread_local Tape* t_current_tape = nullptr;
std::atomic<bool> g_strict_finite{true};

void check_finite(const std::vector<double>& v, const char* op) {
  if (!strict_finite()) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

void set_strict_finite(bool on) { g_strict_finite.store(on); }
bool strict_finite() { return g_strict_finite.load(); }

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive");
    n *= d;
  }
  return n;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::uint64_t bytes_checksum(const std::vector<double>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->values.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values) {
  if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("from_values: value count does not match shape");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

Tensor Tensor::he_uniform(std::vector<int> shape, int fan_in, RandomStream& rng) {
  if (fan_in <= 0) throw ValueError("he_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / fan_in);
  Tensor t = zeros(std::move(shape));
  for (double& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

const std::vector<int>& Tensor::shape() const {
  if (!impl_) throw ValueError("undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::size() const {
  if (!impl_) throw ValueError("undefined tensor");
  return static_cast<std::int64_t>(impl_->values.size());
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is not scalar");
  return impl_->values[0];
}

std::vector<double>& Tensor::values() {
  if (!impl_) throw ValueError("undefined tensor");
  return impl_->values;
}

const std::vector<double>& Tensor::values() const {
  if (!impl_) throw ValueError("undefined tensor");
  return impl_->values;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw ValueError("undefined tensor");
  impl_->requires_grad = value;
  impl_->needs_grad = value;
  if (value && impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return *this;
}

Tensor& Tensor::retain_grad() {
  if (!impl_) throw ValueError("undefined tensor");
  impl_->retain = true;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::vector<double>& Tensor::grad() {
  if (!impl_) throw ValueError("undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!impl_ || impl_->grad.empty()) throw ValueError("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_) return;
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

// Creates the output of a primitive and propagates gradient-path membership.
Tensor make_op_output(std::vector<int> shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  for (const Tensor& in : inputs) {
    if (in.impl() && in.impl()->needs_grad) {
      impl->needs_grad = true;
      break;
    }
  }
  return Tensor(std::move(impl));
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
  prev_ = t_current_tape;
  t_current_tape = this;
}

Tape::~Tape() { t_current_tape = prev_; }

Tape* Tape::current() { return t_current_tape; }

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (used_) throw ValueError("backward already invoked for this tape");
  used_ = true;
  if (!loss.defined() || loss.size() != 1) {
    throw ValueError("backward: loss must be a defined scalar tensor");
  }
  auto loss_impl = loss.impl();
  if (!loss_impl->needs_grad) return;  // nothing recorded depends on parameters
  if (loss_impl->grad.empty()) loss_impl->grad.assign(1, 0.0);
  loss_impl->grad[0] += 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& node = *it;
    if (node.output->grad.empty()) continue;  // no gradient reached this node
    auto input_grads = node.backward(node.output->grad);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (i >= input_grads.size() || input_grads[i].empty()) continue;
      auto& in = node.inputs[i];
      if (!in->needs_grad) continue;
      if (strict_finite()) check_finite(input_grads[i], node.name.c_str());
      if (in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
      accumulate(in->grad, input_grads[i]);
    }
  }
}

namespace {

// Records a single-output node when a tape is active and gradients can flow.
void record_node(const std::vector<Tensor>& inputs, const Tensor& output,
                 std::function<std::vector<std::vector<double>>(const std::vector<double>&)>
                     backward,
                 const char* name) {
  Tape* tape = Tape::current();
  if (!tape || !output.impl()->needs_grad) return;
  Tape::Node node;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node.inputs.push_back(t.impl());
  node.output = output.impl();
  node.backward = std::move(backward);
  node.name = name;
  tape->record(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

// ---- Elementwise primitives -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  check_finite(out, "add");
  Tensor y = make_op_output(a.shape(), std::move(out), {a, b});
  record_node({a, b}, y,
              [](const std::vector<double>& g) {
                return std::vector<std::vector<double>>{g, g};
              },
              "add");
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  check_finite(out, "sub");
  Tensor y = make_op_output(a.shape(), std::move(out), {a, b});
  record_node({a, b}, y,
              [](const std::vector<double>& g) {
                std::vector<double> gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
                return std::vector<std::vector<double>>{g, std::move(gb)};
              },
              "sub");
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  check_finite(out, "mul");
  Tensor y = make_op_output(a.shape(), std::move(out), {a, b});
  auto av = a.impl();
  auto bv = b.impl();
  record_node({a, b}, y,
              [av, bv](const std::vector<double>& g) {
                std::vector<double> ga(g.size()), gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                  ga[i] = g[i] * bv->values[i];
                  gb[i] = g[i] * av->values[i];
                }
                return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
              },
              "mul");
  return y;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  check_finite(out, "scale");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  record_node({a}, y,
              [c](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "scale");
  return y;
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  check_finite(out, "add_scalar");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  record_node({a}, y,
              [](const std::vector<double>& g) {
                return std::vector<std::vector<double>>{g};
              },
              "add_scalar");
  return y;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp_op(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
  check_finite(out, "exp");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  auto yv = y.impl();
  record_node({a}, y,
              [yv](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * yv->values[i];
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "exp");
  return y;
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.values()[i]);
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  auto av = a.impl();
  record_node({a}, y,
              [av](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                  ga[i] = av->values[i] > 0.0 ? g[i] : 0.0;
                }
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "relu");
  return y;
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  check_finite(out, "sigmoid");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  auto yv = y.impl();
  record_node({a}, y,
              [yv](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                  const double s = yv->values[i];
                  ga[i] = g[i] * s * (1.0 - s);
                }
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "sigmoid");
  return y;
}

Tensor tanh_op(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  check_finite(out, "tanh");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  auto yv = y.impl();
  record_node({a}, y,
              [yv](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                  const double t = yv->values[i];
                  ga[i] = g[i] * (1.0 - t * t);
                }
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "tanh");
  return y;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size()) throw ShapeError("reshape: size mismatch");
  Tensor y = make_op_output(std::move(shape), a.values(), {a});
  record_node({a}, y,
              [](const std::vector<double>& g) {
                return std::vector<std::vector<double>>{g};
              },
              "reshape");
  return y;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  Tensor y = make_op_output({1}, {s}, {a});
  check_finite(y.values(), "sum");
  const std::size_t n = a.values().size();
  record_node({a}, y,
              [n](const std::vector<double>& g) {
                return std::vector<std::vector<double>>{std::vector<double>(n, g[0])};
              },
              "sum");
  return y;
}

Tensor mean_all(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ---- Linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw ShapeError("matmul: inputs must be 2-D");
  }
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw ShapeError("matmul: inner dimensions disagree");
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data());
  check_finite(out, "matmul");
  Tensor y = make_op_output({m, n}, std::move(out), {a, b});
  auto av = a.impl();
  auto bv = b.impl();
  record_node({a, b}, y,
              [av, bv, m, n, k](const std::vector<double>& g) {
                std::vector<double> ga(static_cast<std::size_t>(m) * k);
                std::vector<double> gb(static_cast<std::size_t>(k) * n);
                kernels::gemm(false, true, m, k, n, g.data(), bv->values.data(), ga.data());
                kernels::gemm(true, false, k, n, m, av->values.data(), g.data(), gb.data());
                return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
              },
              "matmul");
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw ShapeError("matmul_nt: inputs must be 2-D");
  }
  const int m = a.shape()[0], k = a.shape()[1];
  const int n = b.shape()[0], k2 = b.shape()[1];
  if (k != k2) throw ShapeError("matmul_nt: inner dimensions disagree");
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::gemm(false, true, m, n, k, a.values().data(), b.values().data(), out.data());
  check_finite(out, "matmul_nt");
  Tensor y = make_op_output({m, n}, std::move(out), {a, b});
  auto av = a.impl();
  auto bv = b.impl();
  record_node({a, b}, y,
              [av, bv, m, n, k](const std::vector<double>& g) {
                std::vector<double> ga(static_cast<std::size_t>(m) * k);
                std::vector<double> gb(static_cast<std::size_t>(n) * k);
                kernels::gemm(false, false, m, k, n, g.data(), bv->values.data(), ga.data());
                kernels::gemm(true, false, n, k, m, g.data(), av->values.data(), gb.data());
                return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
              },
              "matmul_nt");
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 2 || bias.shape().size() != 1 ||
      x.shape()[1] != bias.shape()[0]) {
    throw ShapeError("add_bias: expected [N,K] plus [K]");
  }
  const int n = x.shape()[0], k = x.shape()[1];
  std::vector<double> out(x.values().size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      out[static_cast<std::size_t>(i) * k + j] =
          x.values()[static_cast<std::size_t>(i) * k + j] + bias.values()[j];
    }
  }
  check_finite(out, "add_bias");
  Tensor y = make_op_output(x.shape(), std::move(out), {x, bias});
  record_node({x, bias}, y,
              [n, k](const std::vector<double>& g) {
                std::vector<double> gb(k, 0.0);
                for (int i = 0; i < n; ++i) {
                  for (int j = 0; j < k; ++j) gb[j] += g[static_cast<std::size_t>(i) * k + j];
                }
                return std::vector<std::vector<double>>{g, std::move(gb)};
              },
              "add_bias");
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4) {
    throw ShapeError("conv2d: expected 4-D input and filter");
  }
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (pad < 0) throw ValueError("conv2d: pad must be >= 0");
  kernels::Conv2dGeom g;
  g.batch = x.shape()[0];
  g.in_channels = x.shape()[1];
  g.in_h = x.shape()[2];
  g.in_w = x.shape()[3];
  g.out_channels = w.shape()[0];
  g.kernel = w.shape()[2];
  if (w.shape()[1] != g.in_channels) throw ShapeError("conv2d: channel mismatch");
  if (w.shape()[3] != g.kernel) throw ShapeError("conv2d: filters must be square");
  g.stride = stride;
  g.pad = pad;
  g.out_h = (g.in_h + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kernel) / stride + 1;
  if (g.kernel > g.in_h + 2 * pad || g.kernel > g.in_w + 2 * pad || g.out_h <= 0 ||
      g.out_w <= 0) {
    throw ShapeError("conv2d: non-positive output extent");
  }
  std::vector<double> out(static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h *
                          g.out_w);
  kernels::conv2d_forward(g, x.values().data(), w.values().data(), out.data());
  check_finite(out, "conv2d");
  Tensor y = make_op_output({g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out),
                            {x, w});
  auto xv = x.impl();
  auto wv = w.impl();
  record_node({x, w}, y,
              [xv, wv, g](const std::vector<double>& dy) {
                std::vector<double> dx(xv->values.size());
                std::vector<double> dw(wv->values.size());
                kernels::conv2d_backward_input(g, dy.data(), wv->values.data(), dx.data());
                kernels::conv2d_backward_weight(g, dy.data(), xv->values.data(), dw.data());
                return std::vector<std::vector<double>>{std::move(dx), std::move(dw)};
              },
              "conv2d");
  return y;
}

Tensor maxpool2x2(const Tensor& x) {
  if (x.shape().size() != 4) throw ShapeError("maxpool2x2: expected 4-D input");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2x2: spatial extents must be even");
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(n) * c * oh * ow);
  std::vector<std::int64_t> argmax(out.size());
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = 0;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const std::int64_t idx =
                  ((static_cast<std::int64_t>(ni) * c + ci) * h + 2 * i + di) * w + 2 * j +
                  dj;
              if (x.values()[idx] > best) {
                best = x.values()[idx];
                best_idx = idx;
              }
            }
          }
          const std::int64_t oidx =
              ((static_cast<std::int64_t>(ni) * c + ci) * oh + i) * ow + j;
          out[oidx] = best;
          argmax[oidx] = best_idx;
        }
      }
    }
  }
  Tensor y = make_op_output({n, c, oh, ow}, std::move(out), {x});
  const std::size_t in_size = x.values().size();
  record_node({x}, y,
              [argmax, in_size](const std::vector<double>& g) {
                std::vector<double> gx(in_size, 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                return std::vector<std::vector<double>>{std::move(gx)};
              },
              "maxpool2x2");
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.shape().size() != 4) throw ShapeError("global_avg_pool: expected 4-D input");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const double inv = 1.0 / (static_cast<double>(h) * w);
  std::vector<double> out(static_cast<std::size_t>(n) * c, 0.0);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * h * w;
      for (int k = 0; k < h * w; ++k) acc += x.values()[base + k];
      out[static_cast<std::size_t>(ni) * c + ci] = acc * inv;
    }
  }
  check_finite(out, "global_avg_pool");
  Tensor y = make_op_output({n, c}, std::move(out), {x});
  record_node({x}, y,
              [n, c, h, w, inv](const std::vector<double>& g) {
                std::vector<double> gx(static_cast<std::size_t>(n) * c * h * w);
                for (int ni = 0; ni < n; ++ni) {
                  for (int ci = 0; ci < c; ++ci) {
                    const double gv = g[static_cast<std::size_t>(ni) * c + ci] * inv;
                    const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * h * w;
                    for (int k = 0; k < h * w; ++k) gx[base + k] = gv;
                  }
                }
                return std::vector<std::vector<double>>{std::move(gx)};
              },
              "global_avg_pool");
  return y;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw ShapeError("softmax_cross_entropy: logits must be 2-D");
  const int n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= k) throw ValueError("softmax_cross_entropy: label out of range");
  }
  // softmax probabilities with max subtraction, saved for backward
  std::vector<double> probs(static_cast<std::size_t>(n) * k);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits.values().data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (int j = 0; j < k; ++j) {
      probs[static_cast<std::size_t>(i) * k + j] = std::exp(row[j] - mx) / denom;
    }
    loss -= (row[labels[i]] - mx) - log_denom;
  }
  loss /= n;
  check_finite({loss}, "softmax_cross_entropy");
  Tensor y = make_op_output({1}, {loss}, {logits});
  record_node({logits}, y,
              [probs = std::move(probs), labels, n, k](const std::vector<double>& g) {
                std::vector<double> gl(static_cast<std::size_t>(n) * k);
                const double scale = g[0] / n;
                for (int i = 0; i < n; ++i) {
                  for (int j = 0; j < k; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                    gl[idx] = scale * (probs[idx] - (labels[i] == j ? 1.0 : 0.0));
                  }
                }
                return std::vector<std::vector<double>>{std::move(gl)};
              },
              "softmax_cross_entropy");
  return y;
}

Tensor log_softmax(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("log_softmax: input must be 2-D");
  const int n = a.shape()[0], k = a.shape()[1];
  std::vector<double> out(a.values().size());
  for (int i = 0; i < n; ++i) {
    const double* row = a.values().data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = row[j] - lse;
  }
  check_finite(out, "log_softmax");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  auto yv = y.impl();
  record_node({a}, y,
              [yv, n, k](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (int i = 0; i < n; ++i) {
                  double gsum = 0.0;
                  for (int j = 0; j < k; ++j) gsum += g[static_cast<std::size_t>(i) * k + j];
                  for (int j = 0; j < k; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                    ga[idx] = g[idx] - std::exp(yv->values[idx]) * gsum;
                  }
                }
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "log_softmax");
  return y;
}

Tensor select_element(const Tensor& a, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a.size()) {
    throw ValueError("select_element: index out of range");
  }
  Tensor y = make_op_output({1}, {a.values()[flat_index]}, {a});
  const std::size_t n = a.values().size();
  record_node({a}, y,
              [flat_index, n](const std::vector<double>& g) {
                std::vector<double> ga(n, 0.0);
                ga[flat_index] = g[0];
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "select_element");
  return y;
}

Tensor embedding_row(const Tensor& table, int row) {
  if (table.shape().size() != 2) throw ShapeError("embedding_row: table must be 2-D");
  const int rows = table.shape()[0], cols = table.shape()[1];
  if (row < 0 || row >= rows) throw ValueError("embedding_row: row out of range");
  std::vector<double> out(table.values().begin() + static_cast<std::size_t>(row) * cols,
                          table.values().begin() + static_cast<std::size_t>(row + 1) * cols);
  Tensor y = make_op_output({1, cols}, std::move(out), {table});
  record_node({table}, y,
              [row, rows, cols](const std::vector<double>& g) {
                std::vector<double> gt(static_cast<std::size_t>(rows) * cols, 0.0);
                for (int j = 0; j < cols; ++j) gt[static_cast<std::size_t>(row) * cols + j] = g[j];
                return std::vector<std::vector<double>>{std::move(gt)};
              },
              "embedding_row");
  return y;
}

Tensor standardize_rows(const Tensor& a, double eps) {
  if (a.shape().size() != 2) throw ShapeError("standardize_rows: input must be 2-D");
  const int n = a.shape()[0], k = a.shape()[1];
  std::vector<double> out(a.values().size());
  std::vector<double> inv_std(n);
  for (int i = 0; i < n; ++i) {
    const double* row = a.values().data() + static_cast<std::size_t>(i) * k;
    double mu = 0.0;
    for (int j = 0; j < k; ++j) mu += row[j];
    mu /= k;
    double var = 0.0;
    for (int j = 0; j < k; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= k;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < k; ++j) {
      out[static_cast<std::size_t>(i) * k + j] = (row[j] - mu) * inv_std[i];
    }
  }
  check_finite(out, "standardize_rows");
  Tensor y = make_op_output(a.shape(), std::move(out), {a});
  auto yv = y.impl();
  record_node({a}, y,
              [yv, inv_std = std::move(inv_std), n, k](const std::vector<double>& g) {
                std::vector<double> ga(g.size());
                for (int i = 0; i < n; ++i) {
                  const std::size_t base = static_cast<std::size_t>(i) * k;
                  double gmean = 0.0, gymean = 0.0;
                  for (int j = 0; j < k; ++j) {
                    gmean += g[base + j];
                    gymean += g[base + j] * yv->values[base + j];
                  }
                  gmean /= k;
                  gymean /= k;
                  for (int j = 0; j < k; ++j) {
                    ga[base + j] =
                        inv_std[i] * (g[base + j] - gmean - yv->values[base + j] * gymean);
                  }
                }
                return std::vector<std::vector<double>>{std::move(ga)};
              },
              "standardize_rows");
  return y;
}

namespace {

// Channel geometry for batch_norm: [N,C] or [N,C,H,W] inputs.
struct BnGeom {
  int channels = 0;
  std::int64_t per_channel = 0;  // reduction size per channel
  std::int64_t spatial = 0;      // H*W (1 for 2-D inputs)
  int batch = 0;
};

BnGeom bn_geom(const Tensor& x) {
  BnGeom g;
  const auto& s = x.shape();
  if (s.size() == 2) {
    g.batch = s[0];
    g.channels = s[1];
    g.spatial = 1;
  } else if (s.size() == 4) {
    g.batch = s[0];
    g.channels = s[1];
    g.spatial = static_cast<std::int64_t>(s[2]) * s[3];
  } else {
    throw ShapeError("batch_norm: input must be 2-D or 4-D");
  }
  g.per_channel = static_cast<std::int64_t>(g.batch) * g.spatial;
  return g;
}

inline std::int64_t bn_index(const BnGeom& g, int n, int c, std::int64_t s) {
  return (static_cast<std::int64_t>(n) * g.channels + c) * g.spatial + s;
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  bool use_batch_stats, const std::vector<double>& running_mean,
                  const std::vector<double>& running_var, double eps,
                  std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  const BnGeom g = bn_geom(x);
  if (gamma.size() != g.channels || beta.size() != g.channels) {
    throw ShapeError("batch_norm: affine parameter size mismatch");
  }
  std::vector<double> mean(g.channels, 0.0), var(g.channels, 0.0);
  if (use_batch_stats) {
    for (int c = 0; c < g.channels; ++c) {
      double mu = 0.0;
      for (int n = 0; n < g.batch; ++n) {
        for (std::int64_t s = 0; s < g.spatial; ++s) mu += x.values()[bn_index(g, n, c, s)];
      }
      mu /= static_cast<double>(g.per_channel);
      double v = 0.0;
      for (int n = 0; n < g.batch; ++n) {
        for (std::int64_t s = 0; s < g.spatial; ++s) {
          const double d = x.values()[bn_index(g, n, c, s)] - mu;
          v += d * d;
        }
      }
      v /= static_cast<double>(g.per_channel);
      mean[c] = mu;
      var[c] = v;
    }
  } else {
    if (static_cast<int>(running_mean.size()) != g.channels ||
        static_cast<int>(running_var.size()) != g.channels) {
      throw ShapeError("batch_norm: running stats size mismatch");
    }
    mean = running_mean;
    var = running_var;
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  std::vector<double> inv_std(g.channels);
  for (int c = 0; c < g.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  std::vector<double> out(x.values().size());
  for (int n = 0; n < g.batch; ++n) {
    for (int c = 0; c < g.channels; ++c) {
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const std::int64_t i = bn_index(g, n, c, s);
        out[i] = gamma.values()[c] * (x.values()[i] - mean[c]) * inv_std[c] +
                 beta.values()[c];
      }
    }
  }
  check_finite(out, "batch_norm");
  Tensor y = make_op_output(x.shape(), std::move(out), {x, gamma, beta});
  auto xv = x.impl();
  auto gv = gamma.impl();
  record_node(
      {x, gamma, beta}, y,
      [xv, gv, g, mean = std::move(mean), inv_std = std::move(inv_std),
       use_batch_stats](const std::vector<double>& dy) {
        std::vector<double> dx(xv->values.size());
        std::vector<double> dgamma(g.channels, 0.0), dbeta(g.channels, 0.0);
        for (int c = 0; c < g.channels; ++c) {
          // per-channel reductions in fixed (n, s) order
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < g.batch; ++n) {
            for (std::int64_t s = 0; s < g.spatial; ++s) {
              const std::int64_t i = bn_index(g, n, c, s);
              const double xhat = (xv->values[i] - mean[c]) * inv_std[c];
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * xhat;
            }
          }
          dgamma[c] = sum_dy_xhat;
          dbeta[c] = sum_dy;
          const double m = static_cast<double>(g.per_channel);
          for (int n = 0; n < g.batch; ++n) {
            for (std::int64_t s = 0; s < g.spatial; ++s) {
              const std::int64_t i = bn_index(g, n, c, s);
              const double xhat = (xv->values[i] - mean[c]) * inv_std[c];
              if (use_batch_stats) {
                dx[i] = gv->values[c] * inv_std[c] *
                        (dy[i] - sum_dy / m - xhat * sum_dy_xhat / m);
              } else {
                dx[i] = gv->values[c] * inv_std[c] * dy[i];
              }
            }
          }
        }
        return std::vector<std::vector<double>>{std::move(dx), std::move(dgamma),
                                                std::move(dbeta)};
      },
      "batch_norm");
  return y;
}

// ---- Custom-gradient registry ------------------------------------------------

namespace {
std::mutex g_registry_mutex;
std::vector<CustomGradRule>& registry() {
  static std::vector<CustomGradRule> rules;
  return rules;
}
}  // namespace

PrimitiveHandle register_custom_grad(CustomGradRule rule) {
  std::lock_guard<std::mutex> lock(g_registry_mutex);
  registry().push_back(std::move(rule));
  return static_cast<PrimitiveHandle>(registry().size() - 1);
}

Tensor apply_primitive(PrimitiveHandle handle, const std::vector<Tensor>& inputs) {
  CustomGradRule rule;
  {
    std::lock_guard<std::mutex> lock(g_registry_mutex);
    if (handle < 0 || handle >= static_cast<PrimitiveHandle>(registry().size())) {
      throw ValueError("apply_primitive: unknown primitive handle");
    }
    rule = registry()[handle];
  }
  std::vector<int> out_shape = rule.out_shape(inputs);
  std::vector<double> out = rule.forward(inputs);
  if (shape_size(out_shape) != static_cast<std::int64_t>(out.size())) {
    throw ShapeError(rule.name + ": forward output size does not match declared shape");
  }
  check_finite(out, rule.name.c_str());
  Tensor y = make_op_output(std::move(out_shape), std::move(out), inputs);
  Tape* tape = Tape::current();
  if (tape && y.impl()->needs_grad) {
    Tape::Node node;
    for (const Tensor& t : inputs) node.inputs.push_back(t.impl());
    node.output = y.impl();
    node.name = rule.name;
    node.backward = [rule, inputs](const std::vector<double>& g) {
      auto grads = rule.backward(g, inputs);
      for (std::size_t i = 0; i < grads.size() && i < inputs.size(); ++i) {
        if (!grads[i].empty() && grads[i].size() != inputs[i].values().size()) {
          throw ShapeError(rule.name + ": backward gradient shape mismatch");
        }
      }
      return grads;
    };
    tape->record(std::move(node));
  }
  return y;
}

}  // namespace saq
