#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "saq/error.hpp"
#include "saq/rng.hpp"

namespace saq {

class Tape;

namespace detail {
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;    // empty until allocated
  bool requires_grad = false;  // trainable leaf
  bool needs_grad = false;     // participates in some gradient path
  bool retain = false;         // keep upstream grad on this node after backward
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats with an optional gradient slot.
// Value-semantic handle; copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);
  // He-uniform fill over [-sqrt(6/fan_in), sqrt(6/fan_in)).
  static Tensor he_uniform(std::vector<int> shape, int fan_in, RandomStream& rng);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  std::int64_t size() const;
  double item() const;  // scalar tensors only

  std::vector<double>& values();
  const std::vector<double>& values() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  // Keep the upstream gradient on this (possibly non-leaf) tensor after backward.
  Tensor& retain_grad();

  bool has_grad() const;
  std::vector<double>& grad();              // allocates zero-filled on demand
  const std::vector<double>& grad() const;  // throws if absent
  void zero_grad();

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_op_output(std::vector<int> shape, std::vector<double> values,
                               const std::vector<Tensor>& inputs);
};

// Strict-finite mode: when on (default), any primitive that commits a NaN/Inf
// value or gradient raises NumericError naming the operation.
void set_strict_finite(bool on);
bool strict_finite();

// Gradient tape. Constructing a Tape makes it the active tape for the current
// thread; destruction restores the previous one. Each tape runs backward at
// most once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Reverse sweep from a scalar loss. Each recorded node is visited exactly
  // once, in reverse recording order. A second call on the same tape throws.
  void backward(const Tensor& loss);

  bool used() const { return used_; }
  std::size_t node_count() const { return nodes_.size(); }

  static Tape* current();

  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    // Maps the output gradient to per-input gradients; an empty entry means
    // no gradient flows to that input.
    std::function<std::vector<std::vector<double>>(const std::vector<double>&)> backward;
    std::string name;
  };

  void record(Node node);

 private:
  std::vector<Node> nodes_;
  bool used_ = false;
  Tape* prev_ = nullptr;
};

// ---- Differentiable primitives -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor sum(const Tensor& a);       // -> scalar
Tensor mean_all(const Tensor& a);  // -> scalar

// C[m x n] = A[m x k] * B[k x n]; backward dA = dC * B^T, dB = A^T * dC.
Tensor matmul(const Tensor& a, const Tensor& b);

// C[m x n] = A[m x k] * B[n x k]^T; backward dA = dC * B, dB = dC^T * A.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// y[N x K] = x[N x K'] rows plus bias[K]; here x is [N,K] and bias is [K].
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Cross-correlation with zero padding; x [N,C,H,W], w [F,C,k,k].
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);

// 2x2 max pooling with stride 2; ties resolve to the first cell in scan order.
Tensor maxpool2x2(const Tensor& x);

// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label]; max-subtraction stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Row-wise log softmax over the last dimension of a 2-D tensor.
Tensor log_softmax(const Tensor& a);

// Scalar view of one element, with scatter backward.
Tensor select_element(const Tensor& a, std::int64_t flat_index);

// Row r of table [R,E] as a [1,E] tensor, with scatter backward into the row.
Tensor embedding_row(const Tensor& table, int row);

// Per-row standardization of a 2-D tensor to zero mean / unit variance
// (biased variance, eps inside the square root), differentiable.
Tensor standardize_rows(const Tensor& a, double eps);

// Batch normalization over channel c of [N,C] or [N,C,H,W] input.
// With use_batch_stats the batch statistics normalize (and are reported via
// batch_mean/batch_var when non-null); otherwise the provided running stats do.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  bool use_batch_stats, const std::vector<double>& running_mean,
                  const std::vector<double>& running_var, double eps,
                  std::vector<double>* batch_mean, std::vector<double>* batch_var);

// ---- Custom-gradient extension point --------------------------------------

struct CustomGradRule {
  std::string name;
  // Output shape from input shapes.
  std::function<std::vector<int>(const std::vector<Tensor>&)> out_shape;
  // Forward values from input tensors.
  std::function<std::vector<double>(const std::vector<Tensor>&)> forward;
  // (output gradient, saved inputs) -> per-input gradients; empty entry = none.
  std::function<std::vector<std::vector<double>>(const std::vector<double>&,
                                                 const std::vector<Tensor>&)>
      backward;
};

using PrimitiveHandle = int;

PrimitiveHandle register_custom_grad(CustomGradRule rule);
Tensor apply_primitive(PrimitiveHandle handle, const std::vector<Tensor>& inputs);

// ---- Small helpers ---------------------------------------------------------

std::int64_t shape_size(const std::vector<int>& shape);
double l2_norm(const std::vector<double>& v);
double dot(const std::vector<double>& a, const std::vector<double>& b);
// FNV-1a over the raw bytes; used for parameter-isolation assertions.
std::uint64_t bytes_checksum(const std::vector<double>& v);

}  // namespace saq
