#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saq/data.hpp"
#include "saq/net.hpp"

namespace saq {

// A differentiable scalar loss over a flat coordinate vector theta, expressed
// as an offset from a fixed base point. Probes only ever evaluate near the
// base point, so implementations may cache whatever the base point needs.
class LossSurface {
 public:
  virtual ~LossSurface() = default;
  virtual int dim() const = 0;
  virtual double loss(const std::vector<double>& theta) = 0;
  virtual std::vector<double> gradient(const std::vector<double>& theta) = 0;
  // norm of the base point's coordinates; anchors the finite-difference step
  virtual double base_norm() const { return 0.0; }
};

// loss = 0.5 * theta^T A theta for a symmetric matrix A; gradient = A theta.
// The analytic fixture for Hessian-vector and eigenvalue oracles.
class QuadraticSurface : public LossSurface {
 public:
  explicit QuadraticSurface(std::vector<std::vector<double>> a);
  int dim() const override { return static_cast<int>(a_.size()); }
  double loss(const std::vector<double>& theta) override;
  std::vector<double> gradient(const std::vector<double>& theta) override;

 private:
  std::vector<std::vector<double>> a_;
};

// The model's loss over additive perturbations of its effective (quantized)
// weights, evaluated on a fixed probe batch. Uses eval-mode forwards, so
// probing never touches batch-norm statistics. theta has length
// model.perturbation_size(); gradients are taken with respect to the
// effective weights themselves (the post-quantization values). Probing the
// full-precision surface instead is just the all-32 config.
class ModelSurface : public LossSurface {
 public:
  ModelSurface(Model& model, const Batch& batch, std::vector<int> config);
  int dim() const override;
  double loss(const std::vector<double>& theta) override;
  std::vector<double> gradient(const std::vector<double>& theta) override;
  double base_norm() const override { return base_norm_; }

 private:
  Model& model_;
  const Batch& batch_;
  std::vector<int> config_;
  double base_norm_ = 0.0;
};

struct SpectrumResult {
  double lambda_max = 0.0;
  int iterations = 0;
  double residual = 0.0;  // ||Hv - lambda v|| at the returned unit v
  std::string probe;      // descriptor of what was probed
};

// Hessian-vector product by a central finite difference of gradients:
// Hv ~ [g(h v_hat) - g(-h v_hat)] / (2h) * ||v||, h = 1e-3 * (1 + ||base||)
// where base is the zero-offset gradient anchor (||theta|| at the center, 0
// for surfaces centered at their own base point). Exact for quadratics.
std::vector<double> hvp(LossSurface& surface, const std::vector<double>& v);
std::vector<double> hvp(Model& model, const Batch& batch, const std::vector<int>& config,
                        const std::vector<double>& v);

// Power iteration with a Rayleigh-quotient estimate, deterministic start
// vector from the seed. Stops when |lambda_t - lambda_{t-1}| / |lambda_t|
// < tol or after iters iterations. Converges to the eigenvalue of largest
// magnitude; for a loss Hessian near a minimum that is the top eigenvalue.
// The residual field reports ||Hv - lambda v|| at the returned estimate and
// is the caller's convergence evidence.
SpectrumResult lambda_max(LossSurface& surface, int iters, double tol, std::uint64_t seed);
SpectrumResult lambda_max(Model& model, const Batch& batch, const std::vector<int>& config,
                          int iters, double tol, std::uint64_t seed);

struct LandscapeGrid {
  std::vector<double> dir1, dir2;  // probe directions in weight space
  double halfwidth = 0.0;
  int resolution = 0;              // odd; grid is resolution x resolution
  std::vector<double> values;      // row-major; values[i*R + j] at
                                   // center + c[i]*dir1 + c[j]*dir2
  double center_loss = 0.0;
  std::uint64_t seed = 0;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * resolution + j]; }
};

// Loss over a 2-D slice spanned by two seeded Gaussian directions; the second
// is orthogonalized against the first. The surface overload uses unit
// directions; the model overload rescales each direction per filter to match
// that filter's effective-weight norm before orthogonalization.
LandscapeGrid landscape_slice(LossSurface& surface, double halfwidth, int resolution,
                              std::uint64_t seed);
LandscapeGrid landscape_slice(Model& model, const Batch& batch, const std::vector<int>& config,
                              double halfwidth, int resolution, std::uint64_t seed);

// Header line "# halfwidth=... resolution=... seed=... center_loss=..."
// followed by a space-delimited resolution x resolution matrix.
void write_landscape(const LandscapeGrid& grid, const std::string& path);

}  // namespace saq
