#include "saq/probe.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include "saq/error.hpp"
#include "saq/rng.hpp"
#include "saq/tensor.hpp"

namespace saq {

namespace {

void check_dim(const LossSurface& surface, const std::vector<double>& v, const char* what) {
  if (static_cast<int>(v.size()) != surface.dim()) {
    throw ValueError(std::string(what) + ": expected length " + std::to_string(surface.dim()) +
                     ", got " + std::to_string(v.size()));
  }
}

}  // namespace

// ---- QuadraticSurface ----------------------------------------------------

QuadraticSurface::QuadraticSurface(std::vector<std::vector<double>> a) : a_(std::move(a)) {
  const std::size_t n = a_.size();
  if (n == 0) throw ValueError("quadratic surface needs a non-empty matrix");
  for (const auto& row : a_) {
    if (row.size() != n) throw ValueError("quadratic surface matrix must be square");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a_[i][j] - a_[j][i]) > 1e-12 * (1.0 + std::abs(a_[i][j]))) {
        throw ValueError("quadratic surface matrix must be symmetric");
      }
    }
  }
}

double QuadraticSurface::loss(const std::vector<double>& theta) {
  check_dim(*this, theta, "loss point");
  return 0.5 * dot(theta, gradient(theta));
}

std::vector<double> QuadraticSurface::gradient(const std::vector<double>& theta) {
  check_dim(*this, theta, "gradient point");
  std::vector<double> g(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    for (std::size_t j = 0; j < theta.size(); ++j) g[i] += a_[i][j] * theta[j];
  }
  return g;
}

// ---- ModelSurface ----------------------------------------------------------

ModelSurface::ModelSurface(Model& model, const Batch& batch, std::vector<int> config)
    : model_(model), batch_(batch), config_(std::move(config)) {
  if (batch_.x.shape().empty() || batch_.x.shape()[0] < 1) {
    throw ValueError("probe batch must hold at least one sample");
  }
  if (batch_.labels.size() != static_cast<std::size_t>(batch_.x.shape()[0])) {
    throw ValueError("probe batch labels do not match its rows");
  }
  model_.forward(batch_.x, config_, Model::Mode::eval);
  double n2 = 0.0;
  for (const Tensor& q : model_.last_effective_weights()) {
    for (double v : q.values()) n2 += v * v;
  }
  base_norm_ = std::sqrt(n2);
}

int ModelSurface::dim() const { return static_cast<int>(model_.perturbation_size()); }

double ModelSurface::loss(const std::vector<double>& theta) {
  check_dim(*this, theta, "loss point");
  model_.apply_perturbation(theta);
  Tensor logits = model_.forward(batch_.x, config_, Model::Mode::eval);
  const double value = softmax_cross_entropy(logits, batch_.labels).item();
  model_.remove_perturbation();
  return value;
}

std::vector<double> ModelSurface::gradient(const std::vector<double>& theta) {
  check_dim(*this, theta, "gradient point");
  model_.apply_perturbation(theta);
  std::vector<double> grad;
  grad.reserve(theta.size());
  {
    Tape tape;
    Tensor logits = model_.forward(batch_.x, config_, Model::Mode::eval);
    Tensor loss = softmax_cross_entropy(logits, batch_.labels);
    tape.backward(loss);
    for (const Tensor& q : model_.last_effective_weights()) {
      const auto& g = q.grad();
      grad.insert(grad.end(), g.begin(), g.end());
    }
  }
  model_.remove_perturbation();
  return grad;
}

// ---- Hessian-vector products ------------------------------------------------

std::vector<double> hvp(LossSurface& surface, const std::vector<double>& v) {
  check_dim(surface, v, "hvp direction");
  const double vn = l2_norm(v);
  if (!(vn > 0.0)) throw ValueError("hvp direction must be nonzero");
  const double h = 1e-3 * (1.0 + surface.base_norm());

  std::vector<double> point(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) point[i] = h * v[i] / vn;
  const std::vector<double> gp = surface.gradient(point);
  for (auto& p : point) p = -p;
  const std::vector<double> gm = surface.gradient(point);

  std::vector<double> hv(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) hv[i] = (gp[i] - gm[i]) / (2.0 * h) * vn;
  return hv;
}

std::vector<double> hvp(Model& model, const Batch& batch, const std::vector<int>& config,
                        const std::vector<double>& v) {
  ModelSurface surface(model, batch, config);
  return hvp(surface, v);
}

// ---- Power iteration ----------------------------------------------------------

SpectrumResult lambda_max(LossSurface& surface, int iters, double tol, std::uint64_t seed) {
  if (iters < 1) throw ValueError("power iteration needs iters >= 1");
  if (!(tol >= 0.0)) throw ValueError("power iteration needs tol >= 0");

  RandomStream rng(seed);
  std::vector<double> v(static_cast<std::size_t>(surface.dim()));
  for (auto& x : v) x = rng.normal();
  const double n0 = l2_norm(v);
  for (auto& x : v) x /= n0;

  SpectrumResult out;
  out.probe = "dim=" + std::to_string(surface.dim());
  double prev = 0.0;
  for (int k = 1; k <= iters; ++k) {
    const std::vector<double> u = hvp(surface, v);  // v is unit length
    const double lam = dot(v, u);
    double r2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = u[i] - lam * v[i];
      r2 += d * d;
    }
    out.lambda_max = lam;
    out.residual = std::sqrt(r2);
    out.iterations = k;

    const double un = l2_norm(u);
    if (un < 1e-300) {
      out.lambda_max = 0.0;  // v is in the kernel: exact eigenpair
      out.residual = 0.0;
      break;
    }
    const bool converged =
        k > 1 && std::abs(lam - prev) / std::max(std::abs(lam), 1e-300) < tol;
    prev = lam;
    if (converged) break;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = u[i] / un;
  }
  return out;
}

SpectrumResult lambda_max(Model& model, const Batch& batch, const std::vector<int>& config,
                          int iters, double tol, std::uint64_t seed) {
  ModelSurface surface(model, batch, config);
  SpectrumResult out = lambda_max(surface, iters, tol, seed);
  out.probe = "n=" + std::to_string(batch.x.shape()[0]) + " " + out.probe;
  return out;
}

// ---- Landscape slices ----------------------------------------------------------

namespace {

std::vector<double> grid_coords(double halfwidth, int resolution) {
  // center coordinate is exactly zero; endpoints exactly +-halfwidth
  const int m = (resolution - 1) / 2;
  std::vector<double> c(static_cast<std::size_t>(resolution));
  for (int i = 0; i < resolution; ++i) {
    c[static_cast<std::size_t>(i)] = m == 0 ? 0.0 : halfwidth * (i - m) / m;
  }
  return c;
}

void check_grid_args(double halfwidth, int resolution) {
  if (!(halfwidth > 0.0)) throw ValueError("landscape halfwidth must be positive");
  if (resolution < 1 || resolution % 2 == 0) {
    throw ValueError("landscape resolution must be odd and positive");
  }
}

LandscapeGrid evaluate_grid(LossSurface& surface, std::vector<double> d1, std::vector<double> d2,
                            double halfwidth, int resolution, std::uint64_t seed) {
  LandscapeGrid grid;
  grid.dir1 = std::move(d1);
  grid.dir2 = std::move(d2);
  grid.halfwidth = halfwidth;
  grid.resolution = resolution;
  grid.seed = seed;
  const auto coords = grid_coords(halfwidth, resolution);
  grid.values.resize(static_cast<std::size_t>(resolution) * resolution);
  std::vector<double> theta(grid.dir1.size());
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      const double a = coords[static_cast<std::size_t>(i)];
      const double b = coords[static_cast<std::size_t>(j)];
      for (std::size_t t = 0; t < theta.size(); ++t) {
        theta[t] = a * grid.dir1[t] + b * grid.dir2[t];
      }
      grid.values[static_cast<std::size_t>(i) * resolution + j] = surface.loss(theta);
    }
  }
  grid.center_loss = grid.at((resolution - 1) / 2, (resolution - 1) / 2);
  return grid;
}

void orthogonalize(std::vector<double>& d2, const std::vector<double>& d1) {
  const double n1 = dot(d1, d1);
  if (n1 < 1e-300) return;
  const double c = dot(d2, d1) / n1;
  for (std::size_t i = 0; i < d2.size(); ++i) d2[i] -= c * d1[i];
}

}  // namespace

LandscapeGrid landscape_slice(LossSurface& surface, double halfwidth, int resolution,
                              std::uint64_t seed) {
  check_grid_args(halfwidth, resolution);
  RandomStream rng(seed);
  std::vector<double> d1(static_cast<std::size_t>(surface.dim()));
  std::vector<double> d2(d1.size());
  for (auto& x : d1) x = rng.normal();
  for (auto& x : d2) x = rng.normal();
  orthogonalize(d2, d1);
  for (auto* d : {&d1, &d2}) {
    const double n = l2_norm(*d);
    if (n > 0.0) {
      for (auto& x : *d) x /= n;
    }
  }
  return evaluate_grid(surface, std::move(d1), std::move(d2), halfwidth, resolution, seed);
}

LandscapeGrid landscape_slice(Model& model, const Batch& batch, const std::vector<int>& config,
                              double halfwidth, int resolution, std::uint64_t seed) {
  check_grid_args(halfwidth, resolution);
  ModelSurface surface(model, batch, config);

  // filter norms of the effective weights at the center point
  model.forward(batch.x, config, Model::Mode::eval);
  std::vector<double> weights;
  std::vector<std::int64_t> filter_sizes;
  {
    const auto eff = model.last_effective_weights();
    const auto& layers = model.weighted();
    for (std::size_t li = 0; li < eff.size(); ++li) {
      const auto& shape = layers[li].weight.shape();
      std::int64_t per_filter = 1;
      for (std::size_t d = 1; d < shape.size(); ++d) per_filter *= shape[d];
      const auto& v = eff[li].values();
      weights.insert(weights.end(), v.begin(), v.end());
      for (int f = 0; f < shape[0]; ++f) filter_sizes.push_back(per_filter);
    }
  }

  RandomStream rng(seed);
  std::vector<double> d1(weights.size()), d2(weights.size());
  for (auto& x : d1) x = rng.normal();
  for (auto& x : d2) x = rng.normal();
  auto filter_normalize = [&](std::vector<double>& d) {
    std::size_t off = 0;
    for (const std::int64_t fs : filter_sizes) {
      double wn = 0.0, dn = 0.0;
      for (std::int64_t i = 0; i < fs; ++i) {
        wn += weights[off + i] * weights[off + i];
        dn += d[off + i] * d[off + i];
      }
      const double s = dn < 1e-300 ? 0.0 : std::sqrt(wn / dn);
      for (std::int64_t i = 0; i < fs; ++i) d[off + i] *= s;
      off += static_cast<std::size_t>(fs);
    }
  };
  filter_normalize(d1);
  filter_normalize(d2);
  orthogonalize(d2, d1);
  return evaluate_grid(surface, std::move(d1), std::move(d2), halfwidth, resolution, seed);
}

void write_landscape(const LandscapeGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char header[160];
  std::snprintf(header, sizeof(header), "# halfwidth=%.17g resolution=%d seed=%llu center_loss=%.17g",
                grid.halfwidth, grid.resolution,
                static_cast<unsigned long long>(grid.seed), grid.center_loss);
  out << header << '\n';
  char cell[32];
  for (int i = 0; i < grid.resolution; ++i) {
    for (int j = 0; j < grid.resolution; ++j) {
      std::snprintf(cell, sizeof(cell), "%.17g", grid.at(i, j));
      out << cell << (j + 1 == grid.resolution ? "\n" : " ");
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace saq
