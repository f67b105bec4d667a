#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "saq/tensor.hpp"

namespace saq {

// Immutable sample collection: features [N, ...] plus integer labels [N].
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  int classes = 0;
  std::string split = "train";  // train | val | test

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }

  // Checks label range and N-consistency between features and labels.
  void validate() const;
};

enum class SyntheticKind { gaussians, moons };

SyntheticKind synthetic_kind_from_string(const std::string& name);

// Deterministic synthetic classification sets for desk-scale experiments.
//   gaussians: class means evenly spaced on a circle of radius 2 in a 2-D
//              feature plane, isotropic Gaussian noise, uniform random labels.
//   moons:     two interleaved half-circle arcs (classes must be 2).
Dataset make_synthetic(SyntheticKind kind, std::int64_t n, int classes, double noise,
                       std::uint64_t seed);
Dataset make_synthetic(const std::string& kind, std::int64_t n, int classes, double noise,
                       std::uint64_t seed);

// IDX binary image/label pair (big-endian, magic-typed; .gz transparent).
// Pixels scale to [0, 1]; images come back as [N, 1, rows, cols].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx for fixtures and round-trips: features must hold
// exact multiples of 1/255 in [0, 1]. Paths ending in .gz are compressed.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Disjoint, exhaustive, stratified 50/50 split (per-class imbalance <= 1).
// First half is tagged "train", second "val".
std::pair<Dataset, Dataset> split_half(const Dataset& ds, std::uint64_t seed);

struct Batch {
  Tensor x;                 // [B, ...]
  std::vector<int> labels;  // [B]
};

// One seeded-shuffle epoch materialized as batches, in iteration order.
// Callers derive a fresh seed per epoch for reshuffling.
std::vector<Batch> make_batches(const Dataset& ds, std::int64_t batch_size,
                                std::uint64_t seed, bool drop_last);

// Gathers an arbitrary row subset into a batch (used by microbatch engines).
Batch gather_batch(const Dataset& ds, const std::vector<std::int64_t>& rows);

}  // namespace saq
