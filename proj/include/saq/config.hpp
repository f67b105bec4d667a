#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace saq {

// One experiment, fully described. Plain key=value text with [section]
// headers; every key has the default shown here, unknown sections or keys are
// hard errors, and the canonical serialization (resolved_text) round-trips
// through the parser value-exactly, so a run is replayable from its logged
// config alone.
struct RunConfig {
  // [model]
  std::string model_kind = "mlp";  // mlp | miniconv | resnet20 | resnet18
  int in_features = 2;             // mlp input width
  int hidden = 32;                 // mlp hidden width
  int classes = 3;                 // output classes (shared with the dataset)
  bool mlp_bias = true;
  int in_channels = 1;             // miniconv input planes
  int in_hw = 8;                   // miniconv input side
  bool fixed_endpoints = false;    // pin first/last quantized layers to 8 bits
  std::vector<int> bitwidths{2, 3, 4, 5};
  std::uint64_t model_seed = 1;

  // [data]
  std::string data_kind = "gaussians";  // gaussians | moons | idx
  std::int64_t samples = 1024;          // synthetic sample count
  double noise = 0.3;
  std::uint64_t data_seed = 5;
  std::uint64_t split_seed = 17;
  std::string idx_images;  // data kind idx: image/label file paths
  std::string idx_labels;

  // [optim]
  std::string optimizer = "saq";  // sgd | sam | saq | asaq
  double lr = 0.1;
  std::string schedule = "cosine";  // constant | step | cosine
  std::vector<std::int64_t> milestones;
  double gamma = 0.1;
  std::int64_t total_steps = 0;  // cosine horizon; 0 means the epoch count
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double rho = 0.05;
  double xi = 1e-3;
  std::int64_t microbatch = 0;  // m-sharpness cap; 0 means the whole batch
  std::int64_t batch_size = 128;
  std::int64_t epochs = 30;
  std::uint64_t shuffle_seed = 0;

  // [bits]
  std::string bits_mode = "uniform";  // uniform | search
  int uniform_bits = 4;

  // [search]
  double budget = 0.0;             // absolute bit-operations; 0 defers to fraction
  double budget_fraction = 0.0125; // budget as a fraction of full-precision BOPs
  double search_beta = 1e-4;
  double search_alpha = 5e-3;
  std::int64_t search_epochs = 100;
  std::int64_t warmup_epochs = 10;
  std::int64_t top_k = 20;
  double reward_rho = 0.05;
  std::int64_t val_batch_size = 256;
  std::uint64_t search_seed = 0;

  // [probe]
  std::string probe_target = "model";  // quadratic | model
  std::int64_t probe_iters = 200;
  double probe_tol = 1e-7;
  std::uint64_t probe_seed = 12345;
  std::int64_t probe_samples = 500;  // rows of the probe batch

  // [landscape]
  double landscape_halfwidth = 1.0;
  int landscape_resolution = 25;
  std::uint64_t landscape_seed = 7;

  // [run]
  std::string out_dir = "runs";
  bool deterministic = true;  // force single-threaded kernels

  // Cross-field checks (enum values, positive sizes, bitwidth consistency).
  void validate() const;
};

// Parses config text; ConfigError on unknown sections/keys or bad values.
RunConfig parse_config_text(const std::string& text);

// Reads and parses a config file; IoError if unreadable.
RunConfig load_config(const std::string& path);

// Applies one "section.key=value" override (the CLI's --set form).
void apply_override(RunConfig& config, const std::string& assignment);

// Canonical full serialization: every field, fixed order, value-exact
// round-trip through parse_config_text.
std::string resolved_text(const RunConfig& config);

}  // namespace saq
