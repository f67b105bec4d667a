#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saq/controller.hpp"
#include "saq/net.hpp"
#include "saq/optim.hpp"

namespace saq {

// Versioned snapshot of everything a run needs to continue bit-exactly:
// resolved config text, model parameters and per-bitwidth statistics,
// optimizer velocity/step state, controller policy + Adam + search scalars,
// named seed streams, and the chosen bitwidths once a search has concluded.
// Serialization is canonical (std::map ordering, fixed field order), so
// save -> load -> save produces byte-identical files.
struct Checkpoint {
  std::string config_text;
  std::int64_t epoch = 0;

  std::map<std::string, std::vector<double>> model_params;
  std::map<std::string, std::vector<double>> model_stats;

  std::map<std::string, std::vector<double>> opt_velocity;
  std::int64_t opt_steps = 0;

  bool has_policy = false;
  std::map<std::string, std::vector<double>> policy_params;
  std::map<std::string, std::vector<double>> adam_m;
  std::map<std::string, std::vector<double>> adam_v;
  std::int64_t adam_t = 0;
  double baseline = 0.0;
  bool baseline_ready = false;
  std::int64_t search_epoch = 0;

  std::map<std::string, std::uint64_t> rng_state;
  std::vector<int> chosen_bits;

  // Copy in/out of the live objects. Restore throws FormatError when the
  // snapshot does not match the object's parameter names or sizes.
  void capture_model(Model& m);
  void restore_model(Model& m) const;
  void capture_optimizer(Optimizer& opt);
  void restore_optimizer(Optimizer& opt) const;
  void capture_policy(PolicyNet& p, const SearchState& st);
  void restore_policy(PolicyNet& p, SearchState& st) const;
};

// Canonical little-endian binary encoding (magic "SAQCKPT1", version 1).
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck);
// FormatError on bad magic/version/truncation inside the buffer.
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

// File wrappers; IoError on open/short read/short write.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace saq
