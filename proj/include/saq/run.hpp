#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "saq/config.hpp"
#include "saq/costmodel.hpp"
#include "saq/data.hpp"
#include "saq/net.hpp"
#include "saq/probe.hpp"

namespace saq {

// Line-delimited structured log. Every command first embeds its full resolved
// config ("config <line>" per line), then appends fixed-field-order records:
//   epoch=E phase=train loss=L lr=R
//   epoch=E phase=search reward=R train_loss=L
//   epoch=E phase=eval train_loss=L train_acc=A val_loss=L val_acc=A
//   chosen bits=B bops=C budget=C val_loss=L val_acc=A
// plus one-off records (resume/abort/bops/probe/landscape). Doubles print
// with enough digits to round-trip, so identical runs produce identical logs.
class RunLogger {
 public:
  RunLogger() = default;

  void set_echo(bool on) { echo_ = on; }          // mirror lines to stdout
  void open_file(const std::string& path);        // tee into a file; IoError
  void line(const std::string& s);
  void config_block(const std::string& resolved_config);

  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::vector<std::string> lines_;
  std::ofstream file_;
  bool echo_ = false;
};

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
};

// ---- Shared run plumbing (exposed so tests can build their own oracles) ----

// Layer stack from the [model] section; search mode applies endpoint pinning.
ModelSpec build_spec(const RunConfig& cfg);
// Freshly initialized model (spec + quantizer set + model seed).
Model build_model(const RunConfig& cfg);
// (train, val) per the [data] section: synthetic or IDX, stratified 50/50.
std::pair<Dataset, Dataset> load_split(const RunConfig& cfg);
// Bitwidth assignment a fixed-config run trains and evaluates under:
// uniform bits, or the full-precision bypass for the sam optimizer.
std::vector<int> active_config(const RunConfig& cfg, const Model& model);
// Eval-mode loss/accuracy over the whole dataset in fixed 512-row chunks.
EvalMetrics evaluate(Model& model, const Dataset& ds, const std::vector<int>& config);
// Output directory (under the SAQLAB_OUT root when set and the configured
// path is relative), created on demand.
std::string resolve_out_dir(const RunConfig& cfg);

// ---- Commands ---------------------------------------------------------------

struct TrainResult {
  EvalMetrics train;
  EvalMetrics val;
  std::int64_t epochs_completed = 0;
  std::string checkpoint_path;
};

// Fixed-bitwidth training with the configured optimizer. Logs an initial
// eval record (epoch=0 = state after zero epochs), one train and one eval
// record per epoch, writes <out>/train.ckpt. A non-finite training loss
// checkpoints to <out>/abort.ckpt and rethrows. stop_after > 0 interrupts
// the run after that many epochs without touching the config (or the lr
// schedule horizon). With resume_path, model and optimizer state continue
// from the snapshot's epoch; per-epoch shuffle seeds are derived statelessly
// from (shuffle_seed, epoch), so stopping and resuming under one config
// replays the uninterrupted run bit-exactly.
TrainResult cmd_train(const RunConfig& cfg, RunLogger& log,
                      const std::string& resume_path = "",
                      std::int64_t stop_after = 0);

struct SearchResult {
  std::vector<int> chosen_bits;   // one per searchable position
  std::vector<int> full_config;   // one per quantized layer
  double budget = 0.0;            // absolute bit-operations
  double bops = 0.0;              // chosen config's bit-operations
  EvalMetrics val;                // full-val eval at the chosen config
  std::string checkpoint_path;
};

// Alternating bitwidth search, then budget-constrained inference on the full
// validation set. Persists model + policy + chosen bits to <out>/search.ckpt.
// With resume_path, training continues from the snapshot's search epoch; if
// the snapshot already covers search.epochs, training is skipped and
// inference reruns under the same derived seed, reproducing the choice.
SearchResult cmd_search(const RunConfig& cfg, RunLogger& log,
                        const std::string& resume_path = "");

struct FinetuneResult {
  EvalMetrics initial_val;  // restored weights, before any update
  EvalMetrics train;
  EvalMetrics val;
  std::vector<int> full_config;
  double bops = 0.0;
  std::int64_t epochs_completed = 0;
  std::string checkpoint_path;
};

// Fixed-config training on top of a checkpoint: the snapshot's chosen bits
// (or the uniform config when it has none and bits.mode=uniform). Zero
// epochs just evaluates, so its metrics equal the search's final eval.
FinetuneResult cmd_finetune(const RunConfig& cfg, const std::string& checkpoint_path,
                            RunLogger& log);

struct BopsResult {
  CostReport report;
  std::string formatted_total;  // e.g. "674.6M" / "34.7G"
  std::string table_path;
};

// Per-layer cost table for the configured model at its uniform bitwidth,
// written to <out>/bops.txt. The printed unit is M unless the model's
// full-precision cost reaches 100G, matching how results for the two stock
// residual nets are conventionally quoted.
BopsResult cmd_bops(const RunConfig& cfg, RunLogger& log);

struct ProbeResult {
  SpectrumResult spectrum;
  std::string report_path;
};

// Top Hessian eigenvalue, written to <out>/probe.txt. probe.target=quadratic
// runs the analytic diag(1,2,5) fixture (exact answer 5); probe.target=model
// probes the configured model (optionally restored from a checkpoint) on the
// first probe.samples training rows.
ProbeResult cmd_probe(const RunConfig& cfg, RunLogger& log,
                      const std::string& checkpoint_path = "");

struct LandscapeResult {
  LandscapeGrid grid;
  double eval_loss = 0.0;  // eval-mode loss on the probe batch, also logged
  std::string matrix_path;
};

// 2-D loss slice around the current weights, written via write_landscape to
// <out>/landscape.txt; the grid center equals the logged eval loss.
LandscapeResult cmd_landscape(const RunConfig& cfg, RunLogger& log,
                              const std::string& checkpoint_path = "");

}  // namespace saq
