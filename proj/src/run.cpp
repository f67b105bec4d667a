#include "saq/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>

#include "saq/checkpoint.hpp"
#include "saq/controller.hpp"
#include "saq/error.hpp"
#include "saq/kernels.hpp"
#include "saq/optim.hpp"
#include "saq/rng.hpp"
#include "saq/tensor.hpp"

namespace saq {

namespace {

// Shortest decimal that parses back to the same double, so equal runs
// produce byte-equal log lines.
std::string g17(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::isnan(v) || std::stod(buf) == v) return buf;
  }
  return buf;
}

std::string csv(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

// Stateless per-epoch shuffle seed: resuming at epoch k replays exactly the
// batches the uninterrupted run would have drawn.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t h = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  h ^= h >> 29;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 32;
  return h;
}

ScheduleKind schedule_kind(const std::string& name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "step") return ScheduleKind::step_decay;
  return ScheduleKind::cosine;
}

OptimConfig make_optim_config(const RunConfig& cfg, std::int64_t horizon_epochs) {
  OptimConfig oc;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  oc.rho = cfg.rho;
  oc.xi = cfg.xi;
  oc.m = cfg.microbatch > 0 ? cfg.microbatch : cfg.batch_size;
  oc.schedule.kind = schedule_kind(cfg.schedule);
  oc.schedule.base_lr = cfg.lr;
  oc.schedule.milestones = cfg.milestones;
  oc.schedule.gamma = cfg.gamma;
  oc.schedule.total_steps =
      cfg.total_steps > 0 ? cfg.total_steps : std::max<std::int64_t>(1, horizon_epochs);
  oc.validate();
  return oc;
}

double train_epoch(const RunConfig& cfg, Optimizer& opt, const Dataset& train,
                   const std::vector<int>& config, std::int64_t epoch) {
  opt.set_schedule_step(epoch);
  double loss_sum = 0.0;
  std::int64_t rows = 0;
  for (Batch& b : make_batches(train, cfg.batch_size, mix_seed(cfg.shuffle_seed, epoch),
                               /*drop_last=*/false)) {
    double loss = 0.0;
    if (cfg.optimizer == "sgd") loss = opt.sgd_step(b, config);
    else if (cfg.optimizer == "sam") loss = opt.sam_step(b);
    else if (cfg.optimizer == "asaq") loss = opt.asaq_step(b, config);
    else loss = opt.saq_step(b, config);
    const auto n = static_cast<std::int64_t>(b.labels.size());
    loss_sum += loss * static_cast<double>(n);
    rows += n;
  }
  return loss_sum / static_cast<double>(rows);
}

void log_eval(RunLogger& log, std::int64_t epoch, const EvalMetrics& train,
              const EvalMetrics& val) {
  log.line("epoch=" + std::to_string(epoch) + " phase=eval train_loss=" + g17(train.loss) +
           " train_acc=" + g17(train.accuracy) + " val_loss=" + g17(val.loss) +
           " val_acc=" + g17(val.accuracy));
}

Checkpoint snapshot(const RunConfig& cfg, Model& model, Optimizer* opt,
                    std::int64_t epoch) {
  Checkpoint ck;
  ck.config_text = resolved_text(cfg);
  ck.epoch = epoch;
  ck.capture_model(model);
  if (opt) ck.capture_optimizer(*opt);
  ck.rng_state["shuffle"] = cfg.shuffle_seed;
  return ck;
}

Batch head_batch(const Dataset& ds, std::int64_t rows) {
  rows = std::min(rows, ds.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i) idx[static_cast<std::size_t>(i)] = i;
  return gather_batch(ds, idx);
}

// Model geometry, restored weights, and the probe batch + config shared by
// the probe and landscape commands.
struct ProbeSetup {
  Model model;
  Batch batch;
  std::vector<int> config;
};

ProbeSetup probe_setup(const RunConfig& cfg, const std::string& checkpoint_path) {
  ProbeSetup s{build_model(cfg), {}, {}};
  std::vector<int> chosen;
  if (!checkpoint_path.empty()) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    ck.restore_model(s.model);
    chosen = ck.chosen_bits;
  }
  s.config =
      chosen.empty() ? active_config(cfg, s.model) : expand_config(s.model, chosen);
  auto split = load_split(cfg);
  s.batch = head_batch(split.first, cfg.probe_samples);
  return s;
}

}  // namespace

void RunLogger::open_file(const std::string& path) {
  file_.open(path, std::ios::trunc);
  if (!file_) throw IoError("log: cannot open '" + path + "' for writing");
}

void RunLogger::line(const std::string& s) {
  lines_.push_back(s);
  if (echo_) std::cout << s << "\n";
  if (file_.is_open()) {
    file_ << s << "\n";
    file_.flush();
  }
}

void RunLogger::config_block(const std::string& resolved_config) {
  std::size_t start = 0;
  while (start < resolved_config.size()) {
    std::size_t end = resolved_config.find('\n', start);
    if (end == std::string::npos) end = resolved_config.size();
    line("config " + resolved_config.substr(start, end - start));
    start = end + 1;
  }
}

ModelSpec build_spec(const RunConfig& cfg) {
  ModelSpec spec;
  if (cfg.model_kind == "mlp")
    spec = mlp_spec(cfg.in_features, cfg.hidden, cfg.classes, cfg.mlp_bias);
  else if (cfg.model_kind == "miniconv")
    spec = miniconv_spec(cfg.in_channels, cfg.in_hw, cfg.classes);
  else if (cfg.model_kind == "resnet20")
    spec = resnet20_spec(cfg.classes);
  else
    spec = resnet18_spec(cfg.classes);
  if (cfg.fixed_endpoints) apply_fixed_endpoint_bitwidths(spec);
  return spec;
}

Model build_model(const RunConfig& cfg) {
  QuantSpec quant;
  quant.bitwidth_set = cfg.bitwidths;
  return Model(build_spec(cfg), quant, cfg.model_seed);
}

std::pair<Dataset, Dataset> load_split(const RunConfig& cfg) {
  Dataset full = cfg.data_kind == "idx"
                     ? load_idx(cfg.idx_images, cfg.idx_labels)
                     : make_synthetic(cfg.data_kind, cfg.samples, cfg.classes,
                                      cfg.noise, cfg.data_seed);
  return split_half(full, cfg.split_seed);
}

std::vector<int> active_config(const RunConfig& cfg, const Model& model) {
  // The full-precision min-max baseline trains and evaluates under the
  // quantization bypass; everything else runs at the uniform bitwidth.
  return model.uniform_config(cfg.optimizer == "sam" ? 32 : cfg.uniform_bits);
}

EvalMetrics evaluate(Model& model, const Dataset& ds, const std::vector<int>& config) {
  constexpr std::int64_t kChunk = 512;
  double loss_sum = 0.0;
  std::int64_t hits = 0;
  for (std::int64_t start = 0; start < ds.size(); start += kChunk) {
    const std::int64_t end = std::min(ds.size(), start + kChunk);
    std::vector<std::int64_t> rows(static_cast<std::size_t>(end - start));
    for (std::int64_t i = start; i < end; ++i) rows[static_cast<std::size_t>(i - start)] = i;
    Batch b = gather_batch(ds, rows);
    Tensor logits = model.forward(b.x, config, Model::Mode::eval);
    loss_sum += softmax_cross_entropy(logits, b.labels).item() *
                static_cast<double>(end - start);
    const int n = logits.shape()[0], c = logits.shape()[1];
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      for (int j = 1; j < c; ++j) {
        if (logits.values()[static_cast<std::size_t>(i) * c + j] >
            logits.values()[static_cast<std::size_t>(i) * c + arg])
          arg = j;
      }
      if (arg == b.labels[static_cast<std::size_t>(i)]) ++hits;
    }
  }
  EvalMetrics m;
  m.loss = loss_sum / static_cast<double>(ds.size());
  m.accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(ds.size());
  return m;
}

std::string resolve_out_dir(const RunConfig& cfg) {
  std::filesystem::path p = cfg.out_dir;
  if (p.is_relative()) {
    if (const char* root = std::getenv("SAQLAB_OUT")) p = std::filesystem::path(root) / p;
  }
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("run: cannot create output directory '" + p.string() + "'");
  return p.string();
}

TrainResult cmd_train(const RunConfig& cfg, RunLogger& log, const std::string& resume_path,
                      std::int64_t stop_after) {
  cfg.validate();
  if (cfg.bits_mode != "uniform")
    throw ConfigError("train: requires bits.mode=uniform (use the search command)");
  kernels::set_parallel(!cfg.deterministic);
  const std::string out = resolve_out_dir(cfg);
  log.config_block(resolved_text(cfg));

  auto [train, val] = load_split(cfg);
  Model model = build_model(cfg);
  const std::vector<int> config = active_config(cfg, model);
  Optimizer opt(model, make_optim_config(cfg, cfg.epochs));

  std::int64_t start_epoch = 0;
  if (!resume_path.empty()) {
    const Checkpoint ck = load_checkpoint(resume_path);
    ck.restore_model(model);
    ck.restore_optimizer(opt);
    start_epoch = ck.epoch;
    log.line("resume epoch=" + std::to_string(start_epoch));
  } else {
    log_eval(log, 0, evaluate(model, train, config), evaluate(model, val, config));
  }

  const std::int64_t stop =
      stop_after > 0 ? std::min(stop_after, cfg.epochs) : cfg.epochs;
  std::int64_t completed = start_epoch;
  for (std::int64_t e = start_epoch; e < stop; ++e) {
    double mean_loss = 0.0;
    try {
      mean_loss = train_epoch(cfg, opt, train, config, e);
    } catch (const NumericError&) {
      if (model.perturbed()) model.remove_perturbation();
      const std::string abort_path = out + "/abort.ckpt";
      save_checkpoint(snapshot(cfg, model, &opt, e), abort_path);
      log.line("abort epoch=" + std::to_string(e) + " error=numeric checkpoint=" + abort_path);
      throw;
    }
    log.line("epoch=" + std::to_string(e) + " phase=train loss=" + g17(mean_loss) +
             " lr=" + g17(opt.current_lr()));
    log_eval(log, e + 1, evaluate(model, train, config), evaluate(model, val, config));
    completed = e + 1;
  }

  TrainResult res;
  res.train = evaluate(model, train, config);
  res.val = evaluate(model, val, config);
  res.epochs_completed = completed;
  res.checkpoint_path = out + "/train.ckpt";
  save_checkpoint(snapshot(cfg, model, &opt, completed), res.checkpoint_path);
  return res;
}

SearchResult cmd_search(const RunConfig& cfg, RunLogger& log, const std::string& resume_path) {
  cfg.validate();
  if (cfg.bits_mode != "search")
    throw ConfigError("search: requires bits.mode=search");
  kernels::set_parallel(!cfg.deterministic);
  const std::string out = resolve_out_dir(cfg);
  log.config_block(resolved_text(cfg));

  auto [train, val] = load_split(cfg);
  Model model = build_model(cfg);
  const auto positions = model.searchable_positions();
  if (positions.empty()) throw ConfigError("search: model has no searchable layers");

  const CostReport fp = total_bops(model.spec(), model.uniform_config(32));
  const double budget = cfg.budget > 0 ? cfg.budget : cfg.budget_fraction * fp.fp_bops;

  PolicyNet policy(cfg.bitwidths, static_cast<int>(positions.size()),
                   mix_seed(cfg.search_seed, 101));
  SearchState st;
  st.alpha = cfg.search_alpha;
  st.beta = cfg.search_beta;
  st.budget = budget;
  st.warmup_epochs = cfg.warmup_epochs;

  SamqOptions so;
  so.weight_opt = make_optim_config(cfg, cfg.search_epochs);
  so.reward_rho = cfg.reward_rho;
  so.train_batch_size = cfg.batch_size;
  so.val_batch_size = cfg.val_batch_size;
  so.seed = mix_seed(cfg.search_seed, 202);
  so.log = [&log](std::int64_t epoch, double reward, double train_loss) {
    log.line("epoch=" + std::to_string(epoch) + " phase=search reward=" + g17(reward) +
             " train_loss=" + g17(train_loss));
  };

  if (!resume_path.empty()) {
    const Checkpoint ck = load_checkpoint(resume_path);
    ck.restore_model(model);
    ck.restore_policy(policy, st);
    st.alpha = cfg.search_alpha;
    st.beta = cfg.search_beta;
    st.budget = budget;
    st.warmup_epochs = cfg.warmup_epochs;
    log.line("resume epoch=" + std::to_string(st.epoch));
  }

  const std::int64_t remaining = cfg.search_epochs - st.epoch;
  if (remaining > 0) samq_train(model, policy, train, val, remaining, st, so);

  Batch val_whole = head_batch(val, val.size());
  RandomStream infer_rng(mix_seed(cfg.search_seed, 303));
  const BitwidthConfig chosen = infer_config(policy, model, val_whole, budget,
                                             static_cast<int>(cfg.top_k), infer_rng);

  SearchResult res;
  res.chosen_bits = chosen.bits;
  res.full_config = expand_config(model, chosen.bits);
  res.budget = budget;
  res.bops = total_bops(model.spec(), res.full_config).total_bops;
  res.val = evaluate(model, val, res.full_config);
  log.line("chosen bits=" + csv(res.chosen_bits) + " bops=" + g17(res.bops) +
           " budget=" + g17(res.budget) + " val_loss=" + g17(res.val.loss) +
           " val_acc=" + g17(res.val.accuracy));

  Checkpoint ck = snapshot(cfg, model, nullptr, st.epoch);
  ck.capture_policy(policy, st);
  ck.rng_state["search"] = cfg.search_seed;
  ck.chosen_bits = res.chosen_bits;
  res.checkpoint_path = out + "/search.ckpt";
  save_checkpoint(ck, res.checkpoint_path);
  return res;
}

FinetuneResult cmd_finetune(const RunConfig& cfg, const std::string& checkpoint_path,
                            RunLogger& log) {
  cfg.validate();
  if (checkpoint_path.empty())
    throw ConfigError("finetune: requires a checkpoint to start from");
  kernels::set_parallel(!cfg.deterministic);
  const std::string out = resolve_out_dir(cfg);
  log.config_block(resolved_text(cfg));

  auto [train, val] = load_split(cfg);
  Model model = build_model(cfg);
  const Checkpoint start = load_checkpoint(checkpoint_path);
  start.restore_model(model);

  std::vector<int> config;
  if (!start.chosen_bits.empty()) config = expand_config(model, start.chosen_bits);
  else if (cfg.bits_mode == "uniform") config = active_config(cfg, model);
  else
    throw ConfigError("finetune: checkpoint has no chosen bitwidths and bits.mode is not uniform");

  FinetuneResult res;
  res.full_config = config;
  res.bops = total_bops(model.spec(), config).total_bops;

  EvalMetrics train_m = evaluate(model, train, config);
  res.initial_val = evaluate(model, val, config);
  log_eval(log, 0, train_m, res.initial_val);

  Optimizer opt(model, make_optim_config(cfg, cfg.epochs));
  for (std::int64_t e = 0; e < cfg.epochs; ++e) {
    double mean_loss = 0.0;
    try {
      mean_loss = train_epoch(cfg, opt, train, config, e);
    } catch (const NumericError&) {
      if (model.perturbed()) model.remove_perturbation();
      const std::string abort_path = out + "/abort.ckpt";
      save_checkpoint(snapshot(cfg, model, &opt, e), abort_path);
      log.line("abort epoch=" + std::to_string(e) + " error=numeric checkpoint=" + abort_path);
      throw;
    }
    log.line("epoch=" + std::to_string(e) + " phase=train loss=" + g17(mean_loss) +
             " lr=" + g17(opt.current_lr()));
    log_eval(log, e + 1, evaluate(model, train, config), evaluate(model, val, config));
  }

  res.train = evaluate(model, train, config);
  res.val = evaluate(model, val, config);
  res.epochs_completed = cfg.epochs;
  Checkpoint ck = snapshot(cfg, model, &opt, cfg.epochs);
  ck.chosen_bits = start.chosen_bits;
  res.checkpoint_path = out + "/finetune.ckpt";
  save_checkpoint(ck, res.checkpoint_path);
  return res;
}

BopsResult cmd_bops(const RunConfig& cfg, RunLogger& log) {
  cfg.validate();
  const std::string out = resolve_out_dir(cfg);
  log.config_block(resolved_text(cfg));

  const ModelSpec spec = build_spec(cfg);
  const std::vector<int> config(spec.quantized_layers().size(), cfg.uniform_bits);
  BopsResult res;
  res.report = total_bops(spec, config);

  // Quote in M below 100G full-precision cost and in G above, which is how
  // the CIFAR-scale and ImageNet-scale residual nets are conventionally
  // reported.
  const bool giga = res.report.fp_bops >= 1e11;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f%s", res.report.total_bops / (giga ? 1e9 : 1e6),
                giga ? "G" : "M");
  res.formatted_total = buf;

  res.table_path = out + "/bops.txt";
  std::ofstream table(res.table_path, std::ios::trunc);
  if (!table) throw IoError("bops: cannot open '" + res.table_path + "' for writing");
  table << "# model=" << spec.name << " bits=" << cfg.uniform_bits
        << " total=" << res.formatted_total << " total_bops=" << g17(res.report.total_bops)
        << " fp_bops=" << g17(res.report.fp_bops)
        << " compression=" << g17(res.report.compression_ratio) << "\n";
  table << "# label macs weight_bits activation_bits bops\n";
  for (const LayerCost& lc : res.report.layers) {
    table << lc.label << " " << lc.macs << " " << lc.weight_bits << " "
          << lc.activation_bits << " " << g17(lc.bops) << "\n";
  }
  if (!table) throw IoError("bops: short write to '" + res.table_path + "'");

  log.line("bops total=" + res.formatted_total + " total_bops=" + g17(res.report.total_bops) +
           " fp_bops=" + g17(res.report.fp_bops) +
           " compression=" + g17(res.report.compression_ratio));
  return res;
}

ProbeResult cmd_probe(const RunConfig& cfg, RunLogger& log, const std::string& checkpoint_path) {
  cfg.validate();
  kernels::set_parallel(!cfg.deterministic);
  const std::string out = resolve_out_dir(cfg);
  log.config_block(resolved_text(cfg));

  ProbeResult res;
  if (cfg.probe_target == "quadratic") {
    // Analytic fixture with spectrum {1, 2, 5}: the probe must report 5.
    QuadraticSurface surface({{1, 0, 0}, {0, 2, 0}, {0, 0, 5}});
    res.spectrum = lambda_max(surface, static_cast<int>(cfg.probe_iters), cfg.probe_tol,
                              cfg.probe_seed);
  } else {
    ProbeSetup s = probe_setup(cfg, checkpoint_path);
    res.spectrum = lambda_max(s.model, s.batch, s.config, static_cast<int>(cfg.probe_iters),
                              cfg.probe_tol, cfg.probe_seed);
  }

  res.report_path = out + "/probe.txt";
  std::ofstream report(res.report_path, std::ios::trunc);
  if (!report) throw IoError("probe: cannot open '" + res.report_path + "' for writing");
  report << "# lambda_max=" << g17(res.spectrum.lambda_max)
         << " iterations=" << res.spectrum.iterations
         << " residual=" << g17(res.spectrum.residual) << " probe=" << res.spectrum.probe
         << "\n";
  if (!report) throw IoError("probe: short write to '" + res.report_path + "'");

  log.line("probe lambda_max=" + g17(res.spectrum.lambda_max) +
           " iterations=" + std::to_string(res.spectrum.iterations) +
           " residual=" + g17(res.spectrum.residual));
  return res;
}

LandscapeResult cmd_landscape(const RunConfig& cfg, RunLogger& log,
                              const std::string& checkpoint_path) {
  cfg.validate();
  kernels::set_parallel(!cfg.deterministic);
  const std::string out = resolve_out_dir(cfg);
  log.config_block(resolved_text(cfg));

  ProbeSetup s = probe_setup(cfg, checkpoint_path);
  LandscapeResult res;
  res.grid = landscape_slice(s.model, s.batch, s.config, cfg.landscape_halfwidth,
                             cfg.landscape_resolution, cfg.landscape_seed);
  Tensor logits = s.model.forward(s.batch.x, s.config, Model::Mode::eval);
  res.eval_loss = softmax_cross_entropy(logits, s.batch.labels).item();

  res.matrix_path = out + "/landscape.txt";
  write_landscape(res.grid, res.matrix_path);
  log.line("landscape center_loss=" + g17(res.grid.center_loss) +
           " eval_loss=" + g17(res.eval_loss) + " halfwidth=" + g17(res.grid.halfwidth) +
           " resolution=" + std::to_string(res.grid.resolution) +
           " seed=" + std::to_string(res.grid.seed));
  return res;
}

}  // namespace saq
