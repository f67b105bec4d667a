#include "saq/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "saq/error.hpp"

namespace saq {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("config: bad value for " + key + ": '" + value + "'");
}

long long to_i64(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, raw);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, raw);
  return out;
}

int to_int(const std::string& key, const std::string& raw) {
  long long v = to_i64(key, raw);
  if (v < -2147483648LL || v > 2147483647LL) bad_value(key, raw);
  return static_cast<int>(v);
}

double to_double(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  if (v.empty()) bad_value(key, raw);
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    bad_value(key, raw);
  }
  if (pos != v.size()) bad_value(key, raw);
  return out;
}

bool to_bool(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, raw);
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> parts;
  std::string v = trim(raw);
  if (v.empty()) return parts;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = v.find(',', start);
    parts.push_back(v.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::vector<int> to_int_list(const std::string& key, const std::string& raw) {
  std::vector<int> out;
  for (const auto& p : split_list(raw)) out.push_back(to_int(key, p));
  return out;
}

std::vector<std::int64_t> to_i64_list(const std::string& key,
                                      const std::string& raw) {
  std::vector<std::int64_t> out;
  for (const auto& p : split_list(raw)) out.push_back(to_i64(key, p));
  return out;
}

// Assigns one key in one section; the single source of truth for the schema.
void set_field(RunConfig& c, const std::string& section, const std::string& key,
               const std::string& value) {
  if (section == "model") {
    if (key == "kind") c.model_kind = trim(value);
    else if (key == "in_features") c.in_features = to_int(key, value);
    else if (key == "hidden") c.hidden = to_int(key, value);
    else if (key == "classes") c.classes = to_int(key, value);
    else if (key == "bias") c.mlp_bias = to_bool(key, value);
    else if (key == "in_channels") c.in_channels = to_int(key, value);
    else if (key == "in_hw") c.in_hw = to_int(key, value);
    else if (key == "fixed_endpoints") c.fixed_endpoints = to_bool(key, value);
    else if (key == "bitwidths") c.bitwidths = to_int_list(key, value);
    else if (key == "seed") c.model_seed = to_u64(key, value);
    else throw ConfigError("config: unknown key model." + key);
  } else if (section == "data") {
    if (key == "kind") c.data_kind = trim(value);
    else if (key == "samples") c.samples = to_i64(key, value);
    else if (key == "noise") c.noise = to_double(key, value);
    else if (key == "seed") c.data_seed = to_u64(key, value);
    else if (key == "split_seed") c.split_seed = to_u64(key, value);
    else if (key == "images") c.idx_images = trim(value);
    else if (key == "labels") c.idx_labels = trim(value);
    else throw ConfigError("config: unknown key data." + key);
  } else if (section == "optim") {
    if (key == "optimizer") c.optimizer = trim(value);
    else if (key == "lr") c.lr = to_double(key, value);
    else if (key == "schedule") c.schedule = trim(value);
    else if (key == "milestones") c.milestones = to_i64_list(key, value);
    else if (key == "gamma") c.gamma = to_double(key, value);
    else if (key == "total_steps") c.total_steps = to_i64(key, value);
    else if (key == "momentum") c.momentum = to_double(key, value);
    else if (key == "weight_decay") c.weight_decay = to_double(key, value);
    else if (key == "rho") c.rho = to_double(key, value);
    else if (key == "xi") c.xi = to_double(key, value);
    else if (key == "microbatch") c.microbatch = to_i64(key, value);
    else if (key == "batch_size") c.batch_size = to_i64(key, value);
    else if (key == "epochs") c.epochs = to_i64(key, value);
    else if (key == "shuffle_seed") c.shuffle_seed = to_u64(key, value);
    else throw ConfigError("config: unknown key optim." + key);
  } else if (section == "bits") {
    if (key == "mode") c.bits_mode = trim(value);
    else if (key == "uniform") c.uniform_bits = to_int(key, value);
    else throw ConfigError("config: unknown key bits." + key);
  } else if (section == "search") {
    if (key == "budget") c.budget = to_double(key, value);
    else if (key == "budget_fraction") c.budget_fraction = to_double(key, value);
    else if (key == "beta") c.search_beta = to_double(key, value);
    else if (key == "alpha") c.search_alpha = to_double(key, value);
    else if (key == "epochs") c.search_epochs = to_i64(key, value);
    else if (key == "warmup") c.warmup_epochs = to_i64(key, value);
    else if (key == "k") c.top_k = to_i64(key, value);
    else if (key == "reward_rho") c.reward_rho = to_double(key, value);
    else if (key == "val_batch_size") c.val_batch_size = to_i64(key, value);
    else if (key == "seed") c.search_seed = to_u64(key, value);
    else throw ConfigError("config: unknown key search." + key);
  } else if (section == "probe") {
    if (key == "target") c.probe_target = trim(value);
    else if (key == "iters") c.probe_iters = to_i64(key, value);
    else if (key == "tol") c.probe_tol = to_double(key, value);
    else if (key == "seed") c.probe_seed = to_u64(key, value);
    else if (key == "samples") c.probe_samples = to_i64(key, value);
    else throw ConfigError("config: unknown key probe." + key);
  } else if (section == "landscape") {
    if (key == "halfwidth") c.landscape_halfwidth = to_double(key, value);
    else if (key == "resolution") c.landscape_resolution = to_int(key, value);
    else if (key == "seed") c.landscape_seed = to_u64(key, value);
    else throw ConfigError("config: unknown key landscape." + key);
  } else if (section == "run") {
    if (key == "out") c.out_dir = trim(value);
    else if (key == "deterministic") c.deterministic = to_bool(key, value);
    else throw ConfigError("config: unknown key run." + key);
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

bool one_of(const std::string& v, std::initializer_list<const char*> set) {
  for (const char* s : set)
    if (v == s) return true;
  return false;
}

// Shortest decimal that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::stod(buf) == v) return buf;
  }
  return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  require(one_of(model_kind, {"mlp", "miniconv", "resnet20", "resnet18"}),
          "model.kind must be mlp|miniconv|resnet20|resnet18");
  require(in_features > 0, "model.in_features must be positive");
  require(hidden > 0, "model.hidden must be positive");
  require(classes > 1, "model.classes must be at least 2");
  require(in_channels > 0, "model.in_channels must be positive");
  require(in_hw > 0, "model.in_hw must be positive");
  require(!bitwidths.empty(), "model.bitwidths must be non-empty");
  for (std::size_t i = 0; i < bitwidths.size(); ++i) {
    require(bitwidths[i] >= 1 && bitwidths[i] <= 32,
            "model.bitwidths entries must lie in [1, 32]");
    require(i == 0 || bitwidths[i - 1] < bitwidths[i],
            "model.bitwidths must be strictly increasing");
  }

  require(one_of(data_kind, {"gaussians", "moons", "idx"}),
          "data.kind must be gaussians|moons|idx");
  if (data_kind == "idx") {
    require(!idx_images.empty() && !idx_labels.empty(),
            "data.kind=idx requires data.images and data.labels");
  } else {
    require(samples > 1, "data.samples must be at least 2");
    require(noise >= 0, "data.noise must be non-negative");
  }

  require(one_of(optimizer, {"sgd", "sam", "saq", "asaq"}),
          "optim.optimizer must be sgd|sam|saq|asaq");
  require(lr > 0, "optim.lr must be positive");
  require(one_of(schedule, {"constant", "step", "cosine"}),
          "optim.schedule must be constant|step|cosine");
  require(gamma > 0, "optim.gamma must be positive");
  require(total_steps >= 0, "optim.total_steps must be non-negative");
  require(momentum >= 0 && momentum < 1, "optim.momentum must lie in [0, 1)");
  require(weight_decay >= 0, "optim.weight_decay must be non-negative");
  require(rho >= 0, "optim.rho must be non-negative");
  require(xi > 0, "optim.xi must be positive");
  require(microbatch >= 0, "optim.microbatch must be non-negative");
  require(batch_size > 0, "optim.batch_size must be positive");
  require(epochs >= 0, "optim.epochs must be non-negative");

  require(one_of(bits_mode, {"uniform", "search"}),
          "bits.mode must be uniform|search");
  bool known_bits = uniform_bits == 32;
  for (int b : bitwidths) known_bits = known_bits || b == uniform_bits;
  require(known_bits, "bits.uniform must be 32 or one of model.bitwidths");

  require(budget >= 0, "search.budget must be non-negative");
  require(budget > 0 || budget_fraction > 0,
          "search.budget_fraction must be positive when search.budget is 0");
  require(search_beta >= 0, "search.beta must be non-negative");
  require(search_alpha >= 0, "search.alpha must be non-negative");
  require(search_epochs >= 0, "search.epochs must be non-negative");
  require(warmup_epochs >= 0, "search.warmup must be non-negative");
  require(top_k > 0, "search.k must be positive");
  require(reward_rho >= 0, "search.reward_rho must be non-negative");
  require(val_batch_size > 0, "search.val_batch_size must be positive");

  require(one_of(probe_target, {"quadratic", "model"}),
          "probe.target must be quadratic|model");
  require(probe_iters > 0, "probe.iters must be positive");
  require(probe_tol > 0, "probe.tol must be positive");
  require(probe_samples > 0, "probe.samples must be positive");

  require(landscape_halfwidth > 0, "landscape.halfwidth must be positive");
  require(landscape_resolution >= 3 && landscape_resolution % 2 == 1,
          "landscape.resolution must be an odd count of at least 3");

  require(!out_dir.empty(), "run.out must be non-empty");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config: malformed section header at line " +
                          std::to_string(lineno));
      section = trim(t.substr(1, t.size() - 2));
      require(!section.empty(), "empty section name at line " +
                                    std::to_string(lineno));
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key=value at line " +
                        std::to_string(lineno));
    std::string key = trim(t.substr(0, eq));
    std::string value = t.substr(eq + 1);
    require(!key.empty(), "empty key at line " + std::to_string(lineno));
    require(!section.empty(),
            "key '" + key + "' appears before any [section]");
    set_field(c, section, key, value);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: override must look like section.key=value: '" +
                      assignment + "'");
  std::string path = trim(assignment.substr(0, eq));
  std::string value = assignment.substr(eq + 1);
  std::size_t dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
    throw ConfigError("config: override must look like section.key=value: '" +
                      assignment + "'");
  set_field(config, path.substr(0, dot), path.substr(dot + 1), value);
}

std::string resolved_text(const RunConfig& c) {
  std::ostringstream o;
  o << "[model]\n"
    << "kind=" << c.model_kind << "\n"
    << "in_features=" << c.in_features << "\n"
    << "hidden=" << c.hidden << "\n"
    << "classes=" << c.classes << "\n"
    << "bias=" << (c.mlp_bias ? "true" : "false") << "\n"
    << "in_channels=" << c.in_channels << "\n"
    << "in_hw=" << c.in_hw << "\n"
    << "fixed_endpoints=" << (c.fixed_endpoints ? "true" : "false") << "\n"
    << "bitwidths=" << fmt_list(c.bitwidths) << "\n"
    << "seed=" << c.model_seed << "\n";
  o << "[data]\n"
    << "kind=" << c.data_kind << "\n"
    << "samples=" << c.samples << "\n"
    << "noise=" << fmt_double(c.noise) << "\n"
    << "seed=" << c.data_seed << "\n"
    << "split_seed=" << c.split_seed << "\n"
    << "images=" << c.idx_images << "\n"
    << "labels=" << c.idx_labels << "\n";
  o << "[optim]\n"
    << "optimizer=" << c.optimizer << "\n"
    << "lr=" << fmt_double(c.lr) << "\n"
    << "schedule=" << c.schedule << "\n"
    << "milestones=" << fmt_list(c.milestones) << "\n"
    << "gamma=" << fmt_double(c.gamma) << "\n"
    << "total_steps=" << c.total_steps << "\n"
    << "momentum=" << fmt_double(c.momentum) << "\n"
    << "weight_decay=" << fmt_double(c.weight_decay) << "\n"
    << "rho=" << fmt_double(c.rho) << "\n"
    << "xi=" << fmt_double(c.xi) << "\n"
    << "microbatch=" << c.microbatch << "\n"
    << "batch_size=" << c.batch_size << "\n"
    << "epochs=" << c.epochs << "\n"
    << "shuffle_seed=" << c.shuffle_seed << "\n";
  o << "[bits]\n"
    << "mode=" << c.bits_mode << "\n"
    << "uniform=" << c.uniform_bits << "\n";
  o << "[search]\n"
    << "budget=" << fmt_double(c.budget) << "\n"
    << "budget_fraction=" << fmt_double(c.budget_fraction) << "\n"
    << "beta=" << fmt_double(c.search_beta) << "\n"
    << "alpha=" << fmt_double(c.search_alpha) << "\n"
    << "epochs=" << c.search_epochs << "\n"
    << "warmup=" << c.warmup_epochs << "\n"
    << "k=" << c.top_k << "\n"
    << "reward_rho=" << fmt_double(c.reward_rho) << "\n"
    << "val_batch_size=" << c.val_batch_size << "\n"
    << "seed=" << c.search_seed << "\n";
  o << "[probe]\n"
    << "target=" << c.probe_target << "\n"
    << "iters=" << c.probe_iters << "\n"
    << "tol=" << fmt_double(c.probe_tol) << "\n"
    << "seed=" << c.probe_seed << "\n"
    << "samples=" << c.probe_samples << "\n";
  o << "[landscape]\n"
    << "halfwidth=" << fmt_double(c.landscape_halfwidth) << "\n"
    << "resolution=" << c.landscape_resolution << "\n"
    << "seed=" << c.landscape_seed << "\n";
  o << "[run]\n"
    << "out=" << c.out_dir << "\n"
    << "deterministic=" << (c.deterministic ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace saq
