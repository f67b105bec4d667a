#include "saq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "saq/error.hpp"

namespace saq {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'Q', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

// Little-endian primitive encoding, independent of host byte order.
void put_u8(std::vector<unsigned char>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_i64(std::vector<unsigned char>& out, std::int64_t v) {
  put_u64(out, static_cast<std::uint64_t>(v));
}

void put_f64(std::vector<unsigned char>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_str(std::vector<unsigned char>& out, const std::string& s) {
  put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

void put_vec(std::vector<unsigned char>& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  for (double x : v) put_f64(out, x);
}

void put_map(std::vector<unsigned char>& out,
             const std::map<std::string, std::vector<double>>& m) {
  put_u64(out, m.size());
  for (const auto& [name, vec] : m) {
    put_str(out, name);
    put_vec(out, vec);
  }
}

struct Reader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (pos + k > n) throw FormatError("checkpoint: truncated data");
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint64_t len = u64();
    need(len);
    std::string s(reinterpret_cast<const char*>(p + pos), len);
    pos += len;
    return s;
  }
  std::vector<double> vec() {
    std::uint64_t len = u64();
    need(len * 8);
    std::vector<double> v(len);
    for (auto& x : v) x = f64();
    return v;
  }
  std::map<std::string, std::vector<double>> map() {
    std::uint64_t count = u64();
    std::map<std::string, std::vector<double>> m;
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string name = str();
      m[name] = vec();
    }
    return m;
  }
};

// Pulls a named entry out of a snapshot map, enforcing an exact size match.
const std::vector<double>& lookup(
    const std::map<std::string, std::vector<double>>& m, const std::string& name,
    std::size_t size, const char* what) {
  auto it = m.find(name);
  if (it == m.end())
    throw FormatError(std::string("checkpoint: ") + what + " is missing entry '" +
                      name + "'");
  if (it->second.size() != size)
    throw FormatError(std::string("checkpoint: ") + what + " entry '" + name +
                      "' has " + std::to_string(it->second.size()) +
                      " values, expected " + std::to_string(size));
  return it->second;
}

}  // namespace

void Checkpoint::capture_model(Model& m) {
  model_params.clear();
  model_stats.clear();
  for (auto& [name, t] : m.named_params()) model_params[name] = t.values();
  for (auto& [name, v] : m.named_stats()) model_stats[name] = *v;
}

void Checkpoint::restore_model(Model& m) const {
  for (auto& [name, t] : m.named_params())
    t.values() = lookup(model_params, name, t.values().size(), "model_params");
  for (auto& [name, v] : m.named_stats())
    *v = lookup(model_stats, name, v->size(), "model_stats");
}

void Checkpoint::capture_optimizer(Optimizer& opt) {
  opt_velocity = opt.velocities();
  opt_steps = opt.steps_taken();
}

void Checkpoint::restore_optimizer(Optimizer& opt) const {
  opt.velocities() = opt_velocity;
  opt.set_steps_taken(opt_steps);
}

void Checkpoint::capture_policy(PolicyNet& p, const SearchState& st) {
  has_policy = true;
  policy_params.clear();
  for (auto& [name, t] : p.named_params()) policy_params[name] = t.values();
  adam_m = p.adam().m;
  adam_v = p.adam().v;
  adam_t = p.adam().t;
  baseline = st.baseline;
  baseline_ready = st.baseline_ready;
  search_epoch = st.epoch;
}

void Checkpoint::restore_policy(PolicyNet& p, SearchState& st) const {
  if (!has_policy) throw FormatError("checkpoint: no policy state recorded");
  for (auto& [name, t] : p.named_params())
    t.values() = lookup(policy_params, name, t.values().size(), "policy_params");
  p.adam().m = adam_m;
  p.adam().v = adam_v;
  p.adam().t = adam_t;
  st.baseline = baseline;
  st.baseline_ready = baseline_ready;
  st.epoch = search_epoch;
}

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<unsigned char> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kVersion);
  put_str(out, ck.config_text);
  put_i64(out, ck.epoch);
  put_map(out, ck.model_params);
  put_map(out, ck.model_stats);
  put_map(out, ck.opt_velocity);
  put_i64(out, ck.opt_steps);
  put_u8(out, ck.has_policy ? 1 : 0);
  if (ck.has_policy) {
    put_map(out, ck.policy_params);
    put_map(out, ck.adam_m);
    put_map(out, ck.adam_v);
    put_i64(out, ck.adam_t);
    put_f64(out, ck.baseline);
    put_u8(out, ck.baseline_ready ? 1 : 0);
    put_i64(out, ck.search_epoch);
  }
  put_u64(out, ck.rng_state.size());
  for (const auto& [name, v] : ck.rng_state) {
    put_str(out, name);
    put_u64(out, v);
  }
  put_u64(out, ck.chosen_bits.size());
  for (int b : ck.chosen_bits) put_i64(out, b);
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r{bytes.data(), bytes.size()};
  r.need(8);
  if (std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic");
  r.pos = 8;
  std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = r.str();
  ck.epoch = r.i64();
  ck.model_params = r.map();
  ck.model_stats = r.map();
  ck.opt_velocity = r.map();
  ck.opt_steps = r.i64();
  ck.has_policy = r.u8() != 0;
  if (ck.has_policy) {
    ck.policy_params = r.map();
    ck.adam_m = r.map();
    ck.adam_v = r.map();
    ck.adam_t = r.i64();
    ck.baseline = r.f64();
    ck.baseline_ready = r.u8() != 0;
    ck.search_epoch = r.i64();
  }
  std::uint64_t rng_count = r.u64();
  for (std::uint64_t i = 0; i < rng_count; ++i) {
    std::string name = r.str();
    ck.rng_state[name] = r.u64();
  }
  std::uint64_t chosen_count = r.u64();
  ck.chosen_bits.resize(chosen_count);
  for (auto& b : ck.chosen_bits) b = static_cast<int>(r.i64());
  if (r.pos != bytes.size())
    throw FormatError("checkpoint: trailing bytes after payload");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::vector<unsigned char> bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint: short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (in.bad()) throw IoError("checkpoint: read failure on '" + path + "'");
  return deserialize_checkpoint(bytes);
}

}  // namespace saq
