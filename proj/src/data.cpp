#include "saq/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "saq/error.hpp"
#include "saq/rng.hpp"

namespace saq {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;  // ubyte, 3 dims
constexpr std::uint32_t kLabelsMagic = 0x00000801;  // ubyte, 1 dim

// Reads a whole file; gzopen is transparent for both raw and gzip content.
std::vector<unsigned char> read_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  int got = 0;
  while ((got = gzread(f, chunk, sizeof(chunk))) > 0) {
    out.insert(out.end(), chunk, chunk + got);
  }
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw IoError("read failure in " + path);
  return out;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    const int wrote =
        gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (wrote != static_cast<int>(bytes.size())) {
      throw IoError("short write to " + path);
    }
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                        const std::string& path) {
  if (off + 4 > b.size()) {
    throw IoError(path + ": truncated at offset " + std::to_string(off));
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void push_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

void check_magic(const std::vector<unsigned char>& b, std::uint32_t want,
                 const std::string& path) {
  const std::uint32_t got = read_be32(b, 0, path);
  if (got != want) {
    char msg[128];
    std::snprintf(msg, sizeof(msg), "%s: bad magic 0x%08x at offset 0 (want 0x%08x)",
                  path.c_str(), got, want);
    throw FormatError(msg);
  }
}

}  // namespace

void Dataset::validate() const {
  const auto& shape = features.shape();
  if (shape.empty() || shape[0] != static_cast<int>(labels.size())) {
    throw ValueError("dataset: feature rows and label count disagree");
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ValueError("dataset: label out of range");
  }
}

SyntheticKind synthetic_kind_from_string(const std::string& name) {
  if (name == "gaussians") return SyntheticKind::gaussians;
  if (name == "moons") return SyntheticKind::moons;
  throw ValueError("unknown synthetic dataset kind: " + name);
}

Dataset make_synthetic(SyntheticKind kind, std::int64_t n, int classes, double noise,
                       std::uint64_t seed) {
  if (classes < 1) throw ValueError("synthetic dataset needs at least one class");
  if (n < classes) throw ValueError("synthetic dataset needs n >= classes");
  if (noise < 0.0) throw ValueError("synthetic noise must be nonnegative");
  if (kind == SyntheticKind::moons && classes != 2) {
    throw ValueError("moons is a two-class construction");
  }

  RandomStream rng(seed);
  Dataset ds;
  ds.classes = classes;
  ds.labels.resize(static_cast<std::size_t>(n));
  std::vector<double> features(static_cast<std::size_t>(2 * n));

  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.next_index(static_cast<std::uint64_t>(classes)));
    ds.labels[static_cast<std::size_t>(i)] = label;
    double x = 0.0, y = 0.0;
    if (kind == SyntheticKind::gaussians) {
      const double angle = 2.0 * M_PI * label / classes;
      x = 2.0 * std::cos(angle);
      y = 2.0 * std::sin(angle);
    } else {
      const double t = rng.uniform(0.0, M_PI);
      if (label == 0) {
        x = std::cos(t);
        y = std::sin(t);
      } else {
        x = 1.0 - std::cos(t);
        y = 0.5 - std::sin(t);
      }
    }
    features[static_cast<std::size_t>(2 * i)] = x + noise * rng.normal();
    features[static_cast<std::size_t>(2 * i + 1)] = y + noise * rng.normal();
  }
  ds.features = Tensor::from_values({static_cast<int>(n), 2}, std::move(features));
  return ds;
}

Dataset make_synthetic(const std::string& kind, std::int64_t n, int classes, double noise,
                       std::uint64_t seed) {
  return make_synthetic(synthetic_kind_from_string(kind), n, classes, noise, seed);
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_bytes(images_path);
  const auto lab = read_bytes(labels_path);
  check_magic(img, kImagesMagic, images_path);
  check_magic(lab, kLabelsMagic, labels_path);

  const std::uint32_t n_img = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t n_lab = read_be32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw ValueError("image count " + std::to_string(n_img) + " does not match label count " +
                     std::to_string(n_lab));
  }
  const std::size_t pixels = std::size_t(n_img) * rows * cols;
  if (img.size() < 16 + pixels) throw IoError(images_path + ": truncated pixel data");
  if (lab.size() < 8 + n_lab) throw IoError(labels_path + ": truncated label data");

  Dataset ds;
  std::vector<double> features(pixels);
  for (std::size_t i = 0; i < pixels; ++i) features[i] = img[16 + i] / 255.0;
  ds.features = Tensor::from_values(
      {static_cast<int>(n_img), 1, static_cast<int>(rows), static_cast<int>(cols)},
      std::move(features));
  ds.labels.resize(n_lab);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n_lab; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = max_label + 1;
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  const auto& shape = ds.features.shape();
  if (shape.size() != 4 || shape[1] != 1) {
    throw ValueError("save_idx expects [N, 1, rows, cols] features");
  }
  ds.validate();
  if (ds.classes > 256) throw ValueError("IDX labels are single bytes");

  std::vector<unsigned char> img;
  push_be32(img, kImagesMagic);
  push_be32(img, static_cast<std::uint32_t>(shape[0]));
  push_be32(img, static_cast<std::uint32_t>(shape[2]));
  push_be32(img, static_cast<std::uint32_t>(shape[3]));
  for (double v : ds.features.values()) {
    const double scaled = v * 255.0;
    const double rounded = std::round(scaled);
    if (v < 0.0 || v > 1.0 || std::abs(scaled - rounded) > 1e-9) {
      throw ValueError("save_idx features must be exact multiples of 1/255 in [0, 1]");
    }
    img.push_back(static_cast<unsigned char>(rounded));
  }

  std::vector<unsigned char> lab;
  push_be32(lab, kLabelsMagic);
  push_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) lab.push_back(static_cast<unsigned char>(l));

  write_bytes(images_path, img);
  write_bytes(labels_path, lab);
}

Batch gather_batch(const Dataset& ds, const std::vector<std::int64_t>& rows) {
  const auto& shape = ds.features.shape();
  const std::int64_t n = ds.size();
  const std::int64_t stride = n == 0 ? 0 : static_cast<std::int64_t>(ds.features.size()) / n;
  const auto& src = ds.features.values();

  Batch b;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(stride) * rows.size());
  b.labels.reserve(rows.size());
  for (std::int64_t r : rows) {
    if (r < 0 || r >= n) throw ValueError("batch row index out of range");
    out.insert(out.end(), src.begin() + r * stride, src.begin() + (r + 1) * stride);
    b.labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
  }
  std::vector<int> bshape(shape);
  bshape[0] = static_cast<int>(rows.size());
  b.x = Tensor::from_values(bshape, std::move(out));
  return b;
}

std::pair<Dataset, Dataset> split_half(const Dataset& ds, std::uint64_t seed) {
  ds.validate();
  if (ds.size() < 2) throw ValueError("split_half needs at least two samples");

  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.classes));
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  }

  RandomStream rng(seed);
  std::vector<std::int64_t> first, second;
  bool extra_to_first = true;  // alternate odd-class leftovers between halves
  for (auto& group : by_class) {
    rng.shuffle(group);
    std::size_t take = group.size() / 2;
    if (group.size() % 2 == 1) {
      if (extra_to_first) ++take;
      extra_to_first = !extra_to_first;
    }
    first.insert(first.end(), group.begin(), group.begin() + take);
    second.insert(second.end(), group.begin() + take, group.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  Batch a = gather_batch(ds, first);
  Batch b = gather_batch(ds, second);
  Dataset train{a.x, std::move(a.labels), ds.classes, "train"};
  Dataset val{b.x, std::move(b.labels), ds.classes, "val"};
  return {std::move(train), std::move(val)};
}

std::vector<Batch> make_batches(const Dataset& ds, std::int64_t batch_size,
                                std::uint64_t seed, bool drop_last) {
  ds.validate();
  if (batch_size < 1) throw ValueError("batch size must be positive");

  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.size()));
  for (std::int64_t i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  RandomStream rng(seed);
  rng.shuffle(order);

  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    if (drop_last && end - start < static_cast<std::size_t>(batch_size)) break;
    out.push_back(gather_batch(
        ds, std::vector<std::int64_t>(order.begin() + start, order.begin() + end)));
  }
  return out;
}

}  // namespace saq
