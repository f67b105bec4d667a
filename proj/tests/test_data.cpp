#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "saq/data.hpp"
#include "saq/error.hpp"
#include "saq/rng.hpp"
#include "saq/tensor.hpp"

using namespace saq;

namespace {

void write_raw(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

void push32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

std::vector<unsigned char> fixture_images() {
  std::vector<unsigned char> v;
  push32(v, 0x803);
  push32(v, 2);  // two images
  push32(v, 3);  // rows
  push32(v, 3);  // cols
  for (int i = 0; i < 18; ++i) v.push_back(static_cast<unsigned char>(i * 13));
  return v;
}

std::vector<unsigned char> fixture_labels(std::uint32_t n = 2) {
  std::vector<unsigned char> v;
  push32(v, 0x801);
  push32(v, n);
  for (std::uint32_t i = 0; i < n; ++i) v.push_back(static_cast<unsigned char>(2 + 3 * i));
  return v;
}

}  // namespace

TEST_CASE("synthetic gaussians") {
  SUBCASE("noise-free points sit on their class means: nearest-mean scores 100%") {
    const int classes = 5;
    Dataset ds = make_synthetic(SyntheticKind::gaussians, 300, classes, 0.0, 7);
    ds.validate();
    const auto& f = ds.features.values();
    for (std::int64_t i = 0; i < ds.size(); ++i) {
      int best = -1;
      double best_d = 1e300;
      for (int c = 0; c < classes; ++c) {
        const double mx = 2.0 * std::cos(2.0 * M_PI * c / classes);
        const double my = 2.0 * std::sin(2.0 * M_PI * c / classes);
        const double dx = f[2 * i] - mx;
        const double dy = f[2 * i + 1] - my;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      REQUIRE(best == ds.labels[static_cast<std::size_t>(i)]);
    }
  }

  SUBCASE("same seed gives bit-identical datasets") {
    Dataset a = make_synthetic("gaussians", 500, 4, 0.3, 99);
    Dataset b = make_synthetic("gaussians", 500, 4, 0.3, 99);
    CHECK(bytes_checksum(a.features.values()) == bytes_checksum(b.features.values()));
    CHECK(a.labels == b.labels);
    Dataset c = make_synthetic("gaussians", 500, 4, 0.3, 100);
    CHECK(bytes_checksum(a.features.values()) != bytes_checksum(c.features.values()));
  }

  SUBCASE("class frequencies stay within 3 sigma of the multinomial") {
    const int classes = 7;
    const std::int64_t n = 10000;
    Dataset ds = make_synthetic(SyntheticKind::gaussians, n, classes, 0.1, 31);
    std::vector<int> counts(classes, 0);
    for (int l : ds.labels) counts[static_cast<std::size_t>(l)]++;
    const double p = 1.0 / classes;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    for (int c = 0; c < classes; ++c) {
      CHECK(std::abs(counts[static_cast<std::size_t>(c)] - n * p) <= 3.0 * sigma);
    }
  }

  SUBCASE("contract errors") {
    CHECK_THROWS_AS(make_synthetic("circles", 10, 2, 0.1, 1), ValueError);
    CHECK_THROWS_AS(make_synthetic("gaussians", 3, 5, 0.1, 1), ValueError);
    CHECK_THROWS_AS(make_synthetic("gaussians", 10, 2, -0.1, 1), ValueError);
    CHECK_THROWS_AS(make_synthetic("moons", 10, 3, 0.1, 1), ValueError);
  }
}

TEST_CASE("synthetic moons lie on their arcs when noise-free") {
  Dataset ds = make_synthetic(SyntheticKind::moons, 400, 2, 0.0, 11);
  ds.validate();
  const auto& f = ds.features.values();
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    const double x = f[2 * i];
    const double y = f[2 * i + 1];
    if (ds.labels[static_cast<std::size_t>(i)] == 0) {
      CHECK(std::abs(x * x + y * y - 1.0) <= 1e-12);
      CHECK(y >= -1e-12);  // upper arc
    } else {
      const double dx = 1.0 - x;
      const double dy = 0.5 - y;
      CHECK(std::abs(dx * dx + dy * dy - 1.0) <= 1e-12);
      CHECK(y <= 0.5 + 1e-12);  // lower arc
    }
  }
}

TEST_CASE("idx loading") {
  SUBCASE("hand-built 2-image 3x3 pair parses with scaled pixels") {
    write_raw("idx_imgs.bin", fixture_images());
    write_raw("idx_labs.bin", fixture_labels());
    Dataset ds = load_idx("idx_imgs.bin", "idx_labs.bin");
    CHECK(ds.features.shape() == std::vector<int>{2, 1, 3, 3});
    CHECK(ds.labels == std::vector<int>{2, 5});
    CHECK(ds.classes == 6);
    const auto& v = ds.features.values();
    REQUIRE(v.size() == 18);
    for (int i = 0; i < 18; ++i) CHECK(v[i] == (i * 13) / 255.0);
  }

  SUBCASE("bad magic raises a format error naming the offset") {
    auto imgs = fixture_images();
    imgs[3] = 0x07;
    write_raw("idx_badmagic.bin", imgs);
    write_raw("idx_labs.bin", fixture_labels());
    try {
      load_idx("idx_badmagic.bin", "idx_labs.bin");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    // labels magic is checked too
    write_raw("idx_imgs.bin", fixture_images());
    auto labs = fixture_labels();
    labs[3] = 0x03;
    write_raw("idx_badlabs.bin", labs);
    CHECK_THROWS_AS(load_idx("idx_imgs.bin", "idx_badlabs.bin"), FormatError);
  }

  SUBCASE("count mismatch and truncation") {
    write_raw("idx_imgs.bin", fixture_images());
    write_raw("idx_labs3.bin", fixture_labels(3));
    CHECK_THROWS_AS(load_idx("idx_imgs.bin", "idx_labs3.bin"), ValueError);

    auto short_imgs = fixture_images();
    short_imgs.resize(short_imgs.size() - 4);
    write_raw("idx_short.bin", short_imgs);
    write_raw("idx_labs.bin", fixture_labels());
    CHECK_THROWS_AS(load_idx("idx_short.bin", "idx_labs.bin"), IoError);

    CHECK_THROWS_AS(load_idx("no_such_file.bin", "idx_labs.bin"), IoError);
  }

  SUBCASE("write-then-read round-trips bit-identically, raw and gzip") {
    RandomStream rng(17);
    const int n = 12, hw = 5;
    std::vector<double> feats(static_cast<std::size_t>(n * hw * hw));
    for (auto& v : feats) v = static_cast<double>(rng.next_index(256)) / 255.0;
    Dataset ds;
    ds.features = Tensor::from_values({n, 1, hw, hw}, std::move(feats));
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = static_cast<int>(rng.next_index(10));
    ds.labels[0] = 9;  // pin the class count
    ds.classes = 10;

    for (const char* suffix : {"", ".gz"}) {
      const std::string ip = std::string("idx_rt_imgs.bin") + suffix;
      const std::string lp = std::string("idx_rt_labs.bin") + suffix;
      save_idx(ds, ip, lp);
      Dataset back = load_idx(ip, lp);
      CHECK(back.features.shape() == ds.features.shape());
      CHECK(bytes_checksum(back.features.values()) == bytes_checksum(ds.features.values()));
      CHECK(back.labels == ds.labels);
      CHECK(back.classes == 10);
    }

    // the .gz variant really is compressed
    std::ifstream gz("idx_rt_imgs.bin.gz", std::ios::binary);
    unsigned char head[2] = {0, 0};
    gz.read(reinterpret_cast<char*>(head), 2);
    CHECK(head[0] == 0x1f);
    CHECK(head[1] == 0x8b);
  }
}

TEST_CASE("stratified half split") {
  // features carry their original row index so splits can be audited
  auto indexed_dataset = [](int n, int classes, auto label_of) {
    Dataset ds;
    std::vector<double> f(static_cast<std::size_t>(2 * n));
    ds.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      f[2 * i] = i;
      f[2 * i + 1] = 0.0;
      ds.labels[static_cast<std::size_t>(i)] = label_of(i);
    }
    ds.features = Tensor::from_values({n, 2}, std::move(f));
    ds.classes = classes;
    return ds;
  };

  SUBCASE("balanced 100/10 gives 50/50 with 5 per class per half") {
    Dataset ds = indexed_dataset(100, 10, [](int i) { return i % 10; });
    auto [a, b] = split_half(ds, 3);
    CHECK(a.size() == 50);
    CHECK(b.size() == 50);
    CHECK(a.split == "train");
    CHECK(b.split == "val");
    std::vector<int> ca(10, 0), cb(10, 0);
    for (int l : a.labels) ca[static_cast<std::size_t>(l)]++;
    for (int l : b.labels) cb[static_cast<std::size_t>(l)]++;
    for (int c = 0; c < 10; ++c) {
      CHECK(ca[static_cast<std::size_t>(c)] == 5);
      CHECK(cb[static_cast<std::size_t>(c)] == 5);
    }

    // disjoint and exhaustive in terms of original rows
    std::set<int> seen;
    for (const Dataset* d : {&a, &b}) {
      for (std::int64_t i = 0; i < d->size(); ++i) {
        seen.insert(static_cast<int>(d->features.values()[2 * i]));
      }
    }
    CHECK(seen.size() == 100);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 99);
  }

  SUBCASE("same seed same split, different seed different split") {
    Dataset ds = indexed_dataset(101, 3, [](int i) { return (i * 7 + 1) % 3; });
    auto [a1, b1] = split_half(ds, 5);
    auto [a2, b2] = split_half(ds, 5);
    CHECK(bytes_checksum(a1.features.values()) == bytes_checksum(a2.features.values()));
    CHECK(a1.labels == a2.labels);
    auto [a3, b3] = split_half(ds, 6);
    CHECK(bytes_checksum(a1.features.values()) != bytes_checksum(a3.features.values()));

    // per-class imbalance stays within one even for odd class counts
    std::vector<int> ca(3, 0), cb(3, 0);
    for (int l : a1.labels) ca[static_cast<std::size_t>(l)]++;
    for (int l : b1.labels) cb[static_cast<std::size_t>(l)]++;
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(ca[static_cast<std::size_t>(c)] - cb[static_cast<std::size_t>(c)]) <= 1);
    }
    CHECK(std::abs(static_cast<int>(a1.size() - b1.size())) <= 1);
  }

  SUBCASE("too small to split") {
    Dataset ds = indexed_dataset(1, 1, [](int) { return 0; });
    CHECK_THROWS_AS(split_half(ds, 1), ValueError);
  }
}

TEST_CASE("seeded batching") {
  Dataset ds = make_synthetic(SyntheticKind::gaussians, 10, 2, 0.2, 21);

  SUBCASE("batch sizes 3,3,3,1 and drop_last trims the tail") {
    auto full = make_batches(ds, 3, 1, false);
    REQUIRE(full.size() == 4);
    CHECK(full[0].x.shape()[0] == 3);
    CHECK(full[1].x.shape()[0] == 3);
    CHECK(full[2].x.shape()[0] == 3);
    CHECK(full[3].x.shape()[0] == 1);

    auto trimmed = make_batches(ds, 3, 1, true);
    REQUIRE(trimmed.size() == 3);
    for (const auto& b : trimmed) CHECK(b.x.shape()[0] == 3);
  }

  SUBCASE("an epoch visits every sample exactly once") {
    auto batches = make_batches(ds, 4, 9, false);
    std::vector<double> rows;
    for (const auto& b : batches) {
      for (int i = 0; i < b.x.shape()[0]; ++i) rows.push_back(b.x.values()[2 * i]);
    }
    std::sort(rows.begin(), rows.end());
    std::vector<double> want(ds.features.values());
    std::vector<double> first_col;
    for (std::int64_t i = 0; i < ds.size(); ++i) first_col.push_back(want[2 * i]);
    std::sort(first_col.begin(), first_col.end());
    CHECK(rows == first_col);
  }

  SUBCASE("same seed same order, derived seeds differ") {
    auto flatten = [](const std::vector<Batch>& bs) {
      std::vector<int> labels;
      for (const auto& b : bs) labels.insert(labels.end(), b.labels.begin(), b.labels.end());
      return labels;
    };
    auto e1 = flatten(make_batches(ds, 3, 1234, false));
    auto e1b = flatten(make_batches(ds, 3, 1234, false));
    auto e2 = flatten(make_batches(ds, 3, 1235, false));
    CHECK(e1 == e1b);
    CHECK(e1 != e2);
  }

  SUBCASE("contract errors") {
    CHECK_THROWS_AS(make_batches(ds, 0, 1, false), ValueError);
    CHECK_THROWS_AS(gather_batch(ds, {0, 10}), ValueError);
    Dataset bad = ds;
    bad.labels[0] = 7;
    CHECK_THROWS_AS(bad.validate(), ValueError);
  }
}
