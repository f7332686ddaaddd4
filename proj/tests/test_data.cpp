#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "data.hpp"
#include "image_io.hpp"
#include "support.hpp"

using namespace kafshot;
using testutil::error_kind;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

void append(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()),
                                           static_cast<long>(b.size()));
}

void write_gzip(const fs::path& p, const std::vector<std::uint8_t>& b) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
  gzclose(f);
}

struct IdxPair {
  std::vector<std::uint8_t> images, labels;
};

// n images of h x w whose pixel (i, r, c) is (i * 31 + r * 7 + c) mod 256
IdxPair make_idx(std::uint32_t n, std::uint32_t h, std::uint32_t w) {
  IdxPair p;
  append(p.images, be32(0x803));
  append(p.images, be32(n));
  append(p.images, be32(h));
  append(p.images, be32(w));
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t r = 0; r < h; ++r)
      for (std::uint32_t c = 0; c < w; ++c) p.images.push_back((i * 31 + r * 7 + c) % 256);
  append(p.labels, be32(0x801));
  append(p.labels, be32(n));
  for (std::uint32_t i = 0; i < n; ++i) p.labels.push_back(i % 10);
  return p;
}

}  // namespace

TEST_CASE("IDX parsing, plain and gzip") {
  testutil::TempDir dir("idx");
  const IdxPair p = make_idx(12, 4, 3);
  write_bytes(dir / "train-images-idx3-ubyte", p.images);
  write_bytes(dir / "train-labels-idx1-ubyte", p.labels);
  write_gzip(dir / "t10k-images-idx3-ubyte.gz", p.images);
  write_gzip(dir / "t10k-labels-idx1-ubyte.gz", p.labels);

  for (const char* prefix : {"train", "t10k"}) {
    Dataset ds = load_mnist_split(dir.path(), prefix);
    REQUIRE(ds.size() == 12);
    CHECK(ds.height() == 4);
    CHECK(ds.width() == 3);
    CHECK(ds.images.at(5, 0, 2, 1) == doctest::Approx(((5 * 31 + 2 * 7 + 1) % 256) / 255.0));
    CHECK(ds.labels[11] == 1);
    CHECK(ds.class_counts().at(0) == 2);
  }
  CHECK(error_kind([&] { load_mnist_split(dir.path(), "val"); }) == ErrorKind::io);
}

TEST_CASE("malformed IDX files name the problem") {
  testutil::TempDir dir("idx-bad");
  const IdxPair good = make_idx(4, 2, 2);
  auto try_load = [&](const std::vector<std::uint8_t>& img, const std::vector<std::uint8_t>& lab) {
    write_bytes(dir / "i", img);
    write_bytes(dir / "l", lab);
    std::string msg;
    try {
      load_idx(dir / "i", dir / "l");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::format);
      msg = e.what();
    }
    return msg;
  };
  auto bad_magic = good.images;
  bad_magic[3] = 0x01;
  CHECK(try_load(bad_magic, good.labels).find("offset 0") != std::string::npos);
  auto truncated = good.images;
  truncated.resize(truncated.size() - 1);
  CHECK(try_load(truncated, good.labels).find("truncated") != std::string::npos);
  CHECK(try_load(good.images, make_idx(5, 2, 2).labels).find("mismatch") != std::string::npos);
  CHECK(try_load({0, 0}, good.labels).find("offset") != std::string::npos);
  CHECK_FALSE(try_load(good.images, good.labels).size() > 0);
}

TEST_CASE("PGM class tree loads with area resampling") {
  testutil::TempDir dir("pgm");
  for (int s = 0; s < 3; ++s) {
    const fs::path cls = dir / ("s" + std::to_string(s + 1));
    fs::create_directories(cls);
    for (int k = 0; k < 2; ++k) {
      GrayImage img{4, 6, std::vector<std::uint8_t>(24, static_cast<std::uint8_t>(40 * s + k))};
      write_pgm(cls / (std::to_string(k + 1) + ".pgm"), img);
    }
  }
  Dataset ds = load_pgm_dir(dir.path(), 2, 3);
  REQUIRE(ds.size() == 6);
  CHECK(ds.images.dim(2) == 2);
  CHECK(ds.labels == std::vector<int>{0, 0, 1, 1, 2, 2});
  // constant images stay constant under area resampling
  CHECK(ds.images.at(5, 0, 1, 2) == doctest::Approx(81.0 / 255.0));
  GrayImage back = read_pgm(dir / "s2" / "1.pgm");
  CHECK(back.width == 6);
  CHECK(back.pixels[0] == 40);
  CHECK(error_kind([&] { load_pgm_dir(dir / "nothing"); }) == ErrorKind::format);
}

TEST_CASE("area resampling conserves mean intensity") {
  std::mt19937_64 rng(501);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = testutil::pick(rng, 2, 12), w = testutil::pick(rng, 2, 12);
    const std::size_t oh = testutil::pick(rng, 1, 12), ow = testutil::pick(rng, 1, 12);
    std::vector<double> src(h * w);
    for (double& v : src) v = u(rng);
    const auto out = resample_area(src, h, w, oh, ow);
    double ms = 0.0, mo = 0.0;
    for (double v : src) ms += v / src.size();
    for (double v : out) mo += v / out.size();
    CHECK(mo == doctest::Approx(ms).epsilon(1e-12));
  }
}

TEST_CASE("omniglot PNG tree inverts and binarises strokes") {
  testutil::TempDir dir("omni");
  for (const char* alpha : {"Alpha", "Beta"})
    for (int c = 1; c <= 2; ++c) {
      const fs::path ch = dir / "images_background" / alpha / ("character0" + std::to_string(c));
      fs::create_directories(ch);
      for (int k = 0; k < 3; ++k) {
        // white page, black stroke in the left half
        GrayImage img{56, 56, std::vector<std::uint8_t>(56 * 56, 255)};
        for (std::size_t r = 0; r < 56; ++r)
          for (std::size_t q = 0; q < 28; ++q) img.pixels[r * 56 + q] = 0;
        write_png(ch / (std::to_string(k) + ".png"), img);
      }
    }
  Dataset ds = load_omniglot_dir(dir.path(), OmniglotSplit::background, 28);
  REQUIRE(ds.size() == 12);
  CHECK(ds.class_counts().size() == 4);
  CHECK(ds.images.at(0, 0, 10, 3) == 1.0);
  CHECK(ds.images.at(0, 0, 10, 20) == 0.0);
  for (double v : ds.images.values()) CHECK((v == 0.0 || v == 1.0));
  CHECK(error_kind([&] { load_omniglot_dir(dir.path(), OmniglotSplit::evaluation); }) ==
        ErrorKind::format);
}

TEST_CASE("synthetic classes: fixed templates, seeded noise") {
  Dataset clean = make_synthetic(4, 3, 28, 1, 0.0);
  Dataset clean2 = make_synthetic(4, 3, 28, 99, 0.0);
  CHECK(clean.images == clean2.images);
  for (int c = 0; c < 4; ++c) {
    CHECK(clean.images.slice(c * 3) == clean.images.slice(c * 3 + 2));
    if (c > 0) CHECK_FALSE(clean.images.slice(c * 3) == clean.images.slice(0));
  }
  Dataset a = make_synthetic(4, 3, 28, 5), b = make_synthetic(4, 3, 28, 5);
  Dataset c = make_synthetic(4, 3, 28, 6);
  CHECK(a.images == b.images);
  CHECK_FALSE(a.images == c.images);
  for (double v : a.images.values()) CHECK((v >= 0.0 && v <= 1.0));
  validate(a);

  Dataset novel = make_synthetic(4, 3, 28, 5, 0.0, 10);
  CHECK(novel.class_counts().begin()->first == 10);
  CHECK_FALSE(novel.images.slice(0) == clean.images.slice(0));
  CHECK(error_kind([] { make_synthetic(1, 3, 28, 0); }) == ErrorKind::parameter);
  CHECK(error_kind([] { make_synthetic(3, 3, 28, 0, -1.0); }) == ErrorKind::parameter);
}

TEST_CASE("seeded subsets are stable prefixes of one shuffle") {
  Dataset ds = make_synthetic(10, 10, 16, 2);
  Dataset s1 = shuffled_subset(ds, 30, 4), s2 = shuffled_subset(ds, 30, 4);
  Dataset s3 = shuffled_subset(ds, 50, 4);
  CHECK(s1.labels == s2.labels);
  CHECK(s1.images == s3.images.rows(0, 30));
  CHECK_FALSE(shuffled_subset(ds, 30, 5).labels == s1.labels);
}

TEST_CASE("pair batches: half similar, half dissimilar, correct labels") {
  Dataset ds = make_synthetic(5, 4, 12, 3);
  for (std::size_t batch : {1u, 2u, 7u, 32u}) {
    PairBatch pb = sample_pairs(ds, batch, batch);
    REQUIRE(pb.y.size() == batch);
    const std::size_t similar = (batch + 1) / 2;
    for (std::size_t i = 0; i < batch; ++i) {
      auto [p, q] = pb.indices[i];
      CHECK(p != q);
      const bool same = ds.labels[p] == ds.labels[q];
      CHECK(same == (i < similar));
      CHECK(pb.y[i] == (same ? PairLabel::similar : PairLabel::dissimilar));
      CHECK(pb.x1.slice(i) == ds.images.slice(p));
      CHECK(pb.x2.slice(i) == ds.images.slice(q));
    }
  }
  CHECK(sample_pairs(ds, 9, 4).indices == sample_pairs(ds, 9, 4).indices);
  Dataset one = make_synthetic(2, 3, 12, 3).subset(std::vector<std::size_t>{0, 1, 2});
  CHECK(error_kind([&] { sample_pairs(one, 4, 0); }) == ErrorKind::sampling);
  CHECK(error_kind([&] { sample_pairs(ds, 0, 0); }) == ErrorKind::parameter);
}

TEST_CASE("episodes: disjoint support and query, balanced classes") {
  Dataset ds = make_synthetic(8, 10, 12, 3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t ways = 2 + seed % 4, shots = 1 + seed % 3, queries = 1 + seed % 7;
    Episode ep = sample_episode(ds, ways, shots, queries, seed);
    REQUIRE(ep.support_labels.size() == ways * shots);
    REQUIRE(ep.query_labels.size() == queries);
    CHECK(std::set<int>(ep.classes.begin(), ep.classes.end()).size() == ways);
    std::vector<std::size_t> per(ways, 0);
    for (int l : ep.support_labels) ++per[l];
    for (std::size_t c : per) CHECK(c == shots);
    std::set<std::size_t> seen(ep.support_index.begin(), ep.support_index.end());
    for (std::size_t i : ep.query_index) CHECK(seen.insert(i).second);
    for (std::size_t i = 0; i < ep.support_index.size(); ++i)
      CHECK(ds.labels[ep.support_index[i]] == ep.classes[ep.support_labels[i]]);
    for (std::size_t i = 0; i < ep.query_index.size(); ++i)
      CHECK(ds.labels[ep.query_index[i]] == ep.classes[ep.query_labels[i]]);
  }
  CHECK(error_kind([&] { sample_episode(ds, 9, 1, 1, 0); }) == ErrorKind::sampling);
  CHECK(error_kind([&] { sample_episode(ds, 5, 10, 1, 0); }) == ErrorKind::sampling);
  CHECK(error_kind([&] { sample_episode(ds, 0, 1, 1, 0); }) == ErrorKind::parameter);
}

TEST_CASE("dataset requests") {
  DatasetRequest r;
  r.classes = 4;
  r.per_class = 5;
  r.subset = 7;
  Dataset a = open_dataset(r);
  CHECK(a.size() == 7);
  CHECK(a.height() == 28);
  r.split = "test";
  Dataset t = open_dataset(r);
  CHECK_FALSE(t.images == a.images);

  DatasetRequest m;
  m.kind = "mnist";
  CHECK(error_kind([&] { open_dataset(m); }) == ErrorKind::config);
  DatasetRequest bad;
  bad.kind = "cifar";
  CHECK(error_kind([&] { open_dataset(bad); }) == ErrorKind::config);
  DatasetRequest o;
  o.kind = "omniglot";
  o.dir = "/nonexistent";
  o.split = "validation";
  CHECK(error_kind([&] { open_dataset(o); }) == ErrorKind::config);
}

TEST_CASE("bundled MNIST subset") {
  const fs::path dir = fs::path(KAFSHOT_SOURCE_DIR) / "data" / "mnist-5k";
  Dataset train = load_mnist_split(dir, "train");
  Dataset test = load_mnist_split(dir, "t10k");
  CHECK(train.size() == 4000);
  CHECK(test.size() == 1000);
  CHECK(train.height() == 28);
  CHECK(train.class_counts().size() == 10);
  validate(train);
}
