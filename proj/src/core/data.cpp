#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "error.hpp"
#include "image_io.hpp"
#include "rng.hpp"

namespace kafshot {
namespace fs = std::filesystem;

std::map<int, std::size_t> Dataset::class_counts() const {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  return counts;
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  require(!indices.empty(), ErrorKind::parameter, "gather needs at least one index");
  const std::size_t stride = images.size() / images.dim(0);
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<double> data;
  data.reserve(indices.size() * stride);
  for (std::size_t i : indices) {
    require(i < size(), ErrorKind::parameter, "image index " + std::to_string(i) + " out of range");
    data.insert(data.end(), images.data() + i * stride, images.data() + (i + 1) * stride);
  }
  return Tensor(std::move(shape), std::move(data));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = gather(indices);
  out.name = name;
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  return out;
}

void validate(const Dataset& ds) {
  require(ds.images.rank() == 4 && ds.images.dim(1) == 1, ErrorKind::format,
          "dataset images must be [N,1,H,W], got " + shape_string(ds.images.shape()));
  require(ds.images.dim(0) == ds.labels.size(), ErrorKind::format,
          "dataset has " + std::to_string(ds.images.dim(0)) + " images but " +
              std::to_string(ds.labels.size()) + " labels");
  for (double v : ds.images.values()) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::format, "dataset pixel outside [0,1]");
  }
}

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const fs::path& path) {
  require(b.size() >= at + 4, ErrorKind::format,
          "IDX header truncated in " + path.string() + " at offset " + std::to_string(at));
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto img = read_maybe_gzip(images_path);
  const auto lab = read_maybe_gzip(labels_path);

  const std::uint32_t img_magic = be32(img, 0, images_path);
  require(img_magic == 0x00000803, ErrorKind::format,
          "bad IDX image magic " + hex(img_magic) + " in " + images_path.string() +
              " at offset 0 (expected 0x00000803)");
  const std::uint32_t lab_magic = be32(lab, 0, labels_path);
  require(lab_magic == 0x00000801, ErrorKind::format,
          "bad IDX label magic " + hex(lab_magic) + " in " + labels_path.string() +
              " at offset 0 (expected 0x00000801)");

  const std::size_t n = be32(img, 4, images_path);
  const std::size_t h = be32(img, 8, images_path);
  const std::size_t w = be32(img, 12, images_path);
  const std::size_t nl = be32(lab, 4, labels_path);
  require(n == nl, ErrorKind::format,
          "IDX count mismatch at offset 4: " + std::to_string(n) + " images vs " +
              std::to_string(nl) + " labels");
  require(n > 0 && h > 0 && w > 0, ErrorKind::format,
          "IDX image file " + images_path.string() + " declares an empty extent at offset 4");
  require(img.size() >= 16 + n * h * w, ErrorKind::format,
          "IDX image data truncated in " + images_path.string() + " at offset " +
              std::to_string(img.size()));
  require(lab.size() >= 8 + n, ErrorKind::format,
          "IDX label data truncated in " + labels_path.string() + " at offset " +
              std::to_string(lab.size()));

  Dataset ds;
  ds.name = images_path.filename().string();
  ds.images = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) ds.images[i] = img[16 + i] / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = lab[8 + i];
  return ds;
}

Dataset load_mnist_split(const fs::path& dir, const std::string& prefix) {
  auto find = [&](const std::string& stem) {
    for (const char* ext : {"", ".gz"}) {
      fs::path p = dir / (prefix + stem + ext);
      if (fs::exists(p)) return p;
    }
    fail(ErrorKind::io, "missing " + (dir / (prefix + stem)).string() + "[.gz]");
  };
  Dataset ds = load_idx(find("-images-idx3-ubyte"), find("-labels-idx1-ubyte"));
  ds.name = "mnist-" + prefix;
  return ds;
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> to_unit(const GrayImage& img) {
  std::vector<double> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
  return v;
}

Dataset assemble(std::vector<std::vector<double>> images, std::vector<int> labels,
                 std::size_t h, std::size_t w, std::string name) {
  require(!images.empty(), ErrorKind::format, "no images found for dataset " + name);
  Dataset ds;
  ds.name = std::move(name);
  ds.images = Tensor({images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i)
    std::copy(images[i].begin(), images[i].end(), ds.images.data() + i * h * w);
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace

Dataset load_pgm_dir(const fs::path& root, std::size_t height, std::size_t width) {
  require(fs::is_directory(root), ErrorKind::format, root.string() + " is not a directory");
  std::vector<std::vector<double>> images;
  std::vector<int> labels;
  int cls = 0;
  for (const auto& sub : sorted_entries(root, true)) {
    std::size_t found = 0;
    for (const auto& file : sorted_entries(sub, false)) {
      if (file.extension() != ".pgm") continue;
      const GrayImage img = read_pgm(file);
      images.push_back(resample_area(to_unit(img), img.height, img.width, height, width));
      labels.push_back(cls);
      ++found;
    }
    require(found > 0, ErrorKind::format, "class directory " + sub.string() + " has no PGM files");
    ++cls;
  }
  return assemble(std::move(images), std::move(labels), height, width, "att");
}

Dataset load_omniglot_dir(const fs::path& root, OmniglotSplit split, std::size_t extent) {
  const std::string name = split == OmniglotSplit::background ? "background" : "evaluation";
  fs::path dir = root / name;
  if (!fs::is_directory(dir)) dir = root / ("images_" + name);
  require(fs::is_directory(dir), ErrorKind::format,
          "missing Omniglot split directory " + (root / name).string());
  std::vector<std::vector<double>> images;
  std::vector<int> labels;
  int cls = 0;
  for (const auto& alphabet : sorted_entries(dir, true)) {
    for (const auto& character : sorted_entries(alphabet, true)) {
      std::size_t found = 0;
      for (const auto& file : sorted_entries(character, false)) {
        if (file.extension() != ".png") continue;
        const GrayImage img = read_png(file);
        std::vector<double> px = to_unit(img);
        for (double& v : px) v = 1.0 - v;  // dark strokes on a white background
        px = resample_area(px, img.height, img.width, extent, extent);
        for (double& v : px) v = v >= 0.5 ? 1.0 : 0.0;
        images.push_back(std::move(px));
        labels.push_back(cls);
        ++found;
      }
      if (found > 0) ++cls;
    }
  }
  return assemble(std::move(images), std::move(labels), extent, extent, "omniglot-" + name);
}

namespace {

constexpr std::uint64_t kTemplateSeed = 0x7e3a1a7eULL;

std::vector<double> class_template(int cls, std::size_t h) {
  Rng rng = make_rng(kTemplateSeed, static_cast<std::uint64_t>(cls));
  const auto H = static_cast<long>(h);
  const long thick = std::max(1L, H / 14);
  const long min_len = H / 2;
  auto uniform = [&](long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };
  std::vector<double> t(h * h, 0.0);
  auto paint = [&](long y, long x, double v) {
    if (y >= 0 && y < H && x >= 0 && x < H) t[y * H + x] = std::max(t[y * H + x], v);
  };
  // horizontal bar
  {
    const long row = uniform(1, H - 1 - thick);
    const long start = uniform(0, H - min_len);
    const long len = uniform(min_len, H - start);
    for (long y = row; y < row + thick; ++y)
      for (long x = start; x < start + len; ++x) paint(y, x, 1.0);
  }
  // vertical bar
  {
    const long col = uniform(1, H - 1 - thick);
    const long start = uniform(0, H - min_len);
    const long len = uniform(min_len, H - start);
    for (long x = col; x < col + thick; ++x)
      for (long y = start; y < start + len; ++y) paint(y, x, 1.0);
  }
  // gaussian blob
  {
    const double cy = static_cast<double>(uniform(H / 5, 4 * H / 5));
    const double cx = static_cast<double>(uniform(H / 5, 4 * H / 5));
    const double sigma = std::max(1.0, H / 10.0);
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < H; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        paint(y, x, std::exp(-d2 / (2 * sigma * sigma)));
      }
  }
  return t;
}

}  // namespace

Dataset make_synthetic(int classes, int per_class, std::size_t height, std::uint64_t seed,
                       double noise_std, int first_class) {
  require(classes >= 2, ErrorKind::parameter, "synthetic data needs at least two classes");
  require(per_class >= 1, ErrorKind::parameter, "synthetic data needs at least one image per class");
  require(height >= 8, ErrorKind::parameter, "synthetic images must be at least 8 pixels high");
  require(noise_std >= 0.0, ErrorKind::parameter, "noise std must be non-negative");
  Rng rng = make_rng(seed, 1);
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  const std::size_t plane = height * height;
  Dataset ds;
  ds.name = "synthetic";
  ds.images = Tensor({static_cast<std::size_t>(classes * per_class), 1, height, height});
  std::size_t i = 0;
  for (int c = 0; c < classes; ++c) {
    const auto tmpl = class_template(first_class + c, height);
    for (int k = 0; k < per_class; ++k, ++i) {
      double* px = ds.images.data() + i * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = tmpl[p] + (noise_std > 0.0 ? noise(rng) : 0.0);
        px[p] = std::clamp(v, 0.0, 1.0);
      }
      ds.labels.push_back(first_class + c);
    }
  }
  return ds;
}

Dataset shuffled_subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  require(n > 0 && n <= ds.size(), ErrorKind::parameter,
          "subset size " + std::to_string(n) + " outside [1, " + std::to_string(ds.size()) + "]");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 2);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n);
  return ds.subset(order);
}

namespace {

std::map<int, std::vector<std::size_t>> members_by_class(const Dataset& ds) {
  std::map<int, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < ds.size(); ++i) m[ds.labels[i]].push_back(i);
  return m;
}

}  // namespace

PairBatch sample_pairs(const Dataset& ds, std::size_t batch, std::uint64_t seed) {
  require(batch > 0, ErrorKind::parameter, "pair batch size must be positive");
  const auto members = members_by_class(ds);
  require(members.size() >= 2, ErrorKind::sampling, "pair sampling needs at least two classes");
  std::vector<int> classes;
  for (const auto& [cls, idx] : members) {
    require(idx.size() >= 2, ErrorKind::sampling,
            "class " + std::to_string(cls) + " has fewer than two images");
    classes.push_back(cls);
  }
  Rng rng = make_rng(seed, 3);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  PairBatch pb;
  const std::size_t similar = (batch + 1) / 2;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t i = 0, j = 0;
    if (b < similar) {
      const auto& idx = members.at(classes[pick(classes.size())]);
      const std::size_t a = pick(idx.size());
      std::size_t o = pick(idx.size() - 1);
      if (o >= a) ++o;
      i = idx[a];
      j = idx[o];
      pb.y.push_back(PairLabel::similar);
    } else {
      const std::size_t ca = pick(classes.size());
      std::size_t cb = pick(classes.size() - 1);
      if (cb >= ca) ++cb;
      const auto& ia = members.at(classes[ca]);
      const auto& ib = members.at(classes[cb]);
      i = ia[pick(ia.size())];
      j = ib[pick(ib.size())];
      pb.y.push_back(PairLabel::dissimilar);
    }
    pb.indices.emplace_back(i, j);
  }
  std::vector<std::size_t> first, second;
  for (const auto& [i, j] : pb.indices) {
    first.push_back(i);
    second.push_back(j);
  }
  pb.x1 = ds.gather(first);
  pb.x2 = ds.gather(second);
  return pb;
}

Episode sample_episode(const Dataset& ds, std::size_t ways, std::size_t shots,
                       std::size_t queries, std::uint64_t seed) {
  require(ways >= 1 && shots >= 1, ErrorKind::parameter, "episode needs N >= 1 and K >= 1");
  const auto members = members_by_class(ds);
  require(ways <= members.size(), ErrorKind::sampling,
          std::to_string(ways) + "-way episode requested but the dataset has " +
              std::to_string(members.size()) + " classes");
  const std::size_t per_class_queries = (queries + ways - 1) / ways;
  std::vector<int> eligible;
  for (const auto& [cls, idx] : members)
    if (idx.size() >= shots + per_class_queries) eligible.push_back(cls);
  require(eligible.size() >= ways, ErrorKind::sampling,
          "only " + std::to_string(eligible.size()) + " classes have " +
              std::to_string(shots + per_class_queries) + " or more images; need " +
              std::to_string(ways));

  Rng rng = make_rng(seed, 4);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(ways);

  std::vector<std::size_t> query_count(ways, queries / ways);
  std::vector<std::size_t> order(ways);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t r = 0; r < queries % ways; ++r) ++query_count[order[r]];

  Episode ep;
  ep.ways = ways;
  ep.classes = eligible;
  for (std::size_t local = 0; local < ways; ++local) {
    std::vector<std::size_t> idx = members.at(eligible[local]);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < shots; ++k) {
      ep.support_index.push_back(idx[k]);
      ep.support_labels.push_back(static_cast<int>(local));
    }
    for (std::size_t q = 0; q < query_count[local]; ++q) {
      ep.query_index.push_back(idx[shots + q]);
      ep.query_labels.push_back(static_cast<int>(local));
    }
  }
  ep.support = ds.gather(ep.support_index);
  if (!ep.query_index.empty()) ep.query = ds.gather(ep.query_index);
  return ep;
}

Dataset open_dataset(const DatasetRequest& req) {
  const std::string& split = req.split;
  auto need_dir = [&] {
    require(!req.dir.empty(), ErrorKind::config, "--data-dir is required for dataset " + req.kind);
  };
  Dataset ds;
  if (req.kind == "mnist") {
    need_dir();
    require(split == "train" || split == "test", ErrorKind::config,
            "mnist split must be train or test (got '" + split + "')");
    ds = load_mnist_split(req.dir, split == "train" ? "train" : "t10k");
    if (req.extent != 0 && req.extent != ds.height()) {
      fail(ErrorKind::config, "mnist images are " + std::to_string(ds.height()) +
                                  " pixels high, not " + std::to_string(req.extent));
    }
  } else if (req.kind == "att") {
    need_dir();
    require(split == "train" || split == "all", ErrorKind::config,
            "att has a single split (got '" + split + "')");
    const std::size_t e = req.extent ? req.extent : 100;
    ds = load_pgm_dir(req.dir, e, e);
  } else if (req.kind == "omniglot") {
    need_dir();
    OmniglotSplit which;
    if (split == "background" || split == "train") which = OmniglotSplit::background;
    else if (split == "evaluation" || split == "test") which = OmniglotSplit::evaluation;
    else fail(ErrorKind::config, "omniglot split must be background or evaluation (got '" + split + "')");
    ds = load_omniglot_dir(req.dir, which, req.extent ? req.extent : 28);
  } else if (req.kind == "synthetic") {
    require(split == "train" || split == "test", ErrorKind::config,
            "synthetic split must be train or test (got '" + split + "')");
    const std::uint64_t seed = split == "train" ? req.seed : mix_seed(req.seed, 77);
    ds = make_synthetic(req.classes, req.per_class, req.extent ? req.extent : 28, seed,
                        req.noise, req.first_class);
  } else {
    fail(ErrorKind::config,
         "unknown dataset '" + req.kind + "' (valid: mnist, att, omniglot, synthetic)");
  }
  validate(ds);
  if (req.subset > 0 && req.subset < ds.size()) {
    std::string name = ds.name;
    ds = shuffled_subset(ds, req.subset, req.seed);
    ds.name = std::move(name);
  }
  return ds;
}

}  // namespace kafshot
