#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "error.hpp"

namespace kafshot {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'K', 'A', 'F', 'S', 'H', 'O', 'T', '\0'};

LayerKind parse_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::conv2d, LayerKind::maxpool2d, LayerKind::linear,
                      LayerKind::relu, LayerKind::kaf, LayerKind::kaf2d, LayerKind::flatten}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorKind::format, "unknown layer kind '" + s + "'");
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& buf) : buf_(buf) {}

  void need(std::size_t n) const {
    require(pos_ + n <= buf_.size(), ErrorKind::format,
            "checkpoint truncated at offset " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<Tensor*> state_tensors(Network& net) {
  std::vector<Tensor*> out;
  for (auto& slot : net.parameters()) out.push_back(slot.value);
  return out;
}

}  // namespace

json spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& d : spec.layers) {
    layers.push_back({{"kind", to_string(d.kind)},
                      {"in", d.in},
                      {"out", d.out},
                      {"kernel", d.kernel},
                      {"stride", d.stride},
                      {"padding", d.padding},
                      {"window", d.window}});
  }
  json kaf = {{"dictionary_size", spec.kaf.dictionary_size},
              {"bound", spec.kaf.bound},
              {"per_channel", spec.kaf.per_channel},
              {"init", spec.kaf.init == KafInit::elu ? "elu" : "random"}};
  kaf["gamma"] = spec.kaf.gamma ? json(*spec.kaf.gamma) : json(nullptr);
  return {{"name", spec.name},
          {"input", spec.input},
          {"activation", to_string(spec.activation)},
          {"embedding_dim", spec.embedding_dim},
          {"kaf", kaf},
          {"layers", layers}};
}

NetworkSpec spec_from_json(const json& j) {
  try {
    NetworkSpec s;
    s.name = j.at("name").get<std::string>();
    s.input = j.at("input").get<Shape>();
    s.activation = parse_activation(j.at("activation").get<std::string>());
    s.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    const auto& k = j.at("kaf");
    s.kaf.dictionary_size = k.at("dictionary_size").get<int>();
    s.kaf.bound = k.at("bound").get<double>();
    s.kaf.per_channel = k.at("per_channel").get<bool>();
    s.kaf.init = k.at("init").get<std::string>() == "elu" ? KafInit::elu : KafInit::random;
    if (!k.at("gamma").is_null()) s.kaf.gamma = k.at("gamma").get<double>();
    for (const auto& l : j.at("layers")) {
      LayerDescriptor d;
      d.kind = parse_kind(l.at("kind").get<std::string>());
      d.in = l.at("in").get<std::size_t>();
      d.out = l.at("out").get<std::size_t>();
      d.kernel = l.at("kernel").get<std::size_t>();
      d.stride = l.at("stride").get<std::size_t>();
      d.padding = l.at("padding").get<std::size_t>();
      d.window = l.at("window").get<std::size_t>();
      s.layers.push_back(d);
    }
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed network spec: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     std::uint64_t seed, const json& config) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(seed);
  w.str(json{{"spec", spec_to_json(net.spec())}, {"config", config}}.dump());
  const auto slots = net.parameters();
  w.u32(static_cast<std::uint32_t>(slots.size()));
  for (const auto& slot : slots) {
    w.str(slot.name);
    const Tensor& t = *slot.value;
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  auto& buf = w.buffer();
  const std::uint64_t sum = fnv1a(buf.data(), buf.size());
  w.u64(sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open checkpoint " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  require(buf.size() >= sizeof kMagic + 8 &&
              std::memcmp(buf.data(), kMagic, sizeof kMagic) == 0,
          ErrorKind::format, path.string() + " is not a checkpoint (bad magic at offset 0)");
  const std::size_t body_end = buf.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(buf[body_end + i]) << (8 * i);
  require(stored == fnv1a(buf.data(), body_end), ErrorKind::format,
          "checkpoint checksum mismatch at offset " + std::to_string(body_end));

  Reader body(buf);
  body.skip(sizeof kMagic);
  const std::uint32_t version = body.u32();
  require(version == kCheckpointVersion, ErrorKind::format,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.seed = body.u64();
  json header;
  try {
    header = json::parse(body.str());
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("checkpoint header is not JSON: ") + e.what());
  }
  ck.network = Network(spec_from_json(header.at("spec")));
  ck.config = header.value("config", json(nullptr));

  auto tensors = state_tensors(ck.network);
  auto slots = ck.network.parameters();
  const std::uint32_t count = body.u32();
  require(count == tensors.size(), ErrorKind::format,
          "checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
              std::to_string(tensors.size()));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = body.pos();
    const std::string name = body.str();
    require(name == slots[i].name, ErrorKind::format,
            "tensor '" + name + "' at offset " + std::to_string(at) + " expected '" +
                slots[i].name + "'");
    const std::uint32_t rank = body.u32();
    Shape shape(rank);
    for (auto& d : shape) d = body.u64();
    require(shape == tensors[i]->shape(), ErrorKind::format,
            "tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                shape_string(tensors[i]->shape()));
    for (double& v : tensors[i]->values()) v = body.f64();
  }
  require(body.pos() == buf.size() - 8, ErrorKind::format,
          "trailing bytes in checkpoint at offset " + std::to_string(body.pos()));
  return ck;
}

}  // namespace kafshot
