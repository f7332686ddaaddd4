#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include <optional>

#include "error.hpp"
#include "tensor.hpp"

namespace testutil {

inline kafshot::Tensor random_tensor(kafshot::Shape shape, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  kafshot::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

inline double max_abs_diff(const kafshot::Tensor& a, const kafshot::Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("kafshot-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Kind of the kafshot::Error thrown by f, or nullopt when it returns normally.
template <class F>
std::optional<kafshot::ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const kafshot::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace testutil
