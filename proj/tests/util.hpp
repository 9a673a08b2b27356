#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "disco/data.hpp"

namespace disco::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("disco-" + tag + "-" + std::to_string(rd()));
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

inline Dataset blobs(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed,
                     double spread = 0.1) {
  SyntheticSpec s;
  s.samples = n;
  s.dim = dim;
  s.classes = classes;
  s.spread = spread;
  s.seed = seed;
  return synthetic_blobs(s);
}

}  // namespace disco::testing
