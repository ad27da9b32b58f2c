#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include "cem/image.hpp"
#include "cem/random.hpp"

namespace cem::test {

// Uniform samples in [lo, hi] from a dedicated test stream.
inline ImageBuffer random_image(int h, int w, int c, std::uint64_t seed, float lo = 0.0f,
                                float hi = 1.0f) {
  ImageBuffer img(h, w, c);
  CounterRng rng(seed, Stage::testing, 0x7e57);
  for (float& v : img.mutable_data()) v = float(rng.uniform(lo, hi));
  return img;
}

// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cem") {
    std::string templ =
        (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
    if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
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

}  // namespace cem::test
