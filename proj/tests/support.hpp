#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "softmine/image.hpp"

namespace testsupport {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("softmine_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline softmine::ImageField random_image(int w, int h, int c, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  softmine::ImageField img(w, h, c);
  for (double& v : img.data) v = d(gen);
  return img;
}

// Smooth synthetic image: diagonal ramp plus a soft disc.
inline softmine::ImageField gradient_image(int w, int h) {
  softmine::ImageField img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w, v = (y + 0.5) / h;
      const double r2 = (u - 0.6) * (u - 0.6) + (v - 0.4) * (v - 0.4);
      img.at(x, y, 0) = 0.1 + 0.8 * u;
      img.at(x, y, 1) = 0.2 + 0.6 * v;
      img.at(x, y, 2) = 0.2 + 0.6 / (1.0 + 40.0 * r2);
    }
  return img;
}

inline std::filesystem::path asset(const std::string& name) {
  return std::filesystem::path(SOFTMINE_ASSET_DIR) / name;
}

}  // namespace testsupport
