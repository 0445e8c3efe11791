#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace softmine {

/// Normalized image coordinate; u spans the width, v spans the height.
struct Coord {
  double u = 0.0;
  double v = 0.0;

  bool operator==(const Coord&) const = default;
};

/// True when both components are finite and inside [0,1].
bool in_domain(const Coord& x);

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ground-truth signal: row-major W×H×C lattice of values in [0,1].
struct ImageField {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  ImageField() = default;
  ImageField(int w, int h, int c);
  ImageField(int w, int h, int c, std::vector<double> values);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::span<const double> pixel(std::size_t index) const {
    return {data.data() + index * channels, static_cast<std::size_t>(channels)};
  }

  /// Normalized coordinate of a pixel center: ((x+0.5)/W, (y+0.5)/H).
  Coord pixel_center(std::size_t index) const;
};

ImageField load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const ImageField& img);

/// Writes a scalar map as an RGB raster through a blue→red ramp; values are
/// scaled by the map's maximum.
void save_heatmap(const std::filesystem::path& path, int width, int height, std::span<const double> values);

/// Clamp to [0,1] and quantize with round-half-up.
std::uint8_t to_byte(double value);
/// Ramp color for t in [0,1]: 0 → pure blue, 1 → pure red.
std::array<std::uint8_t, 3> heatmap_color(double t);

/// Bilinear interpolation with the pixel-center convention; queries beyond
/// the outer centers clamp to the edge pixels. Writes `channels` values.
void sample_bilinear(const ImageField& img, const Coord& x, std::span<double> color);
std::vector<double> sample_bilinear(const ImageField& img, const Coord& x);

/// Color and its derivative w.r.t. (u,v); `d_color` holds C rows of (d/du,
/// d/dv). The derivative is zero along an axis in its clamped region.
void sample_bilinear_grad(const ImageField& img, const Coord& x, std::span<double> color,
                          std::span<double> d_color);

/// Normalized Sobel magnitude map used to draw edge-biased coordinates.
struct EdgePdf {
  int width = 0;
  int height = 0;
  std::vector<double> probs;
  std::vector<double> cumulative;
  /// guide[j]: first index whose cumulative exceeds j/guide.size() of the mass. Optional.
  std::vector<std::uint32_t> guide;

  /// Inverse-CDF lookup; `u01` in [0,1).
  std::size_t sample_index(double u01) const;
  void build_guide();
};

/// Sobel magnitude on Rec. 601 luminance with replicate padding.
std::vector<double> sobel_magnitude(const ImageField& img);
EdgePdf sobel_edge_pdf(const ImageField& img);

/// 10·log10(1/MSE); +infinity when the images are identical.
double psnr(const ImageField& pred, const ImageField& gt);
double psnr_from_mse(double mse);

namespace detail {
/// Raw 8-bit raster I/O (PNG). Channels: 1, 2, 3 or 4 on write.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};
Raster read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& raster);
}  // namespace detail

}  // namespace softmine
