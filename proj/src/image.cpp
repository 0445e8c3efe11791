#include "softmine/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace softmine {

bool in_domain(const Coord& x) {
  return std::isfinite(x.u) && std::isfinite(x.v) && x.u >= 0.0 && x.u <= 1.0 && x.v >= 0.0 && x.v <= 1.0;
}

ImageField::ImageField(int w, int h, int c) : ImageField(w, h, c, std::vector<double>(static_cast<std::size_t>(w) * h * c, 0.0)) {}

ImageField::ImageField(int w, int h, int c, std::vector<double> values)
    : width(w), height(h), channels(c), data(std::move(values)) {
  if (w < 1 || h < 1) throw ImageError("image dimensions must be positive");
  if (c != 1 && c != 3) throw ImageError("unsupported channels: " + std::to_string(c));
  if (data.size() != static_cast<std::size_t>(w) * h * c) throw ImageError("image data length does not match dimensions");
}

Coord ImageField::pixel_center(std::size_t index) const {
  const auto x = static_cast<double>(index % width);
  const auto y = static_cast<double>(index / width);
  return {(x + 0.5) / width, (y + 0.5) / height};
}

ImageField load_image(const std::filesystem::path& path) {
  detail::Raster r = detail::read_png(path);
  if (r.channels != 1 && r.channels != 3) {
    throw ImageError("unsupported channels: " + std::to_string(r.channels) + " in '" + path.string() +
                     "' (expected grayscale or RGB)");
  }
  std::vector<double> values(r.bytes.size());
  std::transform(r.bytes.begin(), r.bytes.end(), values.begin(), [](std::uint8_t b) { return b / 255.0; });
  return ImageField(r.width, r.height, r.channels, std::move(values));
}

std::uint8_t to_byte(double value) {
  if (!(value > 0.0)) return 0;  // also maps NaN to 0
  if (value >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::floor(value * 255.0 + 0.5));
}

std::array<std::uint8_t, 3> heatmap_color(double t) {
  const double c = std::clamp(std::isfinite(t) ? t : 1.0, 0.0, 1.0);
  return {to_byte(c), 0, to_byte(1.0 - c)};
}

void save_image(const std::filesystem::path& path, const ImageField& img) {
  detail::Raster r{img.width, img.height, img.channels, {}};
  r.bytes.resize(img.data.size());
  std::transform(img.data.begin(), img.data.end(), r.bytes.begin(), to_byte);
  detail::write_png(path, r);
}

void save_heatmap(const std::filesystem::path& path, int width, int height, std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(width) * height) throw ImageError("heatmap size does not match dimensions");
  double peak = 0.0;
  for (double v : values)
    if (std::isfinite(v)) peak = std::max(peak, v);
  detail::Raster r{width, height, 3, std::vector<std::uint8_t>(values.size() * 3)};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto rgb = heatmap_color(peak > 0.0 ? values[i] / peak : 0.0);
    std::copy(rgb.begin(), rgb.end(), r.bytes.begin() + i * 3);
  }
  detail::write_png(path, r);
}

namespace {

void require_domain(const Coord& x) {
  if (!in_domain(x)) {
    throw std::out_of_range("coordinate (" + std::to_string(x.u) + ", " + std::to_string(x.v) + ") outside [0,1]^2");
  }
}

// One interpolation axis: lower lattice index, fraction, and whether the
// query lies in a clamped region (no derivative).
struct Axis {
  int i0;
  int i1;
  double t;
  bool clamped;
};

Axis locate(double coord, int n) {
  const double p = coord * n - 0.5;
  if (n == 1) return {0, 0, 0.0, true};
  if (p < 0.0) return {0, 0, 0.0, true};
  if (p > n - 1) return {n - 1, n - 1, 0.0, true};
  const int i0 = std::min(static_cast<int>(std::floor(p)), n - 2);
  return {i0, i0 + 1, p - i0, false};
}

}  // namespace

void sample_bilinear(const ImageField& img, const Coord& x, std::span<double> color) {
  require_domain(x);
  const Axis ax = locate(x.u, img.width);
  const Axis ay = locate(x.v, img.height);
  for (int c = 0; c < img.channels; ++c) {
    const double top = (1.0 - ax.t) * img.at(ax.i0, ay.i0, c) + ax.t * img.at(ax.i1, ay.i0, c);
    const double bottom = (1.0 - ax.t) * img.at(ax.i0, ay.i1, c) + ax.t * img.at(ax.i1, ay.i1, c);
    color[c] = (1.0 - ay.t) * top + ay.t * bottom;
  }
}

std::vector<double> sample_bilinear(const ImageField& img, const Coord& x) {
  std::vector<double> color(img.channels);
  sample_bilinear(img, x, color);
  return color;
}

void sample_bilinear_grad(const ImageField& img, const Coord& x, std::span<double> color, std::span<double> d_color) {
  require_domain(x);
  const Axis ax = locate(x.u, img.width);
  const Axis ay = locate(x.v, img.height);
  for (int c = 0; c < img.channels; ++c) {
    const double v00 = img.at(ax.i0, ay.i0, c);
    const double v10 = img.at(ax.i1, ay.i0, c);
    const double v01 = img.at(ax.i0, ay.i1, c);
    const double v11 = img.at(ax.i1, ay.i1, c);
    const double top = (1.0 - ax.t) * v00 + ax.t * v10;
    const double bottom = (1.0 - ax.t) * v01 + ax.t * v11;
    color[c] = (1.0 - ay.t) * top + ay.t * bottom;
    // d/du = (dp/du) · d/dp with dp/du = W.
    d_color[2 * c] = ax.clamped ? 0.0 : img.width * ((1.0 - ay.t) * (v10 - v00) + ay.t * (v11 - v01));
    d_color[2 * c + 1] = ay.clamped ? 0.0 : img.height * (bottom - top);
  }
}

std::size_t EdgePdf::sample_index(double u01) const {
  const double key = u01 * cumulative.back();
  auto first = cumulative.begin();
  auto last = cumulative.end();
  if (!guide.empty()) {
    const auto j = std::min(static_cast<std::size_t>(u01 * static_cast<double>(guide.size())), guide.size() - 1);
    // One bucket of slack either side absorbs rounding in the bucket index.
    first += guide[j > 0 ? j - 1 : 0];
    if (j + 2 < guide.size()) last = cumulative.begin() + guide[j + 2] + 1;
  }
  const auto it = std::upper_bound(first, last, key);
  auto index = static_cast<std::size_t>(it - cumulative.begin());
  index = std::min(index, cumulative.size() - 1);
  // Skip zero-mass cells that share the boundary value.
  while (probs[index] == 0.0 && index + 1 < probs.size()) ++index;
  return index;
}

std::vector<double> sobel_magnitude(const ImageField& img) {
  const int w = img.width;
  const int h = img.height;
  std::vector<double> lum(img.pixel_count());
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const auto px = img.pixel(i);
    lum[i] = img.channels == 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
  }
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return lum[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<double> mag(lum.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
      const double gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
      mag[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return mag;
}

EdgePdf sobel_edge_pdf(const ImageField& img) {
  if (img.pixel_count() == 0) throw ImageError("edge pdf of an empty image");
  EdgePdf pdf;
  pdf.width = img.width;
  pdf.height = img.height;
  pdf.probs = sobel_magnitude(img);
  const double total = std::accumulate(pdf.probs.begin(), pdf.probs.end(), 0.0);
  if (total > 0.0) {
    for (double& p : pdf.probs) p /= total;
  } else {
    std::fill(pdf.probs.begin(), pdf.probs.end(), 1.0 / static_cast<double>(pdf.probs.size()));
  }
  pdf.cumulative.resize(pdf.probs.size());
  std::partial_sum(pdf.probs.begin(), pdf.probs.end(), pdf.cumulative.begin());
  pdf.build_guide();
  return pdf;
}

void EdgePdf::build_guide() {
  const std::size_t g = cumulative.size();
  guide.assign(g, 0);
  const double total = cumulative.empty() ? 0.0 : cumulative.back();
  std::size_t i = 0;
  for (std::size_t j = 0; j < g; ++j) {
    // Largest key mapped to bucket j is below (j+1)/g; smallest is j/g.
    const double lo = static_cast<double>(j) / static_cast<double>(g) * total;
    while (i + 1 < g && cumulative[i] <= lo) ++i;
    guide[j] = static_cast<std::uint32_t>(i);
  }
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImageField& pred, const ImageField& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.channels != gt.channels) {
    throw ImageError("psnr: dimension mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    sum += d * d;
  }
  return psnr_from_mse(sum / static_cast<double>(pred.data.size()));
}

}  // namespace softmine
