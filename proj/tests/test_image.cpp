#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "softmine/image.hpp"
#include "support.hpp"

using namespace softmine;
using testsupport::TempDir;

namespace {

void write_gray(const std::filesystem::path& p, int w, int h, std::vector<std::uint8_t> bytes) {
  detail::write_png(p, {w, h, 1, std::move(bytes)});
}

}  // namespace

TEST_CASE("load_image scales bytes by 1/255") {
  TempDir dir("img");
  write_gray(dir / "one.png", 1, 1, {255});
  ImageField a = load_image(dir / "one.png");
  CHECK(a.width == 1);
  CHECK(a.channels == 1);
  CHECK(a.data == std::vector<double>{1.0});

  write_gray(dir / "two.png", 1, 2, {0, 128});
  ImageField b = load_image(dir / "two.png");
  CHECK(b.height == 2);
  CHECK(b.data[0] == 0.0);
  CHECK(b.data[1] == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
}

TEST_CASE("load_image keeps rgb order") {
  TempDir dir("img");
  detail::write_png(dir / "rgb.png", {2, 1, 3, {10, 20, 30, 40, 50, 60}});
  ImageField img = load_image(dir / "rgb.png");
  REQUIRE(img.channels == 3);
  CHECK(img.at(1, 0, 2) == doctest::Approx(60.0 / 255.0));
  CHECK(img.at(0, 0, 1) == doctest::Approx(20.0 / 255.0));
}

TEST_CASE("load_image rejects four channels and missing files") {
  TempDir dir("img");
  detail::write_png(dir / "rgba.png", {1, 1, 4, {1, 2, 3, 4}});
  try {
    load_image(dir / "rgba.png");
    FAIL("expected an error");
  } catch (const ImageError& e) {
    CHECK(std::string(e.what()).find("unsupported channels") != std::string::npos);
  }
  CHECK_THROWS_AS(load_image(dir / "nope.png"), ImageError);

  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(load_image(dir / "junk.png"), ImageError);
}

TEST_CASE("save then load round trips quantized values") {
  TempDir dir("img");
  ImageField img = testsupport::random_image(5, 3, 3, 7);
  save_image(dir / "x.png", img);
  ImageField back = load_image(dir / "x.png");
  REQUIRE(back.data.size() == img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("to_byte clamps and rounds half up") {
  CHECK(to_byte(1.2) == 255);
  CHECK(to_byte(0.5) == 128);
  CHECK(to_byte(-0.3) == 0);
  CHECK(to_byte(1.0) == 255);
}

TEST_CASE("heatmap ramp endpoints") {
  CHECK(heatmap_color(0.0) == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK(heatmap_color(1.0) == std::array<std::uint8_t, 3>{255, 0, 0});

  TempDir dir("img");
  std::vector<double> err{0.0, 0.25, 0.5};
  save_heatmap(dir / "h.png", 3, 1, err);
  auto r = detail::read_png(dir / "h.png");
  REQUIRE(r.channels == 3);
  CHECK(r.bytes[0] == 0);
  CHECK(r.bytes[2] == 255);
  CHECK(r.bytes[6] == 255);
  CHECK(r.bytes[8] == 0);
}

TEST_CASE("bilinear reproduces pixel centers") {
  ImageField img = testsupport::random_image(7, 5, 3, 3);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const auto c = sample_bilinear(img, img.pixel_center(i));
    for (int k = 0; k < 3; ++k) CHECK(c[k] == doctest::Approx(img.pixel(i)[k]).epsilon(1e-14));
  }
}

TEST_CASE("bilinear on a 2x1 image") {
  ImageField img(2, 1, 1, {0.0, 1.0});
  CHECK(sample_bilinear(img, {0.5, 0.5})[0] == doctest::Approx(0.5));
  CHECK(sample_bilinear(img, {0.0, 0.5})[0] == 0.0);
  CHECK(sample_bilinear(img, {1.0, 0.0})[0] == 1.0);
  CHECK_THROWS_AS(sample_bilinear(img, {1.01, 0.5}), std::out_of_range);
  CHECK_THROWS_AS(sample_bilinear(img, {0.5, std::nan("")}), std::out_of_range);
}

TEST_CASE("bilinear gradient at the 2x1 midpoint matches finite differences") {
  ImageField img(2, 1, 1, {0.0, 1.0});
  std::array<double, 1> c{};
  std::array<double, 2> g{};
  sample_bilinear_grad(img, {0.5, 0.5}, c, g);
  const double h = 1e-5;
  const double fd = (sample_bilinear(img, {0.5 + h, 0.5})[0] - sample_bilinear(img, {0.5 - h, 0.5})[0]) / (2 * h);
  CHECK(g[0] == doctest::Approx(fd).epsilon(1e-9));
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == 0.0);
}

TEST_CASE("bilinear gradient vanishes on a constant image and in clamped borders") {
  ImageField flat(4, 4, 3);
  std::fill(flat.data.begin(), flat.data.end(), 0.4);
  std::array<double, 3> c{};
  std::array<double, 6> g{};
  sample_bilinear_grad(flat, {0.37, 0.81}, c, g);
  for (double x : g) CHECK(x == 0.0);

  ImageField img = testsupport::random_image(4, 4, 1, 11);
  std::array<double, 1> c1{};
  std::array<double, 2> g1{};
  sample_bilinear_grad(img, {0.05, 0.5}, c1, g1);  // left of the first center
  CHECK(g1[0] == 0.0);
}

TEST_CASE("bilinear gradient matches central differences at random interior points") {
  ImageField img = testsupport::random_image(9, 6, 3, 5);
  std::mt19937 gen(1);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  const double h = 1e-5;
  int checked = 0;
  while (checked < 1000) {
    const Coord x{d(gen), d(gen)};
    // keep away from cell boundaries (pixel-center lines) and clamp zones
    const double pu = x.u * img.width - 0.5, pv = x.v * img.height - 0.5;
    auto near_line = [&](double p, int n) {
      if (p < 2 * h * n || p > n - 1 - 2 * h * n) return true;
      return std::abs(p - std::round(p)) < 2 * h * n;
    };
    if (near_line(pu, img.width) || near_line(pv, img.height)) continue;
    std::array<double, 3> c{};
    std::array<double, 6> g{};
    sample_bilinear_grad(img, x, c, g);
    const auto up = sample_bilinear(img, {x.u + h, x.v}), um = sample_bilinear(img, {x.u - h, x.v});
    const auto vp = sample_bilinear(img, {x.u, x.v + h}), vm = sample_bilinear(img, {x.u, x.v - h});
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(g[k * 2] - (up[k] - um[k]) / (2 * h)) < 1e-4);
      CHECK(std::abs(g[k * 2 + 1] - (vp[k] - vm[k]) / (2 * h)) < 1e-4);
    }
    ++checked;
  }
}

TEST_CASE("sobel pdf on a constant image is uniform") {
  ImageField img(5, 4, 1);
  std::fill(img.data.begin(), img.data.end(), 0.3);
  EdgePdf pdf = sobel_edge_pdf(img);
  for (double p : pdf.probs) CHECK(p == doctest::Approx(1.0 / 20.0));
  CHECK(pdf.cumulative.back() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sobel on a 6x6 vertical step, convolved by hand") {
  ImageField img(6, 6, 1);
  for (int y = 0; y < 6; ++y)
    for (int x = 3; x < 6; ++x) img.at(x, y, 0) = 1.0;
  // Hand convolution with replicate padding: columns 2 and 3 see
  // Gx = (1+2+1)·(1−0) = 4, Gy = 0; all other columns see a flat window.
  std::vector<double> expected(36, 0.0);
  for (int y = 0; y < 6; ++y) {
    expected[y * 6 + 2] = 4.0;
    expected[y * 6 + 3] = 4.0;
  }
  const auto mag = sobel_magnitude(img);
  for (int i = 0; i < 36; ++i) CHECK(mag[i] == doctest::Approx(expected[i]));
  EdgePdf pdf = sobel_edge_pdf(img);
  for (int i = 0; i < 36; ++i) CHECK(pdf.probs[i] == doctest::Approx(expected[i] / 48.0));
}

TEST_CASE("sobel uses Rec. 601 luminance for rgb") {
  ImageField rgb(6, 6, 3), gray(6, 6, 1);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const double r = (x * 7 + y * 3) % 5 / 4.0, g = (x + 2 * y) % 3 / 2.0, b = (x * y) % 4 / 3.0;
      rgb.at(x, y, 0) = r;
      rgb.at(x, y, 1) = g;
      rgb.at(x, y, 2) = b;
      gray.at(x, y, 0) = 0.299 * r + 0.587 * g + 0.114 * b;
    }
  const auto a = sobel_magnitude(rgb), b = sobel_magnitude(gray);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("edge pdf normalization holds for random images") {
  for (unsigned s = 0; s < 5; ++s) {
    EdgePdf pdf = sobel_edge_pdf(testsupport::random_image(13, 8, 3, s));
    double sum = 0.0;
    for (double p : pdf.probs) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(std::abs(pdf.cumulative.back() - 1.0) < 1e-9);
    CHECK(std::is_sorted(pdf.cumulative.begin(), pdf.cumulative.end()));
  }
}

TEST_CASE("edge pdf inverse cdf lands on positive-mass pixels") {
  ImageField img(6, 6, 1);
  for (int y = 0; y < 6; ++y)
    for (int x = 3; x < 6; ++x) img.at(x, y, 0) = 1.0;
  EdgePdf pdf = sobel_edge_pdf(img);
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = pdf.sample_index((k + 0.5) / 100.0);
    CHECK(pdf.probs[i] > 0.0);
  }
}

TEST_CASE("guided inverse cdf agrees with a plain search") {
  const ImageField img = testsupport::random_image(23, 17, 3, 9);
  EdgePdf guided = sobel_edge_pdf(img);
  EdgePdf plain = guided;
  plain.guide.clear();
  for (int k = 0; k < 20000; ++k) {
    const double u = (k + 0.37) / 20000.0;
    CHECK(guided.sample_index(u) == plain.sample_index(u));
  }
  for (std::size_t i = 0; i < guided.cumulative.size(); ++i) {
    const double u = guided.cumulative[i] / guided.cumulative.back();
    CHECK(guided.sample_index(std::nextafter(u, 0.0)) == plain.sample_index(std::nextafter(u, 0.0)));
    if (u < 1.0) CHECK(guided.sample_index(u) == plain.sample_index(u));
  }
}

TEST_CASE("psnr closed forms") {
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0));
  CHECK(psnr_from_mse(1.0) == doctest::Approx(0.0));
  ImageField a = testsupport::random_image(4, 4, 3, 2);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);

  ImageField b = a;
  for (double& v : b.data) v = std::clamp(v + 0.1, 0.0, 1.0);
  CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)));
  CHECK_THROWS(psnr(a, ImageField(4, 3, 3)));
}

TEST_CASE("psnr ignores channel order") {
  ImageField a = testsupport::random_image(4, 4, 3, 8), b = testsupport::random_image(4, 4, 3, 9);
  ImageField pa = a, pb = b;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    std::swap(pa.data[i * 3], pa.data[i * 3 + 2]);
    std::swap(pb.data[i * 3], pb.data[i * 3 + 2]);
  }
  CHECK(psnr(a, b) == doctest::Approx(psnr(pa, pb)).epsilon(1e-12));
}

TEST_CASE("image field rejects unsupported shapes") {
  CHECK_THROWS_AS(ImageField(2, 2, 4), ImageError);
  CHECK_THROWS_AS(ImageField(2, 2, 1, std::vector<double>(3)), ImageError);
}
