#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <doctest.h>

#include "cem/error.hpp"
#include "cem/geometry.hpp"
#include "cem/image.hpp"
#include "cem/imaging.hpp"
#include "cem/random.hpp"
#include "support.hpp"

using namespace cem;
using cem::test::random_image;
using cem::test::TempDir;

namespace {

// Encodes an 8-bit PNG with libpng directly so decoding is checked against an
// encoder that does not go through write_image.
void write_raw_png(const std::filesystem::path& path, int w, int h, int color,
                   const std::vector<unsigned char>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int ch = png_get_channels(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<unsigned char*>(bytes.data()) + std::size_t(y) * w * ch);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

ImageBuffer constant(int h, int w, int c, float v) { return ImageBuffer(h, w, c, v); }

}  // namespace

TEST_CASE("image buffer construction validates and clamps") {
  ImageBuffer img(2, 3, 3, std::vector<float>{-1.0f, 0.5f, 2.0f, 0, 0, 0, 0, 0, 0,
                                              0, 0, 0, 0, 0, 0, 0, 0, NAN});
  CHECK(img.size() == 18u);
  CHECK(img.at(0, 0, 0) == 0.0f);
  CHECK(img.at(0, 0, 1) == 0.5f);
  CHECK(img.at(0, 0, 2) == 1.0f);
  CHECK(img.at(1, 2, 2) == 0.0f);
  CHECK_THROWS_AS(ImageBuffer(2, 2, 3, std::vector<float>(11)), DimensionError);
  CHECK_THROWS_AS(ImageBuffer(0, 2, 3), DimensionError);
  CHECK_THROWS_AS(ImageBuffer(2, 2, 2), DimensionError);
  const ImageBuffer r = random_image(9, 7, 3, 1);
  for (float v : r.data()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("png decoding maps bytes to [0,1]") {
  TempDir dir;
  write_raw_png(dir / "white.png", 1, 1, PNG_COLOR_TYPE_RGB, {255, 255, 255});
  write_raw_png(dir / "black.png", 1, 1, PNG_COLOR_TYPE_RGB, {0, 0, 0});
  write_raw_png(dir / "gray.png", 2, 2, PNG_COLOR_TYPE_GRAY, {0, 85, 170, 255});

  const ImageBuffer white = read_image(dir / "white.png");
  CHECK(white == ImageBuffer(1, 1, 3, std::vector<float>{1, 1, 1}));
  const ImageBuffer black = read_image(dir / "black.png");
  CHECK(black == ImageBuffer(1, 1, 3, std::vector<float>{0, 0, 0}));

  const ImageBuffer gray = read_image(dir / "gray.png");
  REQUIRE(gray.channels() == 1);
  const double expect[] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(gray.data()[i] - expect[i]) < 1e-3);
}

TEST_CASE("png write/read round trip") {
  TempDir dir;
  write_image(ImageBuffer(1, 1, 3, 1.0f), dir / "one.png");
  CHECK(read_image(dir / "one.png") == ImageBuffer(1, 1, 3, 1.0f));
  write_image(ImageBuffer(1, 1, 3, 0.5f), dir / "half.png");
  const ImageBuffer half = read_image(dir / "half.png");
  for (float v : half.data()) CHECK(std::fabs(v - 0.5f) <= 1.0f / 255);

  const ImageBuffer img = random_image(13, 17, 3, 4);
  write_image(img, dir / "rand.png");
  const ImageBuffer back = read_image(dir / "rand.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(std::fabs(back.data()[i] - img.data()[i]) <= 0.5f / 255 + 1e-6f);
}

TEST_CASE("png errors") {
  TempDir dir;
  std::ofstream(dir / "blocker") << "a regular file";
  CHECK_THROWS_AS(write_image(ImageBuffer(1, 1, 3), dir / "blocker" / "x.png"), IoError);
  CHECK_THROWS_AS(read_image(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png at all";
  CHECK_THROWS_AS(read_image(dir / "junk.png"), IoError);
}

TEST_CASE("psnr closed forms") {
  const ImageBuffer a = random_image(8, 8, 3, 2);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(constant(4, 4, 3, 0), constant(4, 4, 3, 1)) == doctest::Approx(0.0));

  const ImageBuffer base = random_image(16, 16, 3, 3, 0.1f, 0.8f);
  ImageBuffer shifted = base;
  for (float& v : shifted.mutable_data()) v += 1.0f / 255;
  // Float rounding of the shift perturbs the MSE at the 1e-7 level.
  const double expected = 20.0 * std::log10(255.0);
  CHECK(std::fabs(psnr(base, shifted) - expected) < 1e-3);
  CHECK(std::fabs(expected - 48.131) < 1e-3);
}

TEST_CASE("psnr symmetry and halving rule") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ImageBuffer a = random_image(12, 10, 3, s);
    const ImageBuffer b = random_image(12, 10, 3, s + 100);
    const RoiRect r{1, 2, 7, 5};
    CHECK(psnr(a, b, r) == psnr(b, a, r));
  }
  const ImageBuffer zero = constant(6, 6, 1, 0.0f);
  const double e1 = psnr(zero, constant(6, 6, 1, 0.25f));
  const double e2 = psnr(zero, constant(6, 6, 1, 0.125f));
  CHECK(e2 - e1 == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(e2 > e1);
}

TEST_CASE("psnr region and luma mode") {
  ImageBuffer a = constant(4, 4, 3, 0.5f);
  ImageBuffer b = a;
  b.at(3, 3, 0) = 0.0f;
  CHECK(psnr(a, b, RoiRect{0, 0, 2, 2}) == kPsnrCap);
  CHECK(psnr(a, b, RoiRect{3, 3, 1, 1}) ==
        doctest::Approx(-10.0 * std::log10(0.25 / 3.0)));
  // luma of a red-only error of 0.5: 0.299 * 0.5
  CHECK(psnr(a, b, RoiRect{3, 3, 1, 1}, ChannelMode::luma) ==
        doctest::Approx(-10.0 * std::log10(std::pow(0.299 * 0.5, 2))));
  CHECK_THROWS_AS(psnr(a, constant(4, 5, 3, 0.0f)), DimensionError);
  CHECK_THROWS_AS(psnr(a, b, RoiRect{3, 3, 2, 2}), DimensionError);
}

TEST_CASE("crop and paste") {
  const ImageBuffer img = random_image(10, 12, 3, 7);
  CHECK(crop_region(img, {0, 0, 12, 10}) == img);
  const ImageBuffer px = crop_region(img, {0, 0, 1, 1});
  for (int c = 0; c < 3; ++c) CHECK(px.at(0, 0, c) == img.at(0, 0, c));

  const RoiRect r{3, 2, 4, 5};
  CHECK(paste_patch(img, r, crop_region(img, r)) == img);

  const ImageBuffer zeros(5, 4, 3, 0.0f);
  const ImageBuffer pasted = paste_patch(img, r, zeros);
  int differ = 0;
  for (std::size_t i = 0; i < img.size(); ++i) differ += pasted.data()[i] != img.data()[i];
  CHECK(differ == 5 * 4 * 3);
  CHECK(crop_region(pasted, r) == zeros);

  const RoiRect r2{8, 6, 3, 3};
  const ImageBuffer p1 = random_image(5, 4, 3, 8);
  const ImageBuffer p2 = random_image(3, 3, 3, 9);
  CHECK(paste_patch(paste_patch(img, r, p1), r2, p2) ==
        paste_patch(paste_patch(img, r2, p2), r, p1));

  CHECK_THROWS_AS(crop_region(img, {10, 0, 3, 3}), DimensionError);
  CHECK_THROWS_AS(paste_patch(img, r, p2), DimensionError);
}

TEST_CASE("gradient magnitude") {
  CHECK(gradient_magnitude(constant(8, 8, 3, 0.3f)) == 0.0);
  const ImageBuffer two(2, 2, 1, std::vector<float>{0, 1, 0, 1});
  CHECK(gradient_magnitude(two) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  const ImageBuffer p = random_image(8, 8, 3, 11, 0.0f, 0.5f);
  ImageBuffer scaled = p;
  for (float& v : scaled.mutable_data()) v *= 2.0f;
  CHECK(gradient_magnitude(scaled) == doctest::Approx(2.0 * gradient_magnitude(p)));

  // Offsets that are exact in float keep the differences exact.
  ImageBuffer shifted = p;
  for (float& v : shifted.mutable_data()) v += 0.25f;
  CHECK(gradient_magnitude(shifted) == doctest::Approx(gradient_magnitude(p)).epsilon(1e-6));
}

TEST_CASE("patch grid") {
  const PatchGrid g = build_patch_grid(256, 256, 8);
  CHECK(g.rows == 32);
  CHECK(g.cols == 32);
  CHECK(g.count() == 1024);
  CHECK(build_patch_grid(64, 64, 8).count() == 64);
  CHECK_THROWS_AS(build_patch_grid(250, 256, 8), DimensionError);
  CHECK(g.cell(33) == RoiRect{8, 8, 8, 8});
  CHECK(g.index(1, 1) == 33);
}

TEST_CASE("roi footprint") {
  const PatchGrid g = build_patch_grid(64, 64, 8);
  const RoiFootprint a = roi_input_footprint({64, 64, 32, 32}, 4, g);
  CHECK(a.input_rect == RoiRect{16, 16, 8, 8});
  CHECK(a.inside == std::vector<int>{g.index(2, 2)});

  const RoiFootprint b = roi_input_footprint({0, 0, 8, 8}, 1, g);
  CHECK(b.inside == std::vector<int>{0});

  const RoiFootprint c = roi_input_footprint({62, 62, 4, 4}, 4, g);
  CHECK(c.input_rect == RoiRect{15, 15, 2, 2});
  // Input pixels 15 and 16 straddle the boundary between cells 1 and 2.
  CHECK(c.inside == std::vector<int>{g.index(1, 1), g.index(1, 2), g.index(2, 1), g.index(2, 2)});
  CHECK(c.outside_count() == 60);

  CHECK_THROWS_AS(roi_input_footprint({60, 60, 8, 8}, 1, g), DimensionError);
}

TEST_CASE("aligned roi footprint tiles exactly") {
  const PatchGrid g = build_patch_grid(64, 48, 8);
  for (int y0 = 0; y0 < 8; y0 += 2)
    for (int x0 = 0; x0 < 6; x0 += 3)
      for (int h = 1; y0 + h <= 8; h += 3)
        for (int w = 1; x0 + w <= 6; w += 2) {
          const RoiFootprint f = roi_input_footprint({x0 * 8, y0 * 8, w * 8, h * 8}, 1, g);
          std::vector<int> expect;
          for (int r = y0; r < y0 + h; ++r)
            for (int c = x0; c < x0 + w; ++c) expect.push_back(g.index(r, c));
          CHECK(f.inside == expect);
        }
}

TEST_CASE("chebyshev gap") {
  CHECK(chebyshev_gap({0, 0, 8, 8}, {8, 0, 8, 8}) == 1);
  CHECK(chebyshev_gap({0, 0, 8, 8}, {4, 4, 8, 8}) == 0);
  CHECK(chebyshev_gap({0, 0, 8, 8}, {20, 10, 8, 8}) == 13);
}

TEST_CASE("bicubic constant and shape") {
  const ImageBuffer c = constant(256, 256, 3, 0.37f);
  const ImageBuffer small = resize_bicubic(c, 64, 64);
  CHECK(small.height() == 64);
  CHECK(small.width() == 64);
  for (float v : small.data()) CHECK(std::fabs(v - 0.37f) < 1e-6);
}

namespace {

// Brute-force one-dimensional reference: antialiased Keys kernel sampled at
// every input pixel with symmetric (edge-repeating) padding, weights
// normalised. Written independently of the library's tap tables.
double keys(double x) {
  x = std::fabs(x);
  if (x <= 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
  if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
  return 0;
}

std::vector<double> reference_downsample(const std::vector<double>& in, int factor) {
  const int n = int(in.size());
  std::vector<double> out(n / factor);
  for (int o = 0; o < int(out.size()); ++o) {
    const double centre = (o + 0.5) * factor - 0.5;
    double acc = 0, wsum = 0;
    for (int k = -4 * factor; k < n + 4 * factor; ++k) {
      const double w = keys((k - centre) / factor);
      if (w == 0) continue;
      int j = k;
      if (j < 0) j = -j - 1;
      if (j >= n) j = 2 * n - 1 - j;
      acc += w * in[j];
      wsum += w;
    }
    out[o] = acc / wsum;
  }
  return out;
}

}  // namespace

TEST_CASE("bicubic ramp matches the analytic kernel evaluation") {
  const int W = 256;
  ImageBuffer ramp(4, W, 1);
  std::vector<double> row(W);
  for (int x = 0; x < W; ++x) row[x] = double(x) / (W - 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < W; ++x) ramp.at(y, x) = float(row[x]);
  const ImageBuffer out = resize_bicubic(ramp, 1, W / 4);
  const auto ref = reference_downsample(row, 4);
  for (int x = 0; x < W / 4; ++x) CHECK(std::fabs(out.at(0, x) - ref[x]) < 1e-3);
  CHECK(std::fabs(out.at(0, 0) - ref.front()) < 1e-3);
  CHECK(std::fabs(out.at(0, W / 4 - 1) - ref.back()) < 1e-3);
  // A symmetric kernel reproduces linear functions away from the border.
  for (int x = 2; x < W / 4 - 2; ++x)
    CHECK(std::fabs(out.at(0, x) - (4 * x + 1.5) / (W - 1)) < 1e-6);
}

TEST_CASE("bicubic commutes with mirroring") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ImageBuffer img = random_image(32, 48, 3, s);
    CHECK(resize_bicubic(mirror_horizontal(img), 8, 12) ==
          mirror_horizontal(resize_bicubic(img, 8, 12)));
  }
}

TEST_CASE("crop to multiple") {
  const ImageBuffer img = random_image(61, 70, 3, 5);
  const ImageBuffer c = crop_to_multiple(img, 8);
  CHECK(c.height() == 56);
  CHECK(c.width() == 64);
  CHECK(c == crop_region(img, {0, 0, 64, 56}));
  CHECK_THROWS(crop_to_multiple(random_image(5, 5, 3, 1), 8));
}

TEST_CASE("color conversions") {
  const ImageBuffer g(2, 2, 1, 0.5f);
  const ImageBuffer rgb = to_rgb(g);
  CHECK(rgb.channels() == 3);
  for (float v : rgb.data()) CHECK(v == 0.5f);
  const ImageBuffer px(1, 1, 3, std::vector<float>{1.0f, 0.0f, 0.0f});
  CHECK(to_gray(px).at(0, 0) == doctest::Approx(0.299));
}

TEST_CASE("philox known answers") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("counter rng streams") {
  CounterRng a(7, Stage::full, 3, 4), b(7, Stage::full, 3, 4);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u32() == b.next_u32());
  CounterRng c(7, Stage::full, 3, 5), d(7, Stage::coarse, 3, 4), e(8, Stage::full, 3, 4);
  CounterRng f(7, Stage::full, 3, 4);
  const auto first = f.next_u64();
  CHECK(first != c.next_u64());
  CHECK(first != d.next_u64());
  CHECK(first != e.next_u64());

  CounterRng u(1, Stage::testing);
  double sum = 0;
  int hist[10] = {};
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = u.uniform();
    CHECK_FALSE((x < 0.0 || x >= 1.0));
    sum += x;
    ++hist[u.below(10)];
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  for (int h : hist) CHECK(std::abs(h - n / 10) < 5 * std::sqrt(n * 0.09));

  CounterRng g(2, Stage::testing);
  double m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = g.normal();
    m += x;
    m2 += x * x;
  }
  m /= n;
  CHECK(std::fabs(m) < 0.02);
  CHECK(std::sqrt(m2 / n - m * m) == doctest::Approx(1.0).epsilon(0.01));

  CounterRng p(3, Stage::testing);
  double pm = 0;
  for (int i = 0; i < 20000; ++i) pm += double(p.poisson(52.4288));
  CHECK(pm / 20000 == doctest::Approx(52.4288).epsilon(0.01));
}
