#include <cmath>
#include <vector>

#include "cem/error.hpp"
#include "cem/imaging.hpp"

namespace cem {
namespace {

// Keys cubic convolution kernel, a = -0.5. Even by construction: only |x|
// enters, so mirrored taps get bit-identical weights.
double cubic(double x) {
  constexpr double a = -0.5;
  const double ax = std::fabs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

int reflect(int i, int n) {
  // Symmetric padding: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

struct Taps {
  std::vector<int> index;
  std::vector<double> weight;
};

// Taps for one output sample. The tap set is symmetric about the sample
// centre, and the normalisation sum pairs taps from the outside in, so the
// mirrored output position receives the same weights in reverse order.
Taps make_taps(int out_index, int in_size, double ratio, bool antialias) {
  const double stretch = (antialias && ratio > 1.0) ? ratio : 1.0;
  const double support = 2.0 * stretch;
  const double centre = (out_index + 0.5) * ratio - 0.5;
  const int first = static_cast<int>(std::ceil(centre - support));
  const int last = static_cast<int>(std::floor(centre + support));

  Taps taps;
  for (int k = first; k <= last; ++k) {
    taps.index.push_back(reflect(k, in_size));
    taps.weight.push_back(cubic((k - centre) / stretch));
  }
  const std::size_t n = taps.weight.size();
  double total = 0.0;
  for (std::size_t i = 0, j = n - 1; i < j; ++i, --j)
    total += taps.weight[i] + taps.weight[j];
  if (n % 2 == 1) total += taps.weight[n / 2];
  for (double& w : taps.weight) w /= total;
  return taps;
}

template <typename Get>
double apply(const Taps& taps, Get&& get) {
  const std::size_t n = taps.weight.size();
  double acc = 0.0;
  for (std::size_t i = 0, j = n - 1; i < j; ++i, --j)
    acc += taps.weight[i] * get(taps.index[i]) + taps.weight[j] * get(taps.index[j]);
  if (n % 2 == 1) acc += taps.weight[n / 2] * get(taps.index[n / 2]);
  return acc;
}

}  // namespace

ImageBuffer resize_bicubic(const ImageBuffer& image, int out_height,
                           int out_width, bool antialias) {
  if (out_height <= 0 || out_width <= 0)
    throw DimensionError("resize target must be positive");
  const int in_h = image.height();
  const int in_w = image.width();
  const int ch = image.channels();

  std::vector<Taps> col_taps(out_width);
  const double ratio_x = static_cast<double>(in_w) / out_width;
  for (int x = 0; x < out_width; ++x)
    col_taps[x] = make_taps(x, in_w, ratio_x, antialias);
  std::vector<Taps> row_taps(out_height);
  const double ratio_y = static_cast<double>(in_h) / out_height;
  for (int y = 0; y < out_height; ++y)
    row_taps[y] = make_taps(y, in_h, ratio_y, antialias);

  // Horizontal pass into a double buffer, then vertical.
  std::vector<double> mid(static_cast<std::size_t>(in_h) * out_width * ch);
  for (int y = 0; y < in_h; ++y)
    for (int x = 0; x < out_width; ++x)
      for (int c = 0; c < ch; ++c)
        mid[(static_cast<std::size_t>(y) * out_width + x) * ch + c] =
            apply(col_taps[x], [&](int k) { return double(image.at(y, k, c)); });

  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width * ch);
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x)
      for (int c = 0; c < ch; ++c)
        out[(static_cast<std::size_t>(y) * out_width + x) * ch + c] =
            static_cast<float>(apply(row_taps[y], [&](int k) {
              return mid[(static_cast<std::size_t>(k) * out_width + x) * ch + c];
            }));
  return ImageBuffer(out_height, out_width, ch, std::move(out));
}

}  // namespace cem
