#include <cmath>
#include <string>

#include "cem/error.hpp"
#include "cem/imaging.hpp"

namespace cem {

double psnr_from_mse(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double psnr(const ImageBuffer& a, const ImageBuffer& b, const RoiRect& region,
            ChannelMode mode) {
  if (!a.same_shape(b))
    throw DimensionError("psnr: image shapes differ (" +
                         std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + "x" +
                         std::to_string(a.channels()) + " vs " +
                         std::to_string(b.height()) + "x" +
                         std::to_string(b.width()) + "x" +
                         std::to_string(b.channels()) + ")");
  check_inside(region, a.height(), a.width());

  const int ch = a.channels();
  double sum = 0.0;
  std::size_t count = 0;
  if (mode == ChannelMode::luma && ch == 3) {
    for (int y = region.y; y < region.y + region.h; ++y) {
      for (int x = region.x; x < region.x + region.w; ++x) {
        const double d = 0.299 * (double(a.at(y, x, 0)) - b.at(y, x, 0)) +
                         0.587 * (double(a.at(y, x, 1)) - b.at(y, x, 1)) +
                         0.114 * (double(a.at(y, x, 2)) - b.at(y, x, 2));
        sum += d * d;
      }
    }
    count = static_cast<std::size_t>(region.w) * region.h;
  } else {
    const auto da = a.data();
    const auto db = b.data();
    for (int y = region.y; y < region.y + region.h; ++y) {
      const std::size_t row = a.index(y, region.x);
      const std::size_t n = static_cast<std::size_t>(region.w) * ch;
      for (std::size_t k = row; k < row + n; ++k) {
        const double d = double(da[k]) - double(db[k]);
        sum += d * d;
      }
    }
    count = static_cast<std::size_t>(region.w) * region.h * ch;
  }
  return psnr_from_mse(sum / static_cast<double>(count));
}

double psnr(const ImageBuffer& a, const ImageBuffer& b, ChannelMode mode) {
  return psnr(a, b, RoiRect{0, 0, a.width(), a.height()}, mode);
}

double gradient_magnitude(const ImageBuffer& patch) {
  if (patch.height() < 2 || patch.width() < 2)
    throw DimensionError("gradient_magnitude needs at least a 2x2 patch");
  const int ch = patch.channels();
  double sum = 0.0;
  for (int y = 0; y < patch.height(); ++y) {
    for (int x = 0; x < patch.width(); ++x) {
      for (int c = 0; c < ch; ++c) {
        const double v = patch.at(y, x, c);
        if (x > 0) {
          const double d = v - patch.at(y, x - 1, c);
          sum += d * d;
        }
        if (y > 0) {
          const double d = v - patch.at(y - 1, x, c);
          sum += d * d;
        }
      }
    }
  }
  return std::sqrt(sum);
}

}  // namespace cem
