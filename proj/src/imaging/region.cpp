#include <algorithm>
#include <string>

#include "cem/error.hpp"
#include "cem/imaging.hpp"

namespace cem {

ImageBuffer crop_region(const ImageBuffer& image, const RoiRect& rect) {
  check_inside(rect, image.height(), image.width());
  ImageBuffer out(rect.h, rect.w, image.channels());
  const auto src = image.data();
  auto dst = out.mutable_data();
  const std::size_t row_len = static_cast<std::size_t>(rect.w) * image.channels();
  for (int y = 0; y < rect.h; ++y) {
    const auto from = src.begin() + image.index(rect.y + y, rect.x);
    std::copy(from, from + row_len, dst.begin() + y * row_len);
  }
  return out;
}

void paste_patch_into(ImageBuffer& image, const RoiRect& rect,
                      const ImageBuffer& patch) {
  check_inside(rect, image.height(), image.width());
  if (patch.height() != rect.h || patch.width() != rect.w ||
      patch.channels() != image.channels())
    throw DimensionError("paste_patch: patch is " +
                         std::to_string(patch.height()) + "x" +
                         std::to_string(patch.width()) + "x" +
                         std::to_string(patch.channels()) + ", target cell is " +
                         std::to_string(rect.h) + "x" + std::to_string(rect.w) +
                         "x" + std::to_string(image.channels()));
  const auto src = patch.data();
  auto dst = image.mutable_data();
  const std::size_t row_len = static_cast<std::size_t>(rect.w) * image.channels();
  for (int y = 0; y < rect.h; ++y) {
    const auto from = src.begin() + y * row_len;
    std::copy(from, from + row_len, dst.begin() + image.index(rect.y + y, rect.x));
  }
}

ImageBuffer paste_patch(const ImageBuffer& image, const RoiRect& rect,
                        const ImageBuffer& patch) {
  ImageBuffer out = image;
  paste_patch_into(out, rect, patch);
  return out;
}

ImageBuffer crop_to_multiple(const ImageBuffer& image, int multiple) {
  if (multiple < 1) throw InvalidArgument("crop multiple must be positive");
  const int h = image.height() / multiple * multiple;
  const int w = image.width() / multiple * multiple;
  if (h == 0 || w == 0)
    throw DimensionError("image smaller than crop multiple " +
                         std::to_string(multiple));
  if (h == image.height() && w == image.width()) return image;
  return crop_region(image, {0, 0, w, h});
}

}  // namespace cem
