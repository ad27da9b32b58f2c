#include "cem/image.hpp"

#include <algorithm>
#include <string>

#include "cem/error.hpp"

namespace cem {
namespace {

std::size_t checked_size(int height, int width, int channels) {
  if (height <= 0 || width <= 0)
    throw DimensionError("image dimensions must be positive, got " +
                         std::to_string(height) + "x" + std::to_string(width));
  if (channels != 1 && channels != 3)
    throw DimensionError("channel count must be 1 or 3, got " +
                         std::to_string(channels));
  return static_cast<std::size_t>(height) * width * channels;
}

}  // namespace

ImageBuffer::ImageBuffer(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels),
      data_(checked_size(height, width, channels), std::clamp(fill, 0.0f, 1.0f)) {}

ImageBuffer::ImageBuffer(int height, int width, int channels,
                         std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (data_.size() != checked_size(height, width, channels))
    throw DimensionError("sample count " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(height) + "x" +
                         std::to_string(width) + "x" + std::to_string(channels));
  clamp();
}

void ImageBuffer::clamp() {
  for (float& v : data_) {
    // NaN maps to 0 so downstream metrics stay finite.
    v = v > 0.0f ? (v < 1.0f ? v : 1.0f) : 0.0f;
  }
}

ImageBuffer mirror_horizontal(const ImageBuffer& image) {
  ImageBuffer out(image.height(), image.width(), image.channels());
  const int w = image.width();
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < image.channels(); ++c)
        out.at(y, w - 1 - x, c) = image.at(y, x, c);
  return out;
}

ImageBuffer to_rgb(const ImageBuffer& image) {
  if (image.channels() == 3) return image;
  ImageBuffer out(image.height(), image.width(), 3);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x);
  return out;
}

ImageBuffer to_gray(const ImageBuffer& image) {
  if (image.channels() == 1) return image;
  ImageBuffer out(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      out.at(y, x) = static_cast<float>(0.299 * image.at(y, x, 0) +
                                        0.587 * image.at(y, x, 1) +
                                        0.114 * image.at(y, x, 2));
  return out;
}

}  // namespace cem
