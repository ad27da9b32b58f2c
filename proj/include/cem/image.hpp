#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cem {

/// Row-major HWC image with float samples in [0, 1].
///
/// Holds the degraded input, intervened inputs, model outputs and ground
/// truth. Every constructor and mutating helper leaves all samples clamped.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width, int channels, float fill = 0.0f);
  /// Takes ownership of `data`; throws DimensionError if its length is not
  /// height * width * channels. Samples are clamped to [0, 1].
  ImageBuffer(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  /// Raw access. Callers writing through this must keep samples in [0, 1]
  /// or call clamp() afterwards.
  std::span<float> mutable_data() { return data_; }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  float at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }
  float& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }

  bool same_shape(const ImageBuffer& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  void clamp();

  bool operator==(const ImageBuffer&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Horizontal mirror (column x -> width - 1 - x).
ImageBuffer mirror_horizontal(const ImageBuffer& image);

/// Replicates a single-channel image to three channels; other inputs are
/// returned unchanged.
ImageBuffer to_rgb(const ImageBuffer& image);

/// Luma (BT.601, full-range weights) as a single-channel image.
ImageBuffer to_gray(const ImageBuffer& image);

}  // namespace cem
