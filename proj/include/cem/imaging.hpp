#pragma once

#include <filesystem>

#include "cem/geometry.hpp"
#include "cem/image.hpp"

namespace cem {

enum class ChannelMode { rgb, luma };

/// Zero-MSE regions return this value instead of +inf.
inline constexpr double kPsnrCap = 100.0;

/// PSNR with peak 1.0 over `region` of two same-shaped images. In rgb mode
/// the MSE is averaged over all channels; in luma mode over the BT.601 luma
/// of three-channel images (single-channel images are used as-is).
double psnr(const ImageBuffer& a, const ImageBuffer& b, const RoiRect& region,
            ChannelMode mode = ChannelMode::rgb);

/// PSNR over the whole image.
double psnr(const ImageBuffer& a, const ImageBuffer& b,
            ChannelMode mode = ChannelMode::rgb);

/// PSNR from a mean squared error, honouring the zero-MSE cap.
double psnr_from_mse(double mse);

ImageBuffer crop_region(const ImageBuffer& image, const RoiRect& rect);

/// Returns a copy of `image` with `rect` replaced by `patch`.
ImageBuffer paste_patch(const ImageBuffer& image, const RoiRect& rect,
                        const ImageBuffer& patch);

/// In-place variant used by hot loops.
void paste_patch_into(ImageBuffer& image, const RoiRect& rect,
                      const ImageBuffer& patch);

/// sqrt of the summed squared horizontal and vertical neighbour differences,
/// over all channels.
double gradient_magnitude(const ImageBuffer& patch);

/// Separable bicubic resize (Keys kernel, a = -0.5) with symmetric border
/// reflection. When shrinking with `antialias`, the kernel support is
/// widened by the shrink factor.
ImageBuffer resize_bicubic(const ImageBuffer& image, int out_height,
                           int out_width, bool antialias = true);

/// Crops the top-left so both dimensions are multiples of `multiple`.
ImageBuffer crop_to_multiple(const ImageBuffer& image, int multiple);

ImageBuffer read_image(const std::filesystem::path& path);
void write_image(const ImageBuffer& image, const std::filesystem::path& path);

}  // namespace cem
