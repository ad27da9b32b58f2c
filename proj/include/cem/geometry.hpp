#pragma once

#include <vector>

namespace cem {

/// Axis-aligned rectangle in pixel coordinates. (x, y) is the top-left.
struct RoiRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const RoiRect&) const = default;
};

/// Throws DimensionError unless the rectangle is non-empty and lies fully
/// inside a height x width image.
void check_inside(const RoiRect& rect, int height, int width);

bool overlaps(const RoiRect& a, const RoiRect& b);

/// Square-patch tiling of an input image. Patch i sits at
/// (row, col) = (i / cols, i % cols).
struct PatchGrid {
  int patch_size = 8;
  int rows = 0;
  int cols = 0;

  int count() const { return rows * cols; }
  int index(int row, int col) const { return row * cols + col; }
  RoiRect cell(int index) const;

  bool operator==(const PatchGrid&) const = default;
};

/// Rejects dimensions that are not multiples of `patch_size`.
PatchGrid build_patch_grid(int input_height, int input_width, int patch_size);

/// ROI projected into input coordinates plus the grid cells it touches.
struct RoiFootprint {
  RoiRect input_rect;
  std::vector<int> inside;      // sorted patch indices
  std::vector<char> is_inside;  // size grid.count()

  int outside_count() const {
    return static_cast<int>(is_inside.size() - inside.size());
  }
};

/// `roi` is in output coordinates of a model with upscaling factor `scale`.
/// A patch is inside when its footprint overlaps the projected rect by at
/// least one pixel.
RoiFootprint roi_input_footprint(const RoiRect& roi, int scale,
                                 const PatchGrid& grid);

/// Chebyshev distance in pixels between two rectangles (0 if they touch or
/// overlap; adjacent pixels are at distance 1).
int chebyshev_gap(const RoiRect& a, const RoiRect& b);

}  // namespace cem
