#include "cem/geometry.hpp"

#include <algorithm>
#include <string>

#include "cem/error.hpp"

namespace cem {
namespace {

std::string describe(const RoiRect& r) {
  return "(" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
         std::to_string(r.w) + "," + std::to_string(r.h) + ")";
}

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

}  // namespace

void check_inside(const RoiRect& rect, int height, int width) {
  if (rect.w <= 0 || rect.h <= 0)
    throw DimensionError("rectangle " + describe(rect) + " is empty");
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > width ||
      rect.y + rect.h > height)
    throw DimensionError("rectangle " + describe(rect) + " exceeds " +
                         std::to_string(width) + "x" + std::to_string(height) +
                         " bounds");
}

bool overlaps(const RoiRect& a, const RoiRect& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h &&
         b.y < a.y + a.h;
}

int chebyshev_gap(const RoiRect& a, const RoiRect& b) {
  // Gap between pixel index ranges [a.x, a.x + a.w) and [b.x, b.x + b.w).
  auto axis_gap = [](int a0, int alen, int b0, int blen) {
    if (a0 + alen <= b0) return b0 - (a0 + alen - 1);
    if (b0 + blen <= a0) return a0 - (b0 + blen - 1);
    return 0;
  };
  return std::max(axis_gap(a.x, a.w, b.x, b.w), axis_gap(a.y, a.h, b.y, b.h));
}

RoiRect PatchGrid::cell(int index) const {
  return {(index % cols) * patch_size, (index / cols) * patch_size, patch_size,
          patch_size};
}

PatchGrid build_patch_grid(int input_height, int input_width, int patch_size) {
  if (patch_size < 1)
    throw InvalidArgument("patch size must be positive");
  if (input_height <= 0 || input_width <= 0)
    throw DimensionError("image dimensions must be positive");
  if (input_height % patch_size != 0 || input_width % patch_size != 0)
    throw DimensionError("image size " + std::to_string(input_width) + "x" +
                         std::to_string(input_height) +
                         " is not divisible by patch size " +
                         std::to_string(patch_size) +
                         " (use --crop-to-multiple)");
  return {patch_size, input_height / patch_size, input_width / patch_size};
}

RoiFootprint roi_input_footprint(const RoiRect& roi, int scale,
                                 const PatchGrid& grid) {
  if (scale < 1) throw InvalidArgument("scale must be >= 1");
  check_inside(roi, grid.rows * grid.patch_size * scale,
               grid.cols * grid.patch_size * scale);

  RoiFootprint fp;
  const int x0 = floor_div(roi.x, scale);
  const int y0 = floor_div(roi.y, scale);
  fp.input_rect = {x0, y0, ceil_div(roi.x + roi.w, scale) - x0,
                   ceil_div(roi.y + roi.h, scale) - y0};
  fp.is_inside.assign(grid.count(), 0);
  for (int i = 0; i < grid.count(); ++i) {
    if (overlaps(grid.cell(i), fp.input_rect)) {
      fp.is_inside[i] = 1;
      fp.inside.push_back(i);
    }
  }
  return fp;
}

}  // namespace cem
