#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>

#include "cem/error.hpp"
#include "cem/imaging.hpp"
#include "cem/reporting.hpp"

namespace cem {
namespace {

using Rgb = std::array<float, 3>;

constexpr double kMinTint = 0.08;

// Diverging map on [-1, 1]: blue -> white -> red.
Rgb diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  if (v >= 0) return {1.0f, float(1.0 - v), float(1.0 - v)};
  return {float(1.0 + v), float(1.0 + v), 1.0f};
}

// 3x5 glyphs, one row per string, '#' = ink.
struct Glyph {
  char ch;
  const char* rows[5];
};

constexpr Glyph kGlyphs[] = {
    {'0', {"###", "#.#", "#.#", "#.#", "###"}}, {'1', {".#.", "##.", ".#.", ".#.", "###"}},
    {'2', {"###", "..#", "###", "#..", "###"}}, {'3', {"###", "..#", "###", "..#", "###"}},
    {'4', {"#.#", "#.#", "###", "..#", "..#"}}, {'5', {"###", "#..", "###", "..#", "###"}},
    {'6', {"###", "#..", "###", "#.#", "###"}}, {'7', {"###", "..#", "..#", "..#", "..#"}},
    {'8', {"###", "#.#", "###", "#.#", "###"}}, {'9', {"###", "#.#", "###", "..#", "###"}},
    {'.', {"...", "...", "...", "...", ".#."}}, {'-', {"...", "...", "###", "...", "..."}},
    {'+', {"...", ".#.", "###", ".#.", "..."}}, {'e', {"...", "###", "##.", "#..", "###"}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

int text_width(const std::string& s) { return s.empty() ? 0 : int(s.size()) * 4 - 1; }

void draw_text(ImageBuffer& img, int x0, int y0, const std::string& text) {
  for (std::size_t k = 0; k < text.size(); ++k) {
    const Glyph* g = find_glyph(text[k]);
    if (!g) continue;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) {
        const int x = x0 + int(k) * 4 + c;
        const int y = y0 + r;
        if (g->rows[r][c] != '#' || x < 0 || y < 0 || x >= img.width() || y >= img.height())
          continue;
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = 0.0f;
      }
  }
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void blend(ImageBuffer& img, int y, int x, const Rgb& color, float alpha) {
  for (int c = 0; c < 3; ++c)
    img.at(y, x, c) = (1.0f - alpha) * img.at(y, x, c) + alpha * color[c];
}

}  // namespace

ImageBuffer render_heatmap_image(const CausalEffectMap& cem, const ImageBuffer& input,
                                 const HeatmapOptions& options) {
  const int p = cem.grid.patch_size;
  if (input.height() != cem.grid.rows * p || input.width() != cem.grid.cols * p)
    throw DimensionError("heatmap input does not match the CEM grid");
  if (options.display_factor < 1) throw InvalidArgument("display factor must be >= 1");
  const int f = options.display_factor;
  const int h = input.height() * f;
  const int w = input.width() * f;

  double max_abs = 0.0;
  for (double phi : cem.effects)
    if (std::isfinite(phi)) max_abs = std::max(max_abs, std::fabs(phi));

  const ImageBuffer gray = to_gray(input);
  ImageBuffer out(h + kColorbarHeight, w, 3, 1.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = gray.at(y / f, x / f);

  const Rgb green{0.0f, 1.0f, 0.0f};
  const int cell = p * f;
  for (int i = 0; i < cem.grid.count(); ++i) {
    const RoiRect r = cem.grid.cell(i);
    const int y0 = r.y * f, x0 = r.x * f;
    const double phi = cem.effects[i];
    if (std::isinf(phi)) {
      for (int y = y0; y < y0 + cell; ++y)
        for (int x = x0; x < x0 + cell; ++x) {
          const bool edge = y == y0 || x == x0 || y == y0 + cell - 1 || x == x0 + cell - 1;
          blend(out, y, x, green, edge ? 1.0f : 0.35f);
        }
      continue;
    }
    double v = max_abs > 0.0 ? phi / max_abs : 0.0;
    if (v == 0.0) continue;
    // Floor keeps the sign of tiny effects visible after 8-bit quantisation.
    if (std::fabs(v) < kMinTint) v = std::copysign(kMinTint, v);
    const float alpha = options.max_alpha * float(std::fabs(v));
    const Rgb color = diverging(v);
    for (int y = y0; y < y0 + cell; ++y)
      for (int x = x0; x < x0 + cell; ++x) blend(out, y, x, color, alpha);
  }

  // Colorbar strip: gradient band, then labels at both ends and the centre.
  for (int x = 0; x < w; ++x) {
    const double v = w > 1 ? -1.0 + 2.0 * x / (w - 1) : 0.0;
    const Rgb color = diverging(v);
    for (int y = h + 2; y < h + 16; ++y)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = color[c];
  }
  const int ty = h + 19;
  const std::string lo = label(-max_abs), hi = label(max_abs);
  draw_text(out, 0, ty, lo);
  draw_text(out, w / 2 - 1, ty, "0");
  draw_text(out, w - text_width(hi), ty, hi);
  return out;
}

void render_heatmap(const CausalEffectMap& cem, const ImageBuffer& input,
                    const std::filesystem::path& out, const HeatmapOptions& options) {
  write_image(render_heatmap_image(cem, input, options), out);
}

}  // namespace cem
