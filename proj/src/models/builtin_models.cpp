#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <vector>

#include "cem/error.hpp"
#include "cem/imaging.hpp"
#include "cem/model.hpp"

namespace cem {
namespace {

class IdentityModel final : public Model {
 public:
  IdentityModel() : Model({.name = "identity", .task = Task::other}) {}

 protected:
  ImageBuffer run(const ImageBuffer& input) const override { return input; }
  ImageBuffer run_region(const ImageBuffer& input, const RoiRect& r) const override {
    return crop_region(input, r);
  }
};

class BicubicUpModel final : public Model {
 public:
  explicit BicubicUpModel(int scale)
      : Model({.name = "bicubic_up(" + std::to_string(scale) + ")",
               .task = Task::sr,
               .scale = scale}) {}

 protected:
  ImageBuffer run(const ImageBuffer& input) const override {
    const int s = info().scale;
    return resize_bicubic(input, input.height() * s, input.width() * s, false);
  }
};

// Scale-1 model whose output pixel is a fixed function of the input window
// of Chebyshev radius `radius` (edge pixels replicated at the border).
class WindowModel : public Model {
 public:
  WindowModel(ModelInfo info, int radius) : Model(std::move(info)), radius_(radius) {
    if (radius < 0) throw InvalidArgument("window radius must be >= 0");
  }

 protected:
  // Fills `out` (channels values) for output pixel (y, x).
  virtual void pixel(const ImageBuffer& in, int y, int x, float* out) const = 0;

  int radius() const { return radius_; }

  ImageBuffer run(const ImageBuffer& input) const override {
    return run_region(input, {0, 0, input.width(), input.height()});
  }

  ImageBuffer run_region(const ImageBuffer& input, const RoiRect& r) const override {
    ImageBuffer out(r.h, r.w, input.channels());
    auto data = out.mutable_data();
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x)
        pixel(input, r.y + y, r.x + x, &data[out.index(y, x)]);
    return out;
  }

  static int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

 private:
  int radius_;
};

class BoxDenoiseModel final : public WindowModel {
 public:
  explicit BoxDenoiseModel(int radius)
      : WindowModel({.name = "box_denoise(" + std::to_string(radius) + ")",
                     .task = Task::dn},
                    radius) {}

 protected:
  void pixel(const ImageBuffer& in, int y, int x, float* out) const override {
    const int r = radius();
    const int ch = in.channels();
    double acc[3] = {0, 0, 0};
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int yy = clamp_index(y + dy, in.height());
        const int xx = clamp_index(x + dx, in.width());
        for (int c = 0; c < ch; ++c) acc[c] += in.at(yy, xx, c);
      }
    const double n = double(2 * r + 1) * (2 * r + 1);
    for (int c = 0; c < ch; ++c) out[c] = static_cast<float>(acc[c] / n);
  }
};

class MedianModel final : public WindowModel {
 public:
  explicit MedianModel(int radius)
      : WindowModel({.name = "median(" + std::to_string(radius) + ")",
                     .task = Task::dn},
                    radius) {}

 protected:
  void pixel(const ImageBuffer& in, int y, int x, float* out) const override {
    const int r = radius();
    std::vector<float> window;
    window.reserve(std::size_t(2 * r + 1) * (2 * r + 1));
    for (int c = 0; c < in.channels(); ++c) {
      window.clear();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          window.push_back(in.at(clamp_index(y + dy, in.height()),
                                 clamp_index(x + dx, in.width()), c));
      auto mid = window.begin() + window.size() / 2;
      std::nth_element(window.begin(), mid, window.end());
      out[c] = *mid;
    }
  }
};

// Half identity, half inverse-square-distance weighted window mean.
class LocalWindowModel final : public WindowModel {
 public:
  explicit LocalWindowModel(int radius)
      : WindowModel({.name = "local_window(" + std::to_string(radius) + ")",
                     .task = Task::other},
                    radius) {
    double total = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        weights_.push_back(1.0 / (1.0 + dx * dx + dy * dy));
        total += weights_.back();
      }
    for (double& w : weights_) w /= total;
  }

 protected:
  void pixel(const ImageBuffer& in, int y, int x, float* out) const override {
    const int r = radius();
    const int ch = in.channels();
    double acc[3] = {0, 0, 0};
    std::size_t k = 0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx, ++k) {
        const int yy = clamp_index(y + dy, in.height());
        const int xx = clamp_index(x + dx, in.width());
        for (int c = 0; c < ch; ++c) acc[c] += weights_[k] * in.at(yy, xx, c);
      }
    for (int c = 0; c < ch; ++c)
      out[c] = static_cast<float>(0.5 * in.at(y, x, c) + 0.5 * acc[c]);
  }

 private:
  std::vector<double> weights_;
};

// Deliberately nonlocal: every output pixel shifts by k * (mean - 0.5).
class GlobalBiasModel final : public Model {
 public:
  explicit GlobalBiasModel(double k)
      : Model({.name = "global_bias(" + format(k) + ")", .task = Task::other}),
        k_(k) {}

  static std::string format(double k) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, k);
    return std::string(buf, res.ptr);
  }

 protected:
  ImageBuffer run(const ImageBuffer& input) const override {
    return run_region(input, {0, 0, input.width(), input.height()});
  }

  ImageBuffer run_region(const ImageBuffer& input, const RoiRect& r) const override {
    double sum = 0.0;
    for (float v : input.data()) sum += v;
    const double shift = k_ * (sum / double(input.size()) - 0.5);
    ImageBuffer out = crop_region(input, r);
    for (float& v : out.mutable_data()) v = static_cast<float>(v + shift);
    out.clamp();
    return out;
  }

 private:
  double k_;
};

struct ParsedSpec {
  std::string name;
  std::string param;
};

ParsedSpec split_spec(const std::string& spec) {
  const auto open = spec.find_first_of("(:=");
  if (open == std::string::npos) return {spec, ""};
  std::string param = spec.substr(open + 1);
  if (spec[open] == '(') {
    if (param.empty() || param.back() != ')')
      throw InvalidArgument("malformed builtin model spec '" + spec + "'");
    param.pop_back();
  }
  return {spec.substr(0, open), param};
}

double parse_number(const std::string& text, const std::string& spec) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || !std::isfinite(v))
    throw InvalidArgument("bad parameter '" + text + "' in builtin model '" + spec + "'");
  return v;
}

int parse_int(const std::string& text, const std::string& spec, int fallback, int min) {
  if (text.empty()) return fallback;
  const double v = parse_number(text, spec);
  if (v != std::floor(v) || v < min || v > 1 << 20)
    throw InvalidArgument("parameter of '" + spec + "' must be an integer >= " +
                          std::to_string(min));
  return static_cast<int>(v);
}

}  // namespace

ModelHandle make_builtin(const std::string& spec) {
  const auto [name, param] = split_spec(spec);
  if (name == "identity") {
    if (!param.empty()) throw InvalidArgument("identity takes no parameter");
    return std::make_shared<IdentityModel>();
  }
  if (name == "bicubic_up")
    return std::make_shared<BicubicUpModel>(parse_int(param, spec, 4, 2));
  if (name == "box_denoise")
    return std::make_shared<BoxDenoiseModel>(parse_int(param, spec, 1, 0));
  if (name == "median")
    return std::make_shared<MedianModel>(parse_int(param, spec, 1, 0));
  if (name == "local_window")
    return std::make_shared<LocalWindowModel>(parse_int(param, spec, 4, 0));
  if (name == "global_bias")
    return std::make_shared<GlobalBiasModel>(param.empty() ? 1.0 : parse_number(param, spec));
  throw InvalidArgument("unknown builtin model '" + name +
                        "' (identity, bicubic_up, box_denoise, median, "
                        "local_window, global_bias)");
}

}  // namespace cem
