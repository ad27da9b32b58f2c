#include "cem/degradations.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cem/error.hpp"
#include "cem/imaging.hpp"

namespace cem {

std::string to_string(Task task) {
  switch (task) {
    case Task::sr: return "sr";
    case Task::dn: return "dn";
    case Task::dr: return "dr";
    case Task::other: return "other";
  }
  return "other";
}

Task parse_task(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (lower == "sr") return Task::sr;
  if (lower == "dn") return Task::dn;
  if (lower == "dr") return Task::dr;
  if (lower == "other") return Task::other;
  throw InvalidArgument("unknown task '" + name + "' (expected sr|dn|dr)");
}

DegradationSpec DegradationSpec::super_resolution(int scale) {
  DegradationSpec s;
  s.task = Task::sr;
  s.scale = scale;
  return s;
}

DegradationSpec DegradationSpec::denoising(double sigma) {
  DegradationSpec s;
  s.task = Task::dn;
  s.sigma = sigma;
  return s;
}

DegradationSpec DegradationSpec::deraining(RainParams rain) {
  DegradationSpec s;
  s.task = Task::dr;
  s.rain = rain;
  return s;
}

void DegradationSpec::validate() const {
  auto check_range = [](const Range& r, const char* name, double min_lo) {
    if (!(r.lo <= r.hi) || r.lo < min_lo)
      throw InvalidArgument(std::string("invalid rain ") + name + " range");
  };
  switch (task) {
    case Task::sr:
      if (scale < 2) throw InvalidArgument("SR scale must be >= 2");
      break;
    case Task::dn:
      if (!(sigma > 0.0)) throw InvalidArgument("noise sigma must be > 0");
      break;
    case Task::dr:
      if (!(rain.density_per_megapixel >= 0.0))
        throw InvalidArgument("rain density must be >= 0");
      check_range(rain.length_px, "length", 0.0);
      check_range(rain.width_px, "width", 1e-6);
      check_range(rain.angle_deg, "angle", -360.0);
      check_range(rain.intensity, "intensity", 0.0);
      break;
    case Task::other:
      throw InvalidArgument("degradation task must be sr, dn or dr");
  }
}

bool DegradationSpec::operator==(const DegradationSpec& o) const {
  if (task != o.task) return false;
  switch (task) {
    case Task::sr: return scale == o.scale;
    case Task::dn: return sigma == o.sigma;
    case Task::dr: return rain == o.rain;
    case Task::other: return true;
  }
  return true;
}

void to_json(nlohmann::json& j, const DegradationSpec& spec) {
  j = nlohmann::json{{"task", to_string(spec.task)}};
  auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
  switch (spec.task) {
    case Task::sr: j["scale"] = spec.scale; break;
    case Task::dn: j["sigma"] = spec.sigma; break;
    case Task::dr:
      j["rain"] = {{"density_per_megapixel", spec.rain.density_per_megapixel},
                   {"length_px", range(spec.rain.length_px)},
                   {"width_px", range(spec.rain.width_px)},
                   {"angle_deg", range(spec.rain.angle_deg)},
                   {"intensity", range(spec.rain.intensity)}};
      break;
    case Task::other: break;
  }
}

void from_json(const nlohmann::json& j, DegradationSpec& spec) {
  spec = DegradationSpec{};
  spec.task = parse_task(j.at("task").get<std::string>());
  auto range = [](const nlohmann::json& r) {
    return Range{r.at(0).get<double>(), r.at(1).get<double>()};
  };
  if (spec.task == Task::sr) spec.scale = j.at("scale").get<int>();
  if (spec.task == Task::dn) spec.sigma = j.at("sigma").get<double>();
  if (spec.task == Task::dr) {
    const auto& r = j.at("rain");
    spec.rain.density_per_megapixel = r.at("density_per_megapixel").get<double>();
    spec.rain.length_px = range(r.at("length_px"));
    spec.rain.width_px = range(r.at("width_px"));
    spec.rain.angle_deg = range(r.at("angle_deg"));
    spec.rain.intensity = range(r.at("intensity"));
  }
}

ImageBuffer degrade_sr(const ImageBuffer& image, int scale) {
  if (scale < 1) throw InvalidArgument("SR scale must be positive");
  if (image.height() % scale != 0 || image.width() % scale != 0)
    throw DimensionError("image " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) +
                         " is not divisible by scale " + std::to_string(scale));
  return resize_bicubic(image, image.height() / scale, image.width() / scale,
                        /*antialias=*/true);
}

ImageBuffer degrade_dn(const ImageBuffer& image, double sigma, CounterRng& rng) {
  if (!(sigma > 0.0)) throw InvalidArgument("noise sigma must be > 0");
  const double std_dev = sigma / 255.0;
  ImageBuffer out = image;
  for (float& v : out.mutable_data())
    v = static_cast<float>(v + std_dev * rng.normal());
  out.clamp();
  return out;
}

std::vector<RainStreak> sample_rain_streaks(int height, int width,
                                            const RainParams& params,
                                            CounterRng& rng) {
  const double lambda =
      params.density_per_megapixel * double(height) * double(width) / 1e6;
  const std::uint64_t count = lambda > 0.0 ? rng.poisson(lambda) : 0;
  std::vector<RainStreak> streaks;
  streaks.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    RainStreak s;
    s.cx = rng.uniform(0.0, width);
    s.cy = rng.uniform(0.0, height);
    s.length = rng.uniform(params.length_px.lo, params.length_px.hi);
    s.width = rng.uniform(params.width_px.lo, params.width_px.hi);
    s.angle_deg = rng.uniform(params.angle_deg.lo, params.angle_deg.hi);
    s.intensity = rng.uniform(params.intensity.lo, params.intensity.hi);
    streaks.push_back(s);
  }
  return streaks;
}

std::vector<float> render_rain_layer(int height, int width,
                                     const std::vector<RainStreak>& streaks) {
  std::vector<float> layer(std::size_t(height) * width, 0.0f);
  for (const RainStreak& s : streaks) {
    const double theta = s.angle_deg * std::numbers::pi / 180.0;
    // Image y grows downwards; positive angles lean the streak upwards.
    const double dx = std::cos(theta);
    const double dy = -std::sin(theta);
    const double half = 0.5 * s.length;
    const double sd = s.width / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    const double reach = half * std::max(std::fabs(dx), std::fabs(dy)) + 3.0 * sd + 1.0;
    const int x0 = std::max(0, int(std::floor(s.cx - reach)));
    const int x1 = std::min(width - 1, int(std::ceil(s.cx + reach)));
    const int y0 = std::max(0, int(std::floor(s.cy - reach)));
    const int y1 = std::min(height - 1, int(std::ceil(s.cy + reach)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5 - s.cx;
        const double py = y + 0.5 - s.cy;
        const double along = px * dx + py * dy;
        const double across = px * dy - py * dx;
        // One-pixel linear ramp at the segment ends.
        const double taper = std::clamp(half + 0.5 - std::fabs(along), 0.0, 1.0);
        if (taper <= 0.0) continue;
        const double profile = std::exp(-across * across / (2.0 * sd * sd));
        layer[std::size_t(y) * width + x] +=
            static_cast<float>(s.intensity * profile * taper);
      }
    }
  }
  return layer;
}

ImageBuffer degrade_dr(const ImageBuffer& image, const RainParams& params,
                       CounterRng& rng) {
  const auto streaks = sample_rain_streaks(image.height(), image.width(), params, rng);
  if (streaks.empty()) return image;
  const auto layer = render_rain_layer(image.height(), image.width(), streaks);
  ImageBuffer out = image;
  auto data = out.mutable_data();
  const int ch = image.channels();
  for (std::size_t p = 0; p < layer.size(); ++p)
    for (int c = 0; c < ch; ++c) data[p * ch + c] += layer[p];
  out.clamp();
  return out;
}

ImageBuffer degrade(const ImageBuffer& image, const DegradationSpec& spec,
                    std::uint64_t seed, std::uint32_t stream_id) {
  spec.validate();
  switch (spec.task) {
    case Task::sr: return degrade_sr(image, spec.scale);
    case Task::dn: {
      CounterRng rng(seed, Stage::noise, stream_id);
      return degrade_dn(image, spec.sigma, rng);
    }
    case Task::dr: {
      CounterRng rng(seed, Stage::rain, stream_id);
      return degrade_dr(image, spec.rain, rng);
    }
    case Task::other: break;
  }
  throw InvalidArgument("unsupported degradation task");
}

}  // namespace cem
