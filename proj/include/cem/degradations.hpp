#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cem/image.hpp"
#include "cem/random.hpp"

namespace cem {

enum class Task { sr, dn, dr, other };

std::string to_string(Task task);
Task parse_task(const std::string& name);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Synthetic rain. Defaults are the "medium" configuration of this toolkit.
struct RainParams {
  double density_per_megapixel = 150.0;
  Range length_px{20.0, 40.0};
  Range width_px{1.0, 2.0};
  Range angle_deg{70.0, 110.0};
  Range intensity{0.2, 0.5};

  bool operator==(const RainParams&) const = default;
};

/// Task degradation. Only the fields of the active task are meaningful and
/// serialised.
struct DegradationSpec {
  Task task = Task::sr;
  int scale = 4;         // sr
  double sigma = 50.0;   // dn, on the 8-bit scale
  RainParams rain;       // dr

  static DegradationSpec super_resolution(int scale = 4);
  static DegradationSpec denoising(double sigma = 50.0);
  static DegradationSpec deraining(RainParams rain = {});

  void validate() const;
  bool operator==(const DegradationSpec& other) const;
};

void to_json(nlohmann::json& j, const DegradationSpec& spec);
void from_json(const nlohmann::json& j, DegradationSpec& spec);

/// Bicubic downsampling by an integer factor (a = -0.5, antialiased).
ImageBuffer degrade_sr(const ImageBuffer& image, int scale);

/// Additive Gaussian noise with std sigma / 255 per sample, then clamp.
ImageBuffer degrade_dn(const ImageBuffer& image, double sigma, CounterRng& rng);

struct RainStreak {
  double cx = 0.0;  // centre, pixel units
  double cy = 0.0;
  double length = 0.0;
  double width = 0.0;
  double angle_deg = 0.0;  // measured from horizontal
  double intensity = 0.0;
};

/// Poisson-distributed streak count with mean density * area / 1e6, then
/// per-streak geometry drawn uniformly from the parameter ranges.
std::vector<RainStreak> sample_rain_streaks(int height, int width,
                                            const RainParams& params,
                                            CounterRng& rng);

/// Non-negative single-channel streak layer: anti-aliased segments with a
/// Gaussian cross-profile whose FWHM equals the streak width.
std::vector<float> render_rain_layer(int height, int width,
                                     const std::vector<RainStreak>& streaks);

ImageBuffer degrade_dr(const ImageBuffer& image, const RainParams& params,
                       CounterRng& rng);

/// Applies `spec`. Stochastic tasks draw from the stream
/// (seed, noise|rain, stream_id).
ImageBuffer degrade(const ImageBuffer& image, const DegradationSpec& spec,
                    std::uint64_t seed, std::uint32_t stream_id);

}  // namespace cem
