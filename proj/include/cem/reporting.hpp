#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cem/engine.hpp"
#include "cem/image.hpp"

namespace cem {

/// Share of grid patches per effect class. ROI patches count as positive
/// (their effect is +inf) but are left out of the range.
struct EffectStats {
  double positive_pct = 0.0;
  double negative_pct = 0.0;
  double none_pct = 0.0;
  double range_min_db = 0.0;
  double range_max_db = 0.0;
  double epsilon = 0.01;
};

/// phi > eps positive, phi < -eps negative, |phi| <= eps none.
EffectStats classify_effects(const CausalEffectMap& cem, double epsilon);
EffectStats classify_effects(const std::vector<double>& effects, double epsilon);

/// Mean percentages; range is (mean of mins, mean of maxes).
EffectStats aggregate_stats(const std::vector<EffectStats>& stats);

void to_json(nlohmann::json& j, const EffectStats& s);

inline constexpr int kCemFormatVersion = 1;

/// CEM document including embedded stats. Effects inside the ROI are null.
nlohmann::ordered_json cem_to_json(const CausalEffectMap& cem);
CausalEffectMap cem_from_json(const nlohmann::json& j);

void write_cem_json(const CausalEffectMap& cem, const std::filesystem::path& path);
CausalEffectMap read_cem_json(const std::filesystem::path& path);

struct HeatmapOptions {
  int display_factor = 4;
  float max_alpha = 0.75f;
};

inline constexpr int kColorbarHeight = 26;

/// Overlay of per-patch tints on the grayscale input: blue for negative,
/// red for positive, normalised to the largest finite |effect|. ROI patches
/// get a green tint and outline. A colorbar strip with -max/0/+max labels is
/// appended below.
ImageBuffer render_heatmap_image(const CausalEffectMap& cem, const ImageBuffer& input,
                                 const HeatmapOptions& options = {});

void render_heatmap(const CausalEffectMap& cem, const ImageBuffer& input,
                    const std::filesystem::path& out, const HeatmapOptions& options = {});

enum class ReportFormat { csv, json };

ReportFormat parse_report_format(const std::string& name);

struct ReportRow {
  std::string model;
  std::string task;
  EffectStats stats;
  double inferences = 0.0;
  std::optional<double> similarity;
};

/// One row per CEM plus a trailing "aggregate" row.
std::vector<ReportRow> build_report(const std::vector<CausalEffectMap>& cems,
                                    const CausalEffectMap* reference = nullptr);

void export_report(const std::vector<std::filesystem::path>& cem_files,
                   const std::filesystem::path& out, ReportFormat format,
                   const std::optional<std::filesystem::path>& reference = std::nullopt);

std::string report_to_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> report_from_csv(const std::string& text);
nlohmann::ordered_json report_to_json(const std::vector<ReportRow>& rows);

}  // namespace cem
