#include <cmath>
#include <fstream>

#include "cem/error.hpp"
#include "cem/reporting.hpp"

namespace cem {

nlohmann::ordered_json cem_to_json(const CausalEffectMap& cem) {
  using oj = nlohmann::ordered_json;
  oj j;
  j["version"] = kCemFormatVersion;
  j["model"] = {{"name", cem.model.name},
                {"task", to_string(cem.model.task)},
                {"scale", cem.model.scale},
                {"backend", to_string(cem.model.backend)}};
  j["input"] = {{"path", cem.input_path},
                {"hash", cem.input_hash},
                {"height", cem.grid.rows * cem.grid.patch_size},
                {"width", cem.grid.cols * cem.grid.patch_size}};
  j["gt"] = {{"path", cem.gt_path}, {"hash", cem.gt_hash}};
  if (cem.degradation) {
    nlohmann::json d = *cem.degradation;
    j["degradation"] = oj::parse(d.dump());
  } else {
    j["degradation"] = nullptr;
  }
  j["roi"] = {{"x", cem.roi.x}, {"y", cem.roi.y}, {"w", cem.roi.w}, {"h", cem.roi.h}};
  j["patch_size"] = cem.grid.patch_size;
  j["grid"] = {{"rows", cem.grid.rows}, {"cols", cem.grid.cols}};
  j["baseline_db"] = cem.baseline_db;
  oj effects = oj::array();
  for (double phi : cem.effects) {
    if (std::isinf(phi))
      effects.push_back(nullptr);
    else
      effects.push_back(phi);
  }
  j["effects"] = std::move(effects);
  j["roi_sentinel"] = "null means +inf (inside ROI)";
  const EngineConfig& c = cem.config;
  j["config"] = {{"mode", to_string(c.mode)},
                 {"T", c.T},
                 {"C", c.C},
                 {"F", c.F},
                 {"tau", c.tau},
                 {"sampling", to_string(c.sampling)},
                 {"seed", c.seed},
                 {"coarse_sampling", to_string(c.coarse_mode())}};
  j["counts"] = {{"inferences", cem.inference_count},
                 {"sensitive", cem.sensitive_count},
                 {"unrelated", cem.unrelated_count}};
  const EffectStats s = classify_effects(cem, c.epsilon());
  j["stats"] = {{"positive_pct", s.positive_pct}, {"negative_pct", s.negative_pct},
                {"none_pct", s.none_pct},         {"range_min_db", s.range_min_db},
                {"range_max_db", s.range_max_db}, {"epsilon", s.epsilon}};
  return j;
}

CausalEffectMap cem_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kCemFormatVersion)
      throw FormatError("CEM format version " + std::to_string(version) +
                        " is not supported");
    CausalEffectMap cem;
    const auto& m = j.at("model");
    cem.model.name = m.at("name").get<std::string>();
    cem.model.task = parse_task(m.at("task").get<std::string>());
    cem.model.scale = m.at("scale").get<int>();
    const std::string backend = m.at("backend").get<std::string>();
    cem.model.backend = backend == "subprocess"  ? Backend::subprocess
                        : backend == "onnx-file" ? Backend::onnx_file
                                                 : Backend::builtin;
    cem.input_path = j.at("input").at("path").get<std::string>();
    cem.input_hash = j.at("input").at("hash").get<std::string>();
    cem.gt_path = j.at("gt").at("path").get<std::string>();
    cem.gt_hash = j.at("gt").at("hash").get<std::string>();
    if (!j.at("degradation").is_null())
      cem.degradation = j.at("degradation").get<DegradationSpec>();
    const auto& r = j.at("roi");
    cem.roi = {r.at("x").get<int>(), r.at("y").get<int>(), r.at("w").get<int>(),
               r.at("h").get<int>()};
    cem.grid.patch_size = j.at("patch_size").get<int>();
    cem.grid.rows = j.at("grid").at("rows").get<int>();
    cem.grid.cols = j.at("grid").at("cols").get<int>();
    cem.baseline_db = j.at("baseline_db").get<double>();
    for (const auto& e : j.at("effects"))
      cem.effects.push_back(e.is_null() ? kRoiSentinel : e.get<double>());
    if (int(cem.effects.size()) != cem.grid.count())
      throw FormatError("CEM has " + std::to_string(cem.effects.size()) +
                        " effects for a grid of " + std::to_string(cem.grid.count()));
    const auto& c = j.at("config");
    cem.config.mode = parse_mode(c.at("mode").get<std::string>());
    cem.config.T = c.at("T").get<int>();
    cem.config.C = c.at("C").get<int>();
    cem.config.F = c.at("F").get<int>();
    cem.config.tau = c.at("tau").get<double>();
    cem.config.sampling = parse_sampling(c.at("sampling").get<std::string>());
    cem.config.seed = c.at("seed").get<std::uint64_t>();
    cem.config.patch_size = cem.grid.patch_size;
    if (c.contains("coarse_sampling"))
      cem.config.coarse_sampling = parse_sampling(c["coarse_sampling"].get<std::string>());
    if (j.contains("stats") && j["stats"].contains("epsilon"))
      cem.config.epsilon_classify = j["stats"]["epsilon"].get<double>();
    const auto& counts = j.at("counts");
    cem.inference_count = counts.at("inferences").get<std::uint64_t>();
    cem.sensitive_count = counts.at("sensitive").get<int>();
    cem.unrelated_count = counts.at("unrelated").get<int>();
    // Per-patch counts are not serialised; full mode implies T everywhere
    // outside the ROI, fast mode cannot be reconstructed.
    if (cem.config.mode == RunMode::full) {
      cem.intervention_counts.assign(cem.effects.size(), 0);
      for (std::size_t i = 0; i < cem.effects.size(); ++i)
        if (!std::isinf(cem.effects[i])) cem.intervention_counts[i] = cem.config.T;
    }
    return cem;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed CEM document: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("malformed CEM document: ") + e.what());
  }
}

void write_cem_json(const CausalEffectMap& cem, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << cem_to_json(cem).dump(2) << '\n';
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

CausalEffectMap read_cem_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return cem_from_json(j);
}

}  // namespace cem
