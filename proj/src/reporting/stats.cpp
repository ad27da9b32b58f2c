#include <algorithm>
#include <cmath>

#include "cem/error.hpp"
#include "cem/reporting.hpp"

namespace cem {

EffectStats classify_effects(const std::vector<double>& effects, double epsilon) {
  EffectStats s;
  s.epsilon = epsilon;
  if (effects.empty()) return s;
  std::size_t pos = 0, neg = 0, none = 0;
  bool any_finite = false;
  double lo = 0.0, hi = 0.0;
  for (double phi : effects) {
    if (std::isinf(phi) && phi > 0) {
      ++pos;
      continue;
    }
    if (phi > epsilon)
      ++pos;
    else if (phi < -epsilon)
      ++neg;
    else
      ++none;
    if (!any_finite) {
      lo = hi = phi;
      any_finite = true;
    }
    lo = std::min(lo, phi);
    hi = std::max(hi, phi);
  }
  const double n = double(effects.size());
  s.positive_pct = 100.0 * double(pos) / n;
  s.negative_pct = 100.0 * double(neg) / n;
  s.none_pct = 100.0 * double(none) / n;
  s.range_min_db = lo;
  s.range_max_db = hi;
  return s;
}

EffectStats classify_effects(const CausalEffectMap& cem, double epsilon) {
  return classify_effects(cem.effects, epsilon);
}

EffectStats aggregate_stats(const std::vector<EffectStats>& stats) {
  if (stats.empty()) throw InvalidArgument("cannot aggregate an empty list of stats");
  EffectStats out;
  out.epsilon = stats.front().epsilon;
  for (const auto& s : stats) {
    if (s.epsilon != out.epsilon)
      throw InvalidArgument("cannot aggregate stats computed with different epsilon");
    out.positive_pct += s.positive_pct;
    out.negative_pct += s.negative_pct;
    out.none_pct += s.none_pct;
    out.range_min_db += s.range_min_db;
    out.range_max_db += s.range_max_db;
  }
  const double n = double(stats.size());
  out.positive_pct /= n;
  out.negative_pct /= n;
  out.none_pct /= n;
  out.range_min_db /= n;
  out.range_max_db /= n;
  return out;
}

void to_json(nlohmann::json& j, const EffectStats& s) {
  j = {{"positive_pct", s.positive_pct}, {"negative_pct", s.negative_pct},
       {"none_pct", s.none_pct},         {"range_min_db", s.range_min_db},
       {"range_max_db", s.range_max_db}, {"epsilon", s.epsilon}};
}

}  // namespace cem
