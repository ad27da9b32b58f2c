#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cem/error.hpp"
#include "cem/reporting.hpp"

namespace cem {
namespace {

const char* kColumns[] = {"model",        "task",         "positive_pct",
                          "negative_pct", "none_pct",     "range_min_db",
                          "range_max_db", "inferences",   "similarity"};

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw FormatError("bad number '" + s + "' in report");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("bad number '" + s + "' in report");
  }
}

}  // namespace

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw InvalidArgument("unknown report format '" + name + "' (csv|json)");
}

std::vector<ReportRow> build_report(const std::vector<CausalEffectMap>& cems,
                                    const CausalEffectMap* reference) {
  if (cems.empty()) throw InvalidArgument("report needs at least one CEM");
  std::vector<ReportRow> rows;
  std::vector<EffectStats> all;
  std::set<std::string> tasks;
  double inferences = 0.0, similarity = 0.0;
  const double eps = cems.front().config.epsilon();
  for (const auto& cem : cems) {
    ReportRow row;
    row.model = cem.model.name;
    row.task = to_string(cem.model.task);
    row.stats = classify_effects(cem, eps);
    row.inferences = double(cem.inference_count);
    if (reference) {
      row.similarity = similarity_score(*reference, cem);
      similarity += *row.similarity;
    }
    inferences += row.inferences;
    tasks.insert(row.task);
    all.push_back(row.stats);
    rows.push_back(std::move(row));
  }
  ReportRow agg;
  agg.model = "aggregate";
  agg.task = tasks.size() == 1 ? *tasks.begin() : "mixed";
  agg.stats = aggregate_stats(all);
  agg.inferences = inferences / double(cems.size());
  if (reference) agg.similarity = similarity / double(cems.size());
  rows.push_back(std::move(agg));
  return rows;
}

std::string report_to_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < std::size(kColumns); ++i)
    out << (i ? "," : "") << kColumns[i];
  out << '\n';
  for (const auto& r : rows) {
    out << quote(r.model) << ',' << quote(r.task) << ',' << fixed4(r.stats.positive_pct)
        << ',' << fixed4(r.stats.negative_pct) << ',' << fixed4(r.stats.none_pct) << ','
        << fixed4(r.stats.range_min_db) << ',' << fixed4(r.stats.range_max_db) << ','
        << fixed4(r.inferences) << ',' << (r.similarity ? fixed4(*r.similarity) : "") << '\n';
  }
  return out.str();
}

std::vector<ReportRow> report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty report");
  const auto header = split_csv_line(line);
  if (header.size() != std::size(kColumns))
    throw FormatError("unexpected report header");
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] != kColumns[i]) throw FormatError("unexpected report column '" + header[i] + "'");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != std::size(kColumns)) throw FormatError("malformed report row");
    ReportRow r;
    r.model = f[0];
    r.task = f[1];
    r.stats.positive_pct = parse_double(f[2]);
    r.stats.negative_pct = parse_double(f[3]);
    r.stats.none_pct = parse_double(f[4]);
    r.stats.range_min_db = parse_double(f[5]);
    r.stats.range_max_db = parse_double(f[6]);
    r.inferences = parse_double(f[7]);
    if (!f[8].empty()) r.similarity = parse_double(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

nlohmann::ordered_json report_to_json(const std::vector<ReportRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["model"] = r.model;
    o["task"] = r.task;
    o["positive_pct"] = r.stats.positive_pct;
    o["negative_pct"] = r.stats.negative_pct;
    o["none_pct"] = r.stats.none_pct;
    o["range_min_db"] = r.stats.range_min_db;
    o["range_max_db"] = r.stats.range_max_db;
    o["inferences"] = r.inferences;
    o["similarity"] = r.similarity ? nlohmann::ordered_json(*r.similarity) : nlohmann::ordered_json(nullptr);
    arr.push_back(std::move(o));
  }
  return arr;
}

void export_report(const std::vector<std::filesystem::path>& cem_files,
                   const std::filesystem::path& out, ReportFormat format,
                   const std::optional<std::filesystem::path>& reference) {
  if (cem_files.empty()) throw InvalidArgument("no CEM files to report");
  std::vector<CausalEffectMap> cems;
  std::optional<int> version;
  for (const auto& path : cem_files) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("'" + path.string() + "' is not valid JSON");
    }
    const int v = j.value("version", -1);
    if (version && *version != v)
      throw FormatError("schema version mismatch: '" + path.string() + "' is version " +
                        std::to_string(v) + ", earlier inputs are version " +
                        std::to_string(*version));
    version = v;
    cems.push_back(cem_from_json(j));
  }
  std::optional<CausalEffectMap> ref;
  if (reference) ref = read_cem_json(*reference);
  const auto rows = build_report(cems, ref ? &*ref : nullptr);

  std::ofstream file(out);
  if (!file) throw IoError("cannot write '" + out.string() + "'");
  if (format == ReportFormat::csv)
    file << report_to_csv(rows);
  else
    file << report_to_json(rows).dump(2) << '\n';
  if (!file) throw IoError("short write to '" + out.string() + "'");
}

}  // namespace cem
