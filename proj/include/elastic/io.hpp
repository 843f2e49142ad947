#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "elastic/alignment.hpp"
#include "elastic/analysis.hpp"
#include "elastic/curve.hpp"
#include "elastic/elastic_mean.hpp"
#include "elastic/errors.hpp"
#include "elastic/simulate.hpp"
#include "elastic/srv_spline.hpp"

namespace elastic::io {

using Json = nlohmann::json;

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, res.ptr};
}

// ---------------------------------------------------------------------------
// Plain CSV rows (no quoting; fields must not contain commas)

struct CsvRow {
  std::size_t line;
  std::vector<std::string> fields;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) return out;
    pos = comma + 1;
  }
}

inline std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  return out;
}

}  // namespace detail

/// Reads a header line and data rows; blank lines are skipped. Line numbers
/// count from 1 and include the header.
inline CsvTable read_csv(std::istream& in, const std::string& source = "<input>") {
  CsvTable table;
  std::string line;
  std::size_t number = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++number;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      throw ValidationError(detail::where(source, number) + "expected " + std::to_string(table.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    table.rows.push_back({number, std::move(fields)});
  }
  if (!have_header) throw ValidationError(source + ": empty file");
  return table;
}

/// Parses a finite double occupying the whole field.
inline double parse_double(const std::string& field, const std::string& source, std::size_t line,
                           std::string_view column) {
  double value = 0.0;
  const char* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, value);
  if (field.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(value))
    throw ValidationError(detail::where(source, line) + "column " + std::string(column) + ": '" + field +
                          "' is not a finite number");
  return value;
}

// ---------------------------------------------------------------------------
// Curves in long format: curve_id,t,x1,...,xd

struct CurveSet {
  std::vector<std::string> ids;
  std::vector<DiscreteCurve> curves;
};

/// Rows of a curve must be contiguous. The t column is either empty on every
/// row of a curve (relative arc length is assigned) or strictly increasing.
inline CurveSet read_curves(std::istream& in, bool closed, const std::string& source = "<input>") {
  const auto table = read_csv(in, source);
  const auto& h = table.header;
  if (h.size() < 3 || h[0] != "curve_id" || h[1] != "t")
    throw ValidationError(source + ":1: header must be curve_id,t,x1,...,xd");
  const auto dim = static_cast<Eigen::Index>(h.size() - 2);

  CurveSet set;
  std::map<std::string, bool> seen;
  std::size_t i = 0;
  while (i < table.rows.size()) {
    const std::string id = table.rows[i].fields[0];
    if (id.empty()) throw ValidationError(detail::where(source, table.rows[i].line) + "empty curve_id");
    if (seen.count(id)) throw ValidationError(detail::where(source, table.rows[i].line) + "rows of curve '" + id +
                                              "' are not contiguous");
    seen[id] = true;
    std::size_t end = i;
    while (end < table.rows.size() && table.rows[end].fields[0] == id) ++end;

    Eigen::MatrixXd pts(static_cast<Eigen::Index>(end - i), dim);
    std::vector<double> params;
    const bool has_t = !table.rows[i].fields[1].empty();
    for (std::size_t r = i; r < end; ++r) {
      const auto& row = table.rows[r];
      if (row.fields[1].empty() == has_t)
        throw ValidationError(detail::where(source, row.line) + "t must be given on all rows of curve '" + id +
                              "' or on none");
      if (has_t) {
        params.push_back(parse_double(row.fields[1], source, row.line, "t"));
        if (params.size() > 1 && !(params.back() > params[params.size() - 2]))
          throw ValidationError(detail::where(source, row.line) + "t must be strictly increasing within curve '" +
                                id + "'");
      }
      for (Eigen::Index c = 0; c < dim; ++c)
        pts(static_cast<Eigen::Index>(r - i), c) =
            parse_double(row.fields[static_cast<std::size_t>(c) + 2], source, row.line, h[static_cast<std::size_t>(c) + 2]);
    }
    try {
      set.curves.push_back(ingest_curve(pts, has_t ? std::optional(params) : std::nullopt, closed));
    } catch (const ValidationError& e) {
      throw ValidationError(detail::where(source, table.rows[i].line) + "curve '" + id + "': " + e.what());
    }
    set.ids.push_back(id);
    i = end;
  }
  if (set.curves.empty()) throw ValidationError(source + ": no curves");
  return set;
}

inline CurveSet read_curves(const std::string& path, bool closed) {
  auto in = detail::open_input(path);
  return read_curves(in, closed, path);
}

inline void write_curves(std::ostream& out, const CurveSet& set) {
  if (set.curves.empty()) throw ValidationError("no curves to write");
  const auto dim = set.curves.front().dim();
  out << "curve_id,t";
  for (Eigen::Index c = 0; c < dim; ++c) out << ",x" << c + 1;
  out << '\n';
  for (std::size_t i = 0; i < set.curves.size(); ++i) {
    const auto& curve = set.curves[i];
    for (Eigen::Index r = 0; r < curve.points.rows(); ++r) {
      out << set.ids[i] << ',' << format_double(curve.params[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < dim; ++c) out << ',' << format_double(curve.points(r, c));
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Distance matrices: header of ids, then one row of values per curve

inline DistanceMatrix read_matrix(std::istream& in, const std::string& source = "<input>") {
  const auto table = read_csv(in, source);
  const auto n = table.header.size();
  if (table.rows.size() != n)
    throw ValidationError(source + ": matrix has " + std::to_string(n) + " ids but " +
                          std::to_string(table.rows.size()) + " rows");
  DistanceMatrix m;
  m.labels = table.header;
  m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_double(table.rows[r].fields[c], source, table.rows[r].line, table.header[c]);
  m.asymmetry = Eigen::MatrixXd::Zero(m.values.rows(), m.values.cols());
  m.validate();
  return m;
}

inline void write_matrix(std::ostream& out, const DistanceMatrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i)
    out << (i ? "," : "") << (m.labels.empty() ? std::to_string(i) : m.labels[i]);
  out << '\n';
  for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) out << (c ? "," : "") << format_double(m.values(r, c));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Per-curve tables: curve_id followed by numeric columns

struct IdTable {
  std::vector<std::string> ids;
  std::vector<std::string> columns;
  Eigen::MatrixXd values;
};

inline IdTable read_id_table(std::istream& in, const std::string& source = "<input>") {
  const auto table = read_csv(in, source);
  if (table.header.size() < 2 || table.header[0] != "curve_id")
    throw ValidationError(source + ":1: header must start with curve_id and have at least one value column");
  IdTable out;
  out.columns.assign(table.header.begin() + 1, table.header.end());
  out.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(out.columns.size()));
  std::map<std::string, bool> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (seen.count(row.fields[0])) throw ValidationError(detail::where(source, row.line) + "duplicate curve_id '" +
                                                         row.fields[0] + "'");
    seen[row.fields[0]] = true;
    out.ids.push_back(row.fields[0]);
    for (std::size_t c = 0; c < out.columns.size(); ++c)
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_double(row.fields[c + 1], source, row.line, out.columns[c]);
  }
  return out;
}

inline void write_labels(std::ostream& out, std::span<const std::string> ids, std::span<const int> labels) {
  out << "curve_id,cluster\n";
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << labels[i] << '\n';
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const SrvSpline& s) {
  Json coef = Json::array();
  for (Eigen::Index b = 0; b < s.coefficients.rows(); ++b) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < s.coefficients.cols(); ++c) row.push_back(s.coefficients(b, c));
    coef.push_back(std::move(row));
  }
  return {{"degree", s.degree}, {"knots", s.knots}, {"coefficients", std::move(coef)}};
}

inline SrvSpline spline_from_json(const Json& j) {
  try {
    SrvSpline s;
    s.degree = j.at("degree").get<int>();
    s.knots = j.at("knots").get<std::vector<double>>();
    const auto& coef = j.at("coefficients");
    const auto rows = static_cast<Eigen::Index>(coef.size());
    const auto cols = rows ? static_cast<Eigen::Index>(coef.at(0).size()) : 0;
    s.coefficients.resize(rows, cols);
    for (Eigen::Index b = 0; b < rows; ++b) {
      if (static_cast<Eigen::Index>(coef.at(b).size()) != cols)
        throw ValidationError("spline coefficient rows differ in length");
      for (Eigen::Index c = 0; c < cols; ++c) s.coefficients(b, c) = coef.at(b).at(c).get<double>();
    }
    s.validate();
    return s;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad spline JSON: ") + e.what());
  }
}

inline Json to_json(const WarpAssignment& a) { return {{"t", a.t}, {"closed", a.closed}}; }

inline Json to_json(const AlignmentResult& r) {
  return {{"t", r.assignment.t},         {"closed", r.assignment.closed}, {"phi", r.phi},
          {"distance", r.distance},      {"sweeps", r.sweeps},            {"converged", r.converged},
          {"restarts_used", r.restarts_used}};
}

inline Json to_json(const ElasticMeanResult& r) {
  Json assignments = Json::array();
  for (const auto& a : r.assignments) assignments.push_back(to_json(a));
  return {{"mean", to_json(r.mean)},
          {"assignments", std::move(assignments)},
          {"loss_trace", r.loss_trace},
          {"closure_gap_trace", r.closure_gap_trace},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"skipped_segments", r.skipped_segments}};
}

inline Json to_json(const ThresholdClassifier& c, std::optional<double> loo_accuracy = std::nullopt) {
  Json j = {{"thresholds", c.thresholds},
            {"rule", c.rule == ThresholdRule::Or ? "or" : "single"},
            {"train_accuracy", c.train_accuracy}};
  j["loo_accuracy"] = loo_accuracy ? Json(*loo_accuracy) : Json(nullptr);
  return j;
}

/// Simulation config: {"template": "heart" or spline JSON, "sigma", "n",
/// "m_min", "m_max", "closed", "seed"}; missing keys keep their defaults.
/// The heart template implies closed curves unless "closed" says otherwise.
inline SimulationConfig simulation_from_json(const Json& j) {
  try {
    SimulationConfig cfg;
    const Json tmpl = j.value("template", Json("heart"));
    if (tmpl.is_string()) {
      if (tmpl.get<std::string>() != "heart")
        throw ValidationError("unknown template '" + tmpl.get<std::string>() + "' (use \"heart\" or a spline)");
      cfg.shape = heart_template();
      cfg.closed = true;
    } else {
      cfg.shape = spline_from_json(tmpl);
    }
    cfg.sigma = j.value("sigma", cfg.sigma);
    cfg.n = j.value("n", cfg.n);
    cfg.m_min = j.value("m_min", cfg.m_min);
    cfg.m_max = j.value("m_max", cfg.m_max);
    cfg.closed = j.value("closed", cfg.closed);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad simulation config: ") + e.what());
  }
}

inline Json read_json(const std::string& path) {
  auto in = detail::open_input(path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace elastic::io
