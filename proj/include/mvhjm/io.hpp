#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mvhjm/errors.hpp"
#include "mvhjm/measures.hpp"
#include "mvhjm/models.hpp"
#include "mvhjm/simulate.hpp"

namespace mvhjm::io {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw ParseError(context + ": trailing characters in '" + s + "'");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(context + ": cannot parse number '" + s + "'");
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Numeric CSV with a mandatory header row.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV file: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV file: " + path);
  table.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != table.header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": wrong number of columns");
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c, path + ":" + std::to_string(lineno)));
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  char buf[40];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << "\n";
  }
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t parse_iso_date(const std::string& s, const std::string& context) {
  int y = 0, m = 0, d = 0;
  if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 || d < 1 || d > 31)
    throw ParseError(context + ": cannot parse date '" + s + "' (expected YYYY-MM-DD)");
  return days_from_civil(y, m, d);
}

/// Forward curve loader. Accepts header `x,weight` (year fractions, weights as
/// given) or `date,value` (daily values; x = days since the first date / 365,
/// atom weight = value / 365).
inline DiscreteMeasure load_forward_curve_csv(const std::string& path, double horizon) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open forward curve file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty forward curve file: " + path);
  const auto header = split_csv_line(line);
  if (header.size() != 2) throw ParseError(path + ": forward curve needs two columns");
  const bool daily = (header[0] == "date" && header[1] == "value");
  if (!daily && !(header[0] == "x" && header[1] == "weight"))
    throw ParseError(path + ": header must be 'x,weight' or 'date,value'");
  std::vector<Atom> atoms;
  std::int64_t day0 = 0;
  bool have_day0 = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string ctx = path + ":" + std::to_string(lineno);
    if (cells.size() != 2) throw ParseError(ctx + ": wrong number of columns");
    if (daily) {
      const std::int64_t day = parse_iso_date(cells[0], ctx);
      if (!have_day0) {
        day0 = day;
        have_day0 = true;
      }
      const double value = parse_double(cells[1], ctx);
      if (value < 0.0) throw DataError(ctx + ": negative forward value");
      atoms.push_back({static_cast<double>(day - day0) / 365.0, value / 365.0});
    } else {
      const double x = parse_double(cells[0], ctx);
      const double w = parse_double(cells[1], ctx);
      if (w < 0.0) throw DataError(ctx + ": negative weight");
      atoms.push_back({x, w});
    }
  }
  return DiscreteMeasure(horizon, std::move(atoms));
}

struct QuoteRow {
  double strike;
  double price;
};

/// Quotes CSV with header `strike,price`.
inline std::vector<QuoteRow> load_quotes_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 2 || t.header[0] != "strike" || t.header[1] != "price")
    throw ParseError(path + ": header must be 'strike,price'");
  std::vector<QuoteRow> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    if (r[1] < 0.0) throw DataError(path + ": negative price");
    out.push_back({r[0], r[1]});
  }
  return out;
}

/// Per-path CSV `t,x,weight`: consecutive rows with the same t form one state.
inline void write_path_csv(const std::string& path, const MeasurePath& mp) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < mp.grid.times.size(); ++k) {
    for (const Atom& a : mp.states[k].atoms())
      rows.push_back({mp.grid.times[k], a.location, a.weight});
  }
  write_csv(path, {"t", "x", "weight"}, rows);
}

inline MeasurePath load_path_csv(const std::string& path, double horizon) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 3 || t.header[0] != "t" || t.header[1] != "x" || t.header[2] != "weight")
    throw ParseError(path + ": header must be 't,x,weight'");
  if (t.rows.empty()) throw DataError(path + ": no states");
  std::vector<double> times;
  std::vector<DiscreteMeasure> states;
  std::vector<Atom> current;
  double current_t = t.rows.front()[0];
  for (const auto& r : t.rows) {
    if (r[0] != current_t) {
      times.push_back(current_t);
      states.emplace_back(horizon, std::move(current));
      current.clear();
      current_t = r[0];
    }
    current.push_back({r[1], r[2]});
  }
  times.push_back(current_t);
  states.emplace_back(horizon, std::move(current));
  return MeasurePath{PathGrid(std::move(times)), std::move(states)};
}

// --- AlphaFunction JSON -------------------------------------------------------

inline nlohmann::json alpha_to_json(const AlphaFunction& a) {
  nlohmann::json j;
  j["horizon"] = a.horizon();
  if (!a.is_neural()) {
    j["grid"] = std::vector<double>(a.grid().begin(), a.grid().end());
    j["values"] = std::vector<double>(a.values().begin(), a.values().end());
    return j;
  }
  const MLPAlpha& net = a.network();
  const int w = net.width();
  auto p = net.params();
  const double* W1 = p.data();
  const double* b1 = p.data() + w;
  const double* W2 = p.data() + 2 * w;
  const double* b2 = p.data() + 2 * w + w * w;
  const double* W3 = p.data() + 3 * w + w * w;
  const double b3 = p[static_cast<std::size_t>(4 * w + w * w)];
  nlohmann::json layers = nlohmann::json::array();
  {
    nlohmann::json l;
    std::vector<std::vector<double>> W(static_cast<std::size_t>(w));
    for (int k = 0; k < w; ++k) W[static_cast<std::size_t>(k)] = {W1[k]};
    l["W"] = W;
    l["b"] = std::vector<double>(b1, b1 + w);
    l["act"] = "tanh";
    layers.push_back(l);
  }
  {
    nlohmann::json l;
    std::vector<std::vector<double>> W(static_cast<std::size_t>(w));
    for (int r = 0; r < w; ++r)
      W[static_cast<std::size_t>(r)] = std::vector<double>(W2 + r * w, W2 + (r + 1) * w);
    l["W"] = W;
    l["b"] = std::vector<double>(b2, b2 + w);
    l["act"] = "relu";
    layers.push_back(l);
  }
  {
    nlohmann::json l;
    l["W"] = std::vector<std::vector<double>>{std::vector<double>(W3, W3 + w)};
    l["b"] = std::vector<double>{b3};
    l["act"] = "relu";
    layers.push_back(l);
  }
  j["layers"] = layers;
  return j;
}

inline AlphaFunction alpha_from_json(const nlohmann::json& j) {
  if (!j.contains("horizon")) throw ParseError("alpha JSON: missing 'horizon'");
  const double horizon = j.at("horizon").get<double>();
  if (j.contains("grid")) {
    return AlphaFunction::piecewise_linear(horizon, j.at("grid").get<std::vector<double>>(),
                                           j.at("values").get<std::vector<double>>());
  }
  if (!j.contains("layers")) throw ParseError("alpha JSON: need 'grid'/'values' or 'layers'");
  const auto layers = j.at("layers");
  if (layers.size() != 3) throw ParseError("alpha JSON: expected exactly 3 layers");
  const auto W1 = layers[0].at("W").get<std::vector<std::vector<double>>>();
  const auto b1 = layers[0].at("b").get<std::vector<double>>();
  const auto W2 = layers[1].at("W").get<std::vector<std::vector<double>>>();
  const auto b2 = layers[1].at("b").get<std::vector<double>>();
  const auto W3 = layers[2].at("W").get<std::vector<std::vector<double>>>();
  const auto b3 = layers[2].at("b").get<std::vector<double>>();
  if (layers[0].at("act") != "tanh" || layers[1].at("act") != "relu" ||
      layers[2].at("act") != "relu")
    throw ParseError("alpha JSON: activations must be tanh, relu, relu");
  const int w = static_cast<int>(b1.size());
  if (static_cast<int>(W1.size()) != w || static_cast<int>(W2.size()) != w ||
      static_cast<int>(b2.size()) != w || W3.size() != 1 ||
      static_cast<int>(W3[0].size()) != w || b3.size() != 1)
    throw ParseError("alpha JSON: inconsistent layer shapes");
  MLPAlpha net(horizon, w);
  std::vector<double> p(static_cast<std::size_t>(net.param_count()));
  double* P = p.data();
  for (int k = 0; k < w; ++k) {
    if (W1[static_cast<std::size_t>(k)].size() != 1)
      throw ParseError("alpha JSON: layer 1 must have one input");
    P[k] = W1[static_cast<std::size_t>(k)][0];
    P[w + k] = b1[static_cast<std::size_t>(k)];
  }
  for (int r = 0; r < w; ++r) {
    if (static_cast<int>(W2[static_cast<std::size_t>(r)].size()) != w)
      throw ParseError("alpha JSON: layer 2 must be square");
    for (int c = 0; c < w; ++c) P[2 * w + r * w + c] = W2[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    P[2 * w + w * w + r] = b2[static_cast<std::size_t>(r)];
  }
  for (int k = 0; k < w; ++k) P[3 * w + w * w + k] = W3[0][static_cast<std::size_t>(k)];
  P[4 * w + w * w] = b3[0];
  net.set_params(p);
  return AlphaFunction::neural(std::move(net));
}

inline void save_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open JSON file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace mvhjm::io
