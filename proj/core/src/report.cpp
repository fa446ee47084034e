/* Copyright 2026 The NodeLens Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "nodelens/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "nodelens/common.hpp"
#include "nodelens/io.hpp"

namespace nodelens {

namespace {

std::string cell_text(const Cell& cell) {
  if (const auto* s = std::get_if<std::string>(&cell)) return *s;
  if (const auto* d = std::get_if<double>(&cell)) return format_double(*d);
  return std::to_string(std::get<long long>(cell));
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
  (void)ec;
  return std::string(buf, ptr);
}

std::string tick_label(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 3);
  (void)ec;
  return std::string(buf, ptr);
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw_invalid("table row has " + std::to_string(row.size()) + " cells, expected " +
                  std::to_string(columns.size()));
  }
  rows.push_back(std::move(row));
}

std::string to_tsv(const Table& table) {
  if (table.columns.empty() || table.rows.empty()) throw_invalid("report is empty");
  std::string out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out += '\t';
    out += table.columns[c];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += '\t';
      out += cell_text(row[c]);
    }
    out += '\n';
  }
  return out;
}

Table parse_tsv(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto at = line.find('\t', start);
      fields.push_back(line.substr(start, at - start));
      if (at == std::string::npos) break;
      start = at + 1;
    }
    if (header) {
      table.columns = fields;
      header = false;
      continue;
    }
    std::vector<Cell> row;
    for (const auto& f : fields) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec == std::errc() && ptr == f.data() + f.size() && !f.empty()) {
        row.emplace_back(v);
      } else {
        row.emplace_back(f);
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string to_svg(const LineChart& chart) {
  auto tx = [&](double v) { return chart.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return chart.log_y ? std::log10(v) : v; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::size_t points = 0;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw_invalid("chart series '" + s.name + "' is ragged");
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      const double X = tx(s.x[k]), Y = ty(s.y[k]);
      if (!std::isfinite(X) || !std::isfinite(Y)) continue;
      x0 = std::min(x0, X);
      x1 = std::max(x1, X);
      y0 = std::min(y0, Y);
      y1 = std::max(y1, Y);
      ++points;
    }
  }
  if (points == 0) throw_invalid("chart has no finite points");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  constexpr double kW = 640, kH = 420, kLeft = 80, kRight = 160, kTop = 40, kBottom = 60;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double X) { return kLeft + (X - x0) / (x1 - x0) * pw; };
  auto py = [&](double Y) { return kTop + ph - (Y - y0) / (y1 - y0) * ph; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(kW / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape_xml(chart.title) << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double X = x0 + (x1 - x0) * k / 4.0, Y = y0 + (y1 - y0) * k / 4.0;
    const double xv = chart.log_x ? std::pow(10.0, X) : X;
    const double yv = chart.log_y ? std::pow(10.0, Y) : Y;
    svg << "<text x=\"" << num(px(X)) << "\" y=\"" << num(kTop + ph + 18)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(xv) << "</text>\n"
        << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(Y) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(yv) << "</text>\n";
  }
  svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 16)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << escape_xml(chart.x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 18 " << num(kTop + ph / 2) << ")\">" << escape_xml(chart.y_label)
      << "</text>\n";
  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const auto& series = chart.series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t k = 0; k < series.x.size(); ++k) {
      const double X = tx(series.x[k]), Y = ty(series.y[k]);
      if (!std::isfinite(X) || !std::isfinite(Y)) continue;
      svg << (first ? "" : " ") << num(px(X)) << ',' << num(py(Y));
      first = false;
    }
    svg << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << num(kLeft + pw + 10) << "\" y1=\"" << num(ly) << "\" x2=\""
        << num(kLeft + pw + 30) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << num(kLeft + pw + 34) << "\" y=\"" << num(ly + 4)
        << "\" font-size=\"11\">" << escape_xml(series.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_tsv(const Table& table, const std::filesystem::path& path) {
  write_text_atomic(path, to_tsv(table));
}

void emit_svg(const LineChart& chart, const std::filesystem::path& path) {
  write_text_atomic(path, to_svg(chart));
}

}  // namespace nodelens
