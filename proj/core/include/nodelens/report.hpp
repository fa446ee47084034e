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

// Tabular text (tab separated, header row first) and SVG line charts.
// Numbers are written in scientific notation with 17 significant digits.

#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace nodelens {

using Cell = std::variant<std::string, double, long long>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
};

/// Throws Error(kInvalidArgument) on an empty table.
std::string to_tsv(const Table& table);
/// Inverse of to_tsv for numeric cells: every cell parsed as a double when
/// possible, otherwise kept as text.
Table parse_tsv(const std::string& text);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<Series> series;
};

/// Self-contained SVG document. Throws when no series has points.
std::string to_svg(const LineChart& chart);

void emit_tsv(const Table& table, const std::filesystem::path& path);
void emit_svg(const LineChart& chart, const std::filesystem::path& path);

}  // namespace nodelens
