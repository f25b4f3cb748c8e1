#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "apnpql/run.hpp"

namespace apnpql::curves {

struct RunCurve {
  std::string dir;
  std::string algorithm;
  std::uint64_t seed = 0;
  std::vector<cli::MetricsRow> rows;
};

struct CurvePoint {
  std::int64_t env_steps = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  int runs = 0;  // runs contributing to this point
};

struct AlgorithmCurve {
  std::string algorithm;
  int runs = 0;
  std::vector<CurvePoint> points;  // ascending env_steps
};

/// Reads config.json and metrics.csv from every directory. Directories
/// without readable metrics are skipped with one warning line each.
std::vector<RunCurve> load_runs(const std::vector<std::string>& dirs, std::vector<std::string>& warnings);

/// Success rate per algorithm: mean and min/max over runs at every eval point.
/// Known algorithms come first in their canonical order.
std::vector<AlgorithmCurve> aggregate(const std::vector<RunCurve>& runs);

void write_merged_csv(std::ostream& out, const std::vector<RunCurve>& runs);
void write_curves_csv(std::ostream& out, const std::vector<AlgorithmCurve>& curves);

/// Fixed 640x400 viewport; one polyline per algorithm and a shaded min/max
/// band when an algorithm has more than one run.
std::string render_svg(const std::vector<AlgorithmCurve>& curves);

struct ExportResult {
  int runs = 0;
  std::vector<std::string> warnings;
  std::vector<AlgorithmCurve> curves;
};

/// Writes merged.csv, curves.csv and curves.svg into out_dir. An empty list
/// of directories is a usage error.
ExportResult export_curves(const std::vector<std::string>& dirs, const std::string& out_dir);

}  // namespace apnpql::curves
