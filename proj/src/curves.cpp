#include "apnpql/curves.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace apnpql::curves {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 130.0;
constexpr double kTop = 20.0;
constexpr double kBottom = 50.0;

std::string color_for(const std::string& algorithm) {
  if (algorithm == "ap-npql") return "#d62728";
  if (algorithm == "ap-mpo") return "#1f77b4";
  if (algorithm == "ap-sac") return "#2ca02c";
  if (algorithm == "sac") return "#7f7f7f";
  return "#9467bd";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

int algorithm_rank(const std::string& algorithm) {
  for (std::size_t i = 0; i < cli::kAlgorithms.size(); ++i) {
    if (cli::kAlgorithms[i] == algorithm) return static_cast<int>(i);
  }
  return static_cast<int>(cli::kAlgorithms.size());
}

}  // namespace

std::vector<RunCurve> load_runs(const std::vector<std::string>& dirs, std::vector<std::string>& warnings) {
  std::vector<RunCurve> runs;
  for (const auto& dir : dirs) {
    RunCurve run;
    run.dir = dir;
    try {
      auto cfg = cli::load_config((fs::path(dir) / "config.json").string(), {});
      run.algorithm = cfg.algorithm;
      run.seed = cfg.seed;
      run.rows = cli::load_metrics((fs::path(dir) / "metrics.csv").string());
    } catch (const std::exception& e) {
      warnings.push_back("skipping " + dir + ": " + e.what());
      continue;
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

std::vector<AlgorithmCurve> aggregate(const std::vector<RunCurve>& runs) {
  std::map<std::pair<int, std::string>, std::vector<const RunCurve*>> groups;
  for (const auto& r : runs) groups[{algorithm_rank(r.algorithm), r.algorithm}].push_back(&r);
  std::vector<AlgorithmCurve> out;
  for (const auto& [key, members] : groups) {
    AlgorithmCurve curve;
    curve.algorithm = key.second;
    curve.runs = static_cast<int>(members.size());
    std::map<std::int64_t, std::vector<double>> by_step;
    for (const auto* r : members) {
      for (const auto& row : r->rows) by_step[row.env_steps].push_back(row.success_rate);
    }
    for (const auto& [steps, values] : by_step) {
      CurvePoint p;
      p.env_steps = steps;
      p.runs = static_cast<int>(values.size());
      double sum = 0.0;
      for (double v : values) sum += v;
      p.mean = sum / static_cast<double>(values.size());
      p.min = *std::min_element(values.begin(), values.end());
      p.max = *std::max_element(values.begin(), values.end());
      curve.points.push_back(p);
    }
    out.push_back(std::move(curve));
  }
  return out;
}

void write_merged_csv(std::ostream& out, const std::vector<RunCurve>& runs) {
  out << "algorithm,seed," << cli::kMetricsHeader << '\n';
  for (const auto& r : runs) {
    for (const auto& row : r.rows) out << r.algorithm << ',' << r.seed << ',' << cli::format_metrics_row(row) << '\n';
  }
}

void write_curves_csv(std::ostream& out, const std::vector<AlgorithmCurve>& curves) {
  out << "algorithm,env_steps,runs,mean,min,max\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      char buf[128];
      std::snprintf(buf, sizeof buf, ",%lld,%d,%.17g,%.17g,%.17g\n", static_cast<long long>(p.env_steps), p.runs,
                    p.mean, p.min, p.max);
      out << c.algorithm << buf;
    }
  }
}

std::string render_svg(const std::vector<AlgorithmCurve>& curves) {
  std::int64_t max_steps = 1;
  for (const auto& c : curves) {
    for (const auto& p : c.points) max_steps = std::max(max_steps, p.env_steps);
  }
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto x = [&](std::int64_t steps) { return kLeft + plot_w * static_cast<double>(steps) / static_cast<double>(max_steps); };
  auto y = [&](double rate) { return kTop + plot_h * (1.0 - rate); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\" "
         "font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double rate = i / 4.0;
    svg << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(y(rate)) << "\" x2=\"" << fmt(kLeft + plot_w) << "\" y2=\""
        << fmt(y(rate)) << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << fmt(kLeft - 6) << "\" y=\"" << fmt(y(rate) + 4) << "\" text-anchor=\"end\">" << fmt(rate)
        << "</text>\n";
    auto steps = max_steps * i / 4;
    svg << "<text x=\"" << fmt(x(steps)) << "\" y=\"" << fmt(kTop + plot_h + 16) << "\" text-anchor=\"middle\">"
        << steps << "</text>\n";
  }
  svg << "<rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\"" << fmt(plot_w) << "\" height=\""
      << fmt(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << fmt(kLeft + plot_w / 2) << "\" y=\"" << fmt(kHeight - 12)
      << "\" text-anchor=\"middle\">environment steps</text>\n";
  svg << "<text x=\"14\" y=\"" << fmt(kTop + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << fmt(kTop + plot_h / 2) << ")\">success rate</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const std::string color = color_for(c.algorithm);
    if (c.runs > 1 && !c.points.empty()) {
      svg << "<polygon class=\"band\" data-algorithm=\"" << c.algorithm << "\" fill=\"" << color
          << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& p : c.points) svg << fmt(x(p.env_steps)) << ',' << fmt(y(p.max)) << ' ';
      for (auto it = c.points.rbegin(); it != c.points.rend(); ++it) {
        svg << fmt(x(it->env_steps)) << ',' << fmt(y(it->min)) << (std::next(it) == c.points.rend() ? "" : " ");
      }
      svg << "\"/>\n";
    }
    svg << "<polyline class=\"mean\" data-algorithm=\"" << c.algorithm << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < c.points.size(); ++k) {
      svg << (k ? " " : "") << fmt(x(c.points[k].env_steps)) << ',' << fmt(y(c.points[k].mean));
    }
    svg << "\"/>\n";
    double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    double lx = kLeft + plot_w + 12;
    svg << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(lx + 20) << "\" y2=\"" << fmt(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(lx + 26) << "\" y=\"" << fmt(ly + 4) << "\">" << c.algorithm << " (" << c.runs
        << ")</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

ExportResult export_curves(const std::vector<std::string>& dirs, const std::string& out_dir) {
  if (dirs.empty()) throw cli::UsageError("no run directories given");
  ExportResult result;
  auto runs = load_runs(dirs, result.warnings);
  result.runs = static_cast<int>(runs.size());
  result.curves = aggregate(runs);
  fs::create_directories(out_dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(fs::path(out_dir) / name);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(out_dir) / name).string());
    out << text;
  };
  std::ostringstream merged;
  write_merged_csv(merged, runs);
  write("merged.csv", merged.str());
  std::ostringstream curves;
  write_curves_csv(curves, result.curves);
  write("curves.csv", curves.str());
  write("curves.svg", render_svg(result.curves));
  return result;
}

}  // namespace apnpql::curves
