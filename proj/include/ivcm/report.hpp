#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ivcm {

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> y;
  std::string label;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<double> reference_lines;  ///< horizontal, drawn dotted
  int width = 640;
  int height = 400;
};

/// Self-contained SVG line chart with axes, ticks and a legend.
std::string render_svg(const PlotSpec& spec);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  ///< -1 when absent
  std::vector<double> numbers(const std::string& name) const;
};

CsvTable read_csv_table(const std::filesystem::path& path);

enum class ReportFormat { kCsv, kSvg };
ReportFormat report_format_from_string(const std::string& name);

/// Renders the artifacts of a simulate or fit run into run_dir/report.
/// Returns the written file names. InvalidArgument when required inputs are
/// missing.
std::vector<std::string> write_report(const std::filesystem::path& run_dir, ReportFormat format);

}  // namespace ivcm
