#include "ivcm/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "ivcm/error.hpp"
#include "ivcm/io.hpp"
#include "ivcm/pipeline.hpp"

namespace ivcm {

namespace {

std::string xml_escape(const std::string& s) {
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
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string tick_label(double v, double step) {
  std::ostringstream os;
  const int digits = step >= 1.0 ? 0 : static_cast<int>(std::ceil(-std::log10(step) - 1e-9));
  os << std::fixed << std::setprecision(std::max(0, digits)) << (std::abs(v) < 1e-12 * step ? 0.0 : v);
  return os.str();
}

double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double nice = f < 1.5 ? 1.0 : (f < 3.0 ? 2.0 : (f < 7.0 ? 5.0 : 10.0));
  return nice * mag;
}

const char* palette(std::size_t k) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return colors[k % 6];
}

void require(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kInvalidArgument, "missing run artifact " + path.string());
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  const double left = 64, right = 20, top = 36, bottom = 52;
  const double w = spec.width, h = spec.height;
  const double pw = w - left - right, ph = h - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : spec.series) {
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, s.y[k]);
      y1 = std::max(y1, s.y[k]);
    }
  }
  for (double r : spec.reference_lines) {
    y0 = std::min(y0, r);
    y1 = std::max(y1, r);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(spec.title)
     << "</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"#444\"/>\n";

  const double xs = nice_step(x1 - x0, 6), ys = nice_step(y1 - y0, 5);
  for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9 * xs; t += xs) {
    os << "<line x1=\"" << num(px(t)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(px(t)) << "\" y2=\""
       << num(top + ph + 5) << "\" stroke=\"#444\"/>";
    os << "<text x=\"" << num(px(t)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">"
       << tick_label(t, xs) << "</text>\n";
  }
  for (double v = std::ceil(y0 / ys) * ys; v <= y1 + 1e-9 * ys; v += ys) {
    os << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(left) << "\" y2=\""
       << num(py(v)) << "\" stroke=\"#444\"/>";
    os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << tick_label(v, ys)
       << "</text>\n";
  }
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(h - 12) << "\" text-anchor=\"middle\">"
     << xml_escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << xml_escape(spec.y_label) << "</text>\n";

  for (double r : spec.reference_lines) {
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(r)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
       << num(py(r)) << "\" stroke=\"#777\" stroke-dasharray=\"2,3\"/>\n";
  }
  for (const auto& s : spec.series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.6\"";
    if (s.dashed) os << " stroke-dasharray=\"6,4\"";
    os << " points=\"";
    bool first = true;
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      os << (first ? "" : " ") << num(px(s.x[k])) << ',' << num(py(s.y[k]));
      first = false;
    }
    os << "\"/>\n";
  }
  double ly = top + 14;
  for (const auto& s : spec.series) {
    if (s.label.empty()) continue;
    const double lx = left + pw - 130;
    os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(lx + 24) << "\" y2=\"" << num(ly - 4)
       << "\" stroke=\"" << s.color << "\" stroke-width=\"1.6\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
       << "/>";
    os << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly) << "\">" << xml_escape(s.label) << "</text>\n";
    ly += 16;
  }
  os << "</svg>\n";
  return os.str();
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::vector<double> CsvTable::numbers(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw Error(ErrorCode::kParse, "missing column '" + name + "'");
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(io::parse_double(r.at(static_cast<std::size_t>(c))));
  return out;
}

CsvTable read_csv_table(const std::filesystem::path& path) {
  require(path);
  const auto text = io::read_file(path);
  std::istringstream is(text);
  std::string line;
  CsvTable t;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = io::split_csv_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "svg") return ReportFormat::kSvg;
  throw Error(ErrorCode::kInvalidArgument, "format must be csv or svg");
}

namespace {

std::vector<std::string> simulate_report(const std::filesystem::path& run_dir, const std::filesystem::path& out,
                                         ReportFormat format) {
  const auto table = read_csv_table(run_dir / "coverage.csv");
  const int cm = table.column("method"), cc = table.column("coefficient"), ct = table.column("t"),
            cv = table.column("coverage");
  if (cm < 0 || cc < 0 || ct < 0 || cv < 0) throw Error(ErrorCode::kParse, "coverage.csv has unexpected columns");
  // coefficient -> method -> (t, coverage percent)
  std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> data;
  std::vector<std::string> method_order;
  for (const auto& r : table.rows) {
    const auto& method = r[static_cast<std::size_t>(cm)];
    if (std::find(method_order.begin(), method_order.end(), method) == method_order.end()) method_order.push_back(method);
    auto& cell = data[r[static_cast<std::size_t>(cc)]][method];
    cell.first.push_back(io::parse_double(r[static_cast<std::size_t>(ct)]));
    cell.second.push_back(100.0 * io::parse_double(r[static_cast<std::size_t>(cv)]));
  }
  std::vector<std::string> files;
  for (const auto& [coef, by_method] : data) {
    if (format == ReportFormat::kSvg) {
      PlotSpec plot;
      plot.title = "Pointwise coverage of 95% intervals, " + coef + "(t)";
      plot.x_label = "t";
      plot.y_label = "coverage (%)";
      plot.reference_lines = {95.0};
      for (std::size_t m = 0; m < method_order.size(); ++m) {
        const auto it = by_method.find(method_order[m]);
        if (it == by_method.end()) continue;
        plot.series.push_back({it->second.first, it->second.second, method_order[m], palette(m), false});
      }
      const auto name = "coverage_" + coef + ".svg";
      io::write_file(out / name, render_svg(plot));
      files.push_back(name);
    } else {
      std::ostringstream os;
      os << "t";
      for (const auto& m : method_order) os << ',' << m;
      os << "\n";
      const auto& ref = by_method.begin()->second.first;
      for (std::size_t k = 0; k < ref.size(); ++k) {
        os << io::format_double(ref[k]);
        for (const auto& m : method_order) {
          const auto it = by_method.find(m);
          os << ',' << (it != by_method.end() && k < it->second.second.size() ? io::format_double(it->second.second[k]) : "");
        }
        os << "\n";
      }
      const auto name = "coverage_" + coef + ".csv";
      io::write_file(out / name, os.str());
      files.push_back(name);
    }
  }
  io::write_file(out / "summary.txt", io::read_file(run_dir / "summary.txt"));
  files.push_back("summary.txt");
  return files;
}

std::vector<std::string> fit_report(const std::filesystem::path& run_dir, const std::filesystem::path& out,
                                    ReportFormat format) {
  const auto bands = read_csv_table(run_dir / "bands.csv");
  const int cn = bands.column("coefficient_name");
  if (cn < 0) throw Error(ErrorCode::kParse, "bands.csv has unexpected columns");
  std::vector<std::string> names;
  for (const auto& r : bands.rows) {
    const auto& n = r[static_cast<std::size_t>(cn)];
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  }
  const auto t = bands.numbers("t"), est = bands.numbers("estimate"), lo = bands.numbers("lower"),
             hi = bands.numbers("upper");
  const double alpha = bands.rows.empty() ? 0.05 : bands.numbers("alpha").front();
  const std::string level = io::format_double(100.0 * (1.0 - alpha));
  std::vector<std::string> files;
  for (const auto& name : names) {
    PlotSeries e{{}, {}, "estimate", "#1f77b4", false}, l{{}, {}, level + "% pointwise", "#1f77b4", true},
        u{{}, {}, "", "#1f77b4", true};
    std::ostringstream os;
    os << "t,estimate,lower,upper\n";
    for (std::size_t k = 0; k < bands.rows.size(); ++k) {
      if (bands.rows[k][static_cast<std::size_t>(cn)] != name) continue;
      e.x.push_back(t[k]);
      e.y.push_back(est[k]);
      l.x.push_back(t[k]);
      l.y.push_back(lo[k]);
      u.x.push_back(t[k]);
      u.y.push_back(hi[k]);
      os << io::format_double(t[k]) << ',' << io::format_double(est[k]) << ',' << io::format_double(lo[k]) << ','
         << io::format_double(hi[k]) << "\n";
    }
    if (format == ReportFormat::kSvg) {
      PlotSpec plot;
      plot.title = "Coefficient " + name;
      plot.x_label = "t";
      plot.y_label = "beta(t)";
      plot.series = {e, l, u};
      io::write_file(out / ("coefficient_" + name + ".svg"), render_svg(plot));
      files.push_back("coefficient_" + name + ".svg");
    } else {
      io::write_file(out / ("coefficient_" + name + ".csv"), os.str());
      files.push_back("coefficient_" + name + ".csv");
    }
  }
  if (std::filesystem::exists(run_dir / "fpca_eigenvalues.csv")) {
    const auto ev = read_csv_table(run_dir / "fpca_eigenvalues.csv");
    const auto comp = ev.numbers("component"), val = ev.numbers("eigenvalue"), fve = ev.numbers("fve");
    std::ostringstream os;
    os << "component,eigenvalue,fve\n";
    for (std::size_t k = 0; k < comp.size(); ++k) {
      if (val[k] <= 0.0) break;
      os << static_cast<int>(comp[k]) << ',' << io::format_double(val[k]) << ',' << io::format_double(fve[k]) << "\n";
    }
    io::write_file(out / "scree.csv", os.str());
    files.push_back("scree.csv");
    if (format == ReportFormat::kSvg) {
      const auto ef = read_csv_table(run_dir / "fpca_eigenfunctions.csv");
      const auto grid = ef.numbers("t");
      PlotSpec plot;
      plot.title = "Estimated eigenfunctions";
      plot.x_label = "t";
      plot.y_label = "phi(t)";
      for (std::size_t c = 1; c < ef.header.size(); ++c) {
        plot.series.push_back({grid, ef.numbers(ef.header[c]), ef.header[c], palette(c - 1), false});
      }
      io::write_file(out / "eigenfunctions.svg", render_svg(plot));
      files.push_back("eigenfunctions.svg");
    }
  }
  return files;
}

}  // namespace

std::vector<std::string> write_report(const std::filesystem::path& run_dir, ReportFormat format) {
  const auto manifest = RunManifest::load(run_dir);
  const auto out = run_dir / "report";
  std::filesystem::create_directories(out);
  for (const auto& entry : std::filesystem::directory_iterator(out)) {
    if (entry.is_regular_file()) std::filesystem::remove(entry.path());
  }
  const std::string started = utc_timestamp();
  std::vector<std::string> files;
  if (manifest.command == "simulate") {
    files = simulate_report(run_dir, out, format);
  } else if (manifest.command == "fit") {
    files = fit_report(run_dir, out, format);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "cannot report on a '" + manifest.command + "' run");
  }
  RunManifest m;
  m.command = "report";
  m.config_text = "run = " + manifest.config_hash + "\nformat = " + (format == ReportFormat::kSvg ? "svg" : "csv") + "\n";
  m.config_hash = config_hash(m.config_text);
  m.seed = manifest.seed;
  m.version = version_string();
  m.started = started;
  m.finished = utc_timestamp();
  m.files = files;
  io::write_file(out / "manifest.json", m.to_json());
  files.push_back("manifest.json");
  return files;
}

}  // namespace ivcm
