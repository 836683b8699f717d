#include "occludox/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

#include "occludox/error.hpp"
#include "occludox/pnm.hpp"

namespace occludox {
namespace {

constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
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

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

bool parse_double(std::string_view s, double& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

}  // namespace

std::string format_value(Real v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("cannot format value");
  return std::string(buf, p);
}

std::string report_csv(const EvaluationReport& report) {
  if (report.rows.empty()) throw ContractError("report has no rows");
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& r : report.rows) {
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw ContractError("report accuracy outside [0,1]");
    out += r.defense + ',' + r.attack + ',' + r.param + ',' + format_value(r.value) + ',' + fixed(r.accuracy, 4) + '\n';
  }
  return out;
}

void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  write_text(path, report_csv(report));
}

void write_report_meta(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "{\n  \"config_hash\": \"" << report.config_hash << "\",\n  \"rows\": " << report.rows.size()
     << ",\n  \"seed\": " << report.seed << ",\n  \"version\": \"" << report.version << "\"\n}\n";
  write_text(path, os.str());
}

std::vector<EvaluationRow> parse_report_csv(std::string_view text) {
  std::vector<EvaluationRow> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string where = "report line " + std::to_string(line_no) + ": ";
    if (line_no == 1) {
      if (line != kReportHeader) throw FormatError(where + "expected header '" + std::string(kReportHeader) + "'", line_start);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t s = 0;
    while (true) {
      const std::size_t comma = line.find(',', s);
      fields.push_back(line.substr(s, comma == std::string_view::npos ? std::string_view::npos : comma - s));
      if (comma == std::string_view::npos) break;
      s = comma + 1;
    }
    if (fields.size() != 5) {
      throw FormatError(where + "expected 5 fields, got " + std::to_string(fields.size()), line_start);
    }
    EvaluationRow r;
    r.defense = fields[0];
    r.attack = fields[1];
    r.param = fields[2];
    if (r.defense.empty()) throw FormatError(where + "empty defense id", line_start);
    if (!parse_double(fields[3], r.value)) throw FormatError(where + "bad value '" + std::string(fields[3]) + "'", line_start);
    if (!parse_double(fields[4], r.accuracy) || r.accuracy < 0.0 || r.accuracy > 1.0) {
      throw FormatError(where + "bad accuracy '" + std::string(fields[4]) + "'", line_start);
    }
    rows.push_back(std::move(r));
  }
  if (line_no == 0) throw FormatError("report line 1: missing header", 0);
  return rows;
}

std::string render_svg(const std::vector<EvaluationRow>& rows) {
  if (rows.empty()) throw ContractError("report has no data rows to plot");
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;

  double lo = rows.front().value, hi = rows.front().value;
  for (const auto& r : rows) {
    lo = std::min(lo, r.value);
    hi = std::max(hi, r.value);
  }
  if (hi == lo) {
    lo -= 1.0;
    hi += 1.0;
  }
  auto px = [&](double v) { return kLeft + (v - lo) / (hi - lo) * plot_w; };
  auto py = [&](double a) { return kTop + (1.0 - a) * plot_h; };

  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvaluationRow*>> series;
  for (const auto& r : rows) {
    if (!series.count(r.defense)) order.push_back(r.defense);
    series[r.defense].push_back(&r);
  }

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
     << ' ' << kH << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << fixed(kLeft + plot_w / 2, 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << xml_escape(rows.front().attack) << "</text>\n";
  // Axes.
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
     << kTop + plot_h << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double a = t / 4.0;
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << fixed(py(a) + 4, 2) << "\" text-anchor=\"end\" font-size=\"11\">"
       << fixed(a, 2) << "</text>\n";
    const double v = lo + (hi - lo) * a;
    os << "<text x=\"" << fixed(px(v), 2) << "\" y=\"" << kTop + plot_h + 16
       << "\" text-anchor=\"middle\" font-size=\"11\">" << xml_escape(format_value(v)) << "</text>\n";
  }
  os << "<text x=\"" << fixed(kLeft + plot_w / 2, 2) << "\" y=\"" << kH - 16
     << "\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(rows.front().param) << "</text>\n";
  os << "<text x=\"18\" y=\"" << fixed(kTop + plot_h / 2, 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
     << "transform=\"rotate(-90 18 " << fixed(kTop + plot_h / 2, 2) << ")\">accuracy</text>\n";

  for (std::size_t i = 0; i < order.size(); ++i) {
    const char* colour = kColours[i % std::size(kColours)];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    const auto& pts = series[order[i]];
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k) os << ' ';
      os << fixed(px(pts[k]->value), 2) << ',' << fixed(py(pts[k]->accuracy), 2);
    }
    os << "\"/>\n";
    const double ly = kTop + 16.0 * static_cast<double>(i);
    os << "<text x=\"" << kLeft + plot_w + 12 << "\" y=\"" << fixed(ly + 4, 2) << "\" font-size=\"12\" fill=\"" << colour
       << "\">" << xml_escape(order[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace occludox
