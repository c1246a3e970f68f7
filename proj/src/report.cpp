#include "ssc/report.hpp"

#include <cstdio>
#include <sstream>

#include "ssc/config.hpp"
#include "ssc/errors.hpp"
#include "ssc/labels.hpp"

namespace ssc {

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string opt_real(const std::optional<double>& v) { return v ? format_real(*v) : "n/a"; }

}  // namespace

std::string format_report(const RunReport& report) {
  std::ostringstream os;
  os << "# ssc report v1\n";
  for (const auto& [k, v] : report.header) os << k << ": " << v << "\n";
  if (report.losses) {
    const auto& l = *report.losses;
    os << "loss.total: " << format_real(l.total) << "\n"
       << "loss.scal_geo: " << format_real(l.final_parts.scal_geo) << "\n"
       << "loss.scal_sem: " << format_real(l.final_parts.scal_sem) << "\n"
       << "loss.ce: " << format_real(l.final_parts.ce) << "\n"
       << "loss.aux_count: " << l.aux_totals.size() << "\n";
    for (std::size_t i = 0; i < l.aux_totals.size(); ++i) {
      os << "loss.aux." << i << ": " << format_real(l.aux_totals[i]) << "\n";
    }
  }
  if (report.metrics) {
    const auto& m = *report.metrics;
    os << "metric.iou: " << opt_real(m.occupancy_iou) << "\n"
       << "metric.miou: " << opt_real(m.miou) << "\n";
    for (const auto& cls : semantic_classes()) {
      const std::optional<double> iou =
          cls.id < m.class_iou.size() ? m.class_iou[cls.id] : std::nullopt;
      os << "iou." << cls.name << ": " << opt_real(iou) << "\n";
    }
  }
  if (!report.invariants.empty()) {
    std::size_t failed = 0;
    for (const auto& r : report.invariants) failed += r.passed ? 0 : 1;
    os << "invariant.count: " << report.invariants.size() << "\n"
       << "invariant.failed: " << failed << "\n";
    for (const auto& r : report.invariants) {
      os << "invariant." << r.name << ": " << (r.passed ? "pass" : "fail");
      if (!r.detail.empty()) os << " (" << r.detail << ")";
      os << "\n";
    }
  }
  return os.str();
}

void emit_report(const RunReport& report, const std::filesystem::path& path) {
  write_text_file(path, format_report(report));
}

ReportEntries parse_report(const std::string& text) {
  ReportEntries out;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto sep = line.find(": ");
    if (sep == std::string::npos || sep == 0) {
      throw FormatError("report line without 'key: value'", line_no);
    }
    out.emplace_back(line.substr(0, sep), line.substr(sep + 2));
  }
  return out;
}

}  // namespace ssc
