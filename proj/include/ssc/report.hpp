#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"

namespace ssc {

struct InvariantResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

using ReportEntries = std::vector<std::pair<std::string, std::string>>;

struct RunReport {
  ReportEntries header;  // free-form run facts, emitted first in insertion order
  std::optional<LossReport> losses;
  std::optional<MetricReport> metrics;
  std::vector<InvariantResult> invariants;
};

/// `key: value` lines. Sections appear in a fixed order (header, loss.*,
/// metric.*, iou.<class> for the 19 semantic classes in benchmark column
/// order, invariant.*). Reals use %.17g; undefined values print "n/a".
std::string format_report(const RunReport& report);
void emit_report(const RunReport& report, const std::filesystem::path& path);

// Lines starting with '#' and blank lines are skipped. Throws FormatError
// (offset = line number) on a line without ": ".
ReportEntries parse_report(const std::string& text);

std::string format_real(double v);

}  // namespace ssc
