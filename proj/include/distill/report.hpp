#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace distill {

enum class ReportFormat { Csv, Json };

std::string to_string(ReportFormat format);
/// Accepts "csv" and "json"; throws ConfigError otherwise.
ReportFormat parse_report_format(const std::string& name);

struct ReportRow {
  std::string teacher;
  /// teacher, mlp, student-distilled or student-undistilled.
  std::string method;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  std::size_t runs = 0;
  std::string fingerprint;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// Header teacher,method,mean_acc,std_acc,runs,fingerprint then one line per
/// row. Doubles use the shortest round-trip form.
std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_json(const std::vector<ReportRow>& rows);
/// Throws ParseError.
std::vector<ReportRow> parse_report_json(const std::string& text);

/// Throws ContractError on empty rows and IoError naming the path.
void emit_report(const std::vector<ReportRow>& rows, ReportFormat format, const std::filesystem::path& path);

/// Mean and population standard deviation.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
};
Summary summarize(const std::vector<double>& values);

}  // namespace distill
