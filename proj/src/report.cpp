#include "distill/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "distill/error.hpp"

namespace distill {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string to_string(ReportFormat format) { return format == ReportFormat::Csv ? "csv" : "json"; }

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + name + "' (expected csv or json)");
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "teacher,method,mean_acc,std_acc,runs,fingerprint\n";
  for (const ReportRow& r : rows) {
    out += csv_field(r.teacher) + ',' + csv_field(r.method) + ',' + format_double(r.mean_acc) + ',' +
           format_double(r.std_acc) + ',' + std::to_string(r.runs) + ',' + csv_field(r.fingerprint) + '\n';
  }
  return out;
}

std::string report_json(const std::vector<ReportRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ReportRow& r : rows) {
    arr.push_back({{"teacher", r.teacher},
                   {"method", r.method},
                   {"mean_acc", r.mean_acc},
                   {"std_acc", r.std_acc},
                   {"runs", r.runs},
                   {"fingerprint", r.fingerprint}});
  }
  return arr.dump(2) + "\n";
}

std::vector<ReportRow> parse_report_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("report: expected an array");
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& o = doc[i];
    const std::string at = "report[" + std::to_string(i) + "]";
    try {
      ReportRow r;
      r.teacher = o.at("teacher").get<std::string>();
      r.method = o.at("method").get<std::string>();
      r.mean_acc = o.at("mean_acc").get<double>();
      r.std_acc = o.at("std_acc").get<double>();
      r.runs = o.at("runs").get<std::size_t>();
      r.fingerprint = o.at("fingerprint").get<std::string>();
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(at + ": " + e.what());
    }
  }
  return rows;
}

void emit_report(const std::vector<ReportRow>& rows, ReportFormat format, const std::filesystem::path& path) {
  if (rows.empty()) throw ContractError("emit_report: no rows");
  const std::string text = format == ReportFormat::Csv ? report_csv(rows) : report_json(rows);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open report path " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

}  // namespace distill
