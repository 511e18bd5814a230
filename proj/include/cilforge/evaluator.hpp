#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cilforge {

// Round half up to two decimals.
double round2(double x);

// 100 * correct / total, rounded half up to two decimals. The rounding is
// done in integer arithmetic so e.g. 2/3 gives exactly 66.67.
double stage_accuracy(std::span<const int> predictions, std::span<const int> labels);

struct Summary {
  double average = 0.0;  // mean over stages
  double final = 0.0;    // last stage
};

Summary summarize(std::span<const double> stage_accuracies);

// "<name>  <avg>  <final>" with two decimals.
std::string report_row(const std::string& name, double average, double final);

struct StageResult {
  std::size_t task = 0;
  int seen_classes = 0;
  double accuracy = 0.0;             // over all seen classes
  std::vector<double> per_task;      // accuracy on each task j <= task
};

struct RunReport {
  std::string model_name;
  std::string display_name;
  nlohmann::json config;
  std::vector<StageResult> stages;
  double average = 0.0;
  double final = 0.0;
  nlohmann::json provenance = nlohmann::json::object();
  double wall_clock_seconds = 0.0;

  std::vector<double> stage_accuracies() const;
  // Recomputes average/final from the stages.
  void finalize();
};

nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

// `stage,seen_classes,accuracy` rows plus `avg,<A>` and `final,<A_B>`.
std::string results_csv(const RunReport& report);
// `method,stage,seen_classes,accuracy` for plotting accuracy curves.
std::string curve_csv(const RunReport& report);

enum class ReportFormat { kJson, kCsv };

// Writes results.json / results.csv (+ curve.csv with csv) into `dir`.
void emit_report(const RunReport& report, const std::filesystem::path& dir,
                 std::span<const ReportFormat> formats = {});

}  // namespace cilforge
