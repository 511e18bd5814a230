#include "cilforge/evaluator.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "cilforge/errors.hpp"

namespace cilforge {

double round2(double x) { return std::floor(x * 100.0 + 0.5 + 1e-9) / 100.0; }

double stage_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty() || labels.empty()) throw EvaluationError("stage_accuracy: empty input");
  if (predictions.size() != labels.size()) {
    throw EvaluationError("stage_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  long long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  const auto total = static_cast<long long>(labels.size());
  // floor(10000 * correct / total + 1/2), in hundredths of a percent.
  const long long hundredths = (20000 * correct + total) / (2 * total);
  return static_cast<double>(hundredths) / 100.0;
}

Summary summarize(std::span<const double> s) {
  if (s.empty()) throw EvaluationError("summarize: no stages");
  Summary out;
  out.average = round2(std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
  out.final = s.back();
  return out;
}

std::string report_row(const std::string& name, double average, double final) {
  return fmt::format("{}  {:.2f}  {:.2f}", name, average, final);
}

std::vector<double> RunReport::stage_accuracies() const {
  std::vector<double> s;
  for (const auto& st : stages) s.push_back(st.accuracy);
  return s;
}

void RunReport::finalize() {
  const Summary sum = summarize(stage_accuracies());
  average = sum.average;
  final = sum.final;
}

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : r.stages) {
    stages.push_back({{"task", st.task},
                      {"seen_classes", st.seen_classes},
                      {"accuracy", st.accuracy},
                      {"per_task", st.per_task}});
  }
  return {{"model_name", r.model_name},
          {"display_name", r.display_name},
          {"config", r.config},
          {"stages", stages},
          {"average_accuracy", r.average},
          {"final_accuracy", r.final},
          {"provenance", r.provenance},
          {"wall_clock_seconds", r.wall_clock_seconds}};
}

RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    r.model_name = j.at("model_name").get<std::string>();
    r.display_name = j.value("display_name", r.model_name);
    r.config = j.value("config", nlohmann::json::object());
    for (const auto& st : j.at("stages")) {
      r.stages.push_back({st.at("task").get<std::size_t>(), st.at("seen_classes").get<int>(),
                          st.at("accuracy").get<double>(), st.value("per_task", std::vector<double>{})});
    }
    r.average = j.at("average_accuracy").get<double>();
    r.final = j.at("final_accuracy").get<double>();
    r.provenance = j.value("provenance", nlohmann::json::object());
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run report: ") + e.what());
  }
  return r;
}

std::string results_csv(const RunReport& r) {
  std::string out = "stage,seen_classes,accuracy\n";
  for (const auto& st : r.stages) out += fmt::format("{},{},{:.2f}\n", st.task, st.seen_classes, st.accuracy);
  out += fmt::format("avg,{:.2f}\n", r.average);
  out += fmt::format("final,{:.2f}\n", r.final);
  return out;
}

std::string curve_csv(const RunReport& r) {
  std::string out = "method,stage,seen_classes,accuracy\n";
  for (const auto& st : r.stages) {
    out += fmt::format("{},{},{},{:.2f}\n", r.display_name, st.task, st.seen_classes, st.accuracy);
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace

void emit_report(const RunReport& report, const std::filesystem::path& dir,
                 std::span<const ReportFormat> formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::vector<ReportFormat> all = {ReportFormat::kJson, ReportFormat::kCsv};
  for (ReportFormat f : formats.empty() ? std::span<const ReportFormat>(all) : formats) {
    if (f == ReportFormat::kJson) {
      write_file(dir / "results.json", to_json(report).dump(2) + "\n");
    } else {
      write_file(dir / "results.csv", results_csv(report));
      write_file(dir / "curve.csv", curve_csv(report));
    }
  }
}

}  // namespace cilforge
