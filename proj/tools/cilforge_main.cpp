// Command-line entry point: runs one learner on one stream from a JSON config.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cilforge/errors.hpp"
#include "cilforge/harness.hpp"

namespace {

constexpr int kUsageError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning runner"};
  std::string config_path;
  std::string out_dir = "results";
  std::string resume;
  std::string log_level = "info";
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--out", out_dir, "Directory for reports and checkpoints")->capture_default_str();
  app.add_option("--resume", resume, "Checkpoint to continue from");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->capture_default_str()
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (!std::filesystem::is_regular_file(config_path)) {
    std::cerr << "error: config file not found: " << config_path << "\n";
    return kUsageError;
  }
  if (!resume.empty() && !std::filesystem::is_regular_file(resume)) {
    std::cerr << "error: checkpoint not found: " << resume << "\n";
    return kUsageError;
  }

  cilforge::RunConfig config;
  try {
    config = cilforge::parse_config(config_path);
  } catch (const cilforge::Error& e) {
    std::cerr << "error: " << config_path << ": " << e.what() << "\n";
    return kUsageError;
  }

  try {
    cilforge::RunOptions options;
    options.out_dir = out_dir;
    if (!resume.empty()) options.resume_from = resume;
    const cilforge::RunReport report = cilforge::run(config, options);
    std::cout << cilforge::report_row(report.display_name, report.average, report.final) << "\n";
  } catch (const cilforge::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
