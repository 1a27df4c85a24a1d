#pragma once

#include <exception>
#include <filesystem>
#include <string>
#include <string_view>

#include "ucf/cli/config.hpp"

namespace ucf::cli {

// Artifact file names inside the output directory.
inline constexpr const char* kDatasetFile = "dataset.csv";
inline constexpr const char* kStage1File = "stage1.ckpt";
inline constexpr const char* kStage2File = "stage2.ckpt";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kEmbeddingsFile = "embeddings.csv";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kScoresFile = "scores.csv";
inline constexpr const char* kProjectionFile = "projection.csv";
inline constexpr const char* kProjectionSvgFile = "projection.svg";
inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kRocSvgFile = "roc.svg";
inline constexpr const char* kConfigFile = "config.resolved";
inline constexpr const char* kManifestFile = "manifest.json";

struct Options {
  std::filesystem::path out = "out";
  bool quiet = false;
};

// generate | train | embed | classify | project | report | pipeline. Each
// command reads its inputs from and writes its artifacts to `opts.out`, then
// refreshes manifest.json. Throws ucf::Error subclasses on failure.
void run_command(std::string_view command, const RunConfig& cfg, const Options& opts);

// 2 missing input, 3 configuration, 4 numerical, 1 anything else.
int exit_code_for(const std::exception& e);

// Single-line machine-parseable description:
//   ucf: error kind=<kind> [path=<path>] message="<text>"
std::string error_line(const std::exception& e);

// Full command-line entry point; returns the process exit code.
int main_entry(int argc, char** argv);

}  // namespace ucf::cli
