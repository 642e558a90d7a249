#pragma once

#include <string>
#include <vector>

namespace metaflow {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "METAFLOW_OUTPUT_ROOT";

/// Exit codes of the command-line tool.
enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumerical = 3 };

/// Entry point of the `metaflow` tool: simulate, analyze, proxy and report.
/// Returns the process exit code; never calls exit().
int run_cli(const std::vector<std::string>& args);

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Static line chart; non-finite points (and non-positive ones on log axes) are skipped.
std::string svg_chart(const std::string& title, const std::vector<SvgSeries>& series, bool log_x, bool log_y);

}  // namespace metaflow
