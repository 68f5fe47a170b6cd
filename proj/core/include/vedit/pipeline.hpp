// Stage driver: each stage reads the artifacts of earlier stages from the
// output directory and writes its own atomically.
#pragma once

#include "vedit/bench.hpp"
#include "vedit/config.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace vedit {

enum ExitStatus : int { kExitOk = 0, kExitFailure = 1, kExitMissingInput = 2, kExitNumerical = 3 };

/// Runs one stage. Diagnostics go to `log` and to <out>/run.log.
int run_stage(Stage stage, const RunConfig& cfg, std::ostream& log);

struct Benchmark {
  std::vector<bench::BenchmarkGroup> groups;
  bench::LocalityPool locality;
  std::map<std::string, std::string> header;
};

void save_benchmark(const std::string& path, const Benchmark& b);
Benchmark load_benchmark(const std::string& path);

/// Provenance entries stamped into every artifact.
std::map<std::string, std::string> provenance(const RunConfig& cfg);

struct CurveSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (GR, LR)
  std::vector<std::string> labels;
};

/// GR on the x axis, LR on the y axis, one polyline per series.
std::string grlr_svg(const std::vector<CurveSeries>& series);

}  // namespace vedit
