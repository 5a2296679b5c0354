#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nilmal/config.hpp"
#include "nilmal/experiment.hpp"

namespace nilmal {

Json record_json(const ExperimentResult& result, const IterationRecord& record);

/// records.jsonl, summary.csv and one scores_iterNN.csv per scored iteration.
void write_run(const std::filesystem::path& dir, const ExperimentResult& result);
void write_resolved_config(const std::filesystem::path& dir, const ExperimentConfig& config);
void write_baseline(const std::filesystem::path& dir, const BaselineResult& result);

/// Mean and sample standard deviation over runs of one series; iteration -1 marks the total baseline.
struct ComparisonRow {
  std::string series;
  std::string strategy;
  std::string appliance;
  int iteration = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int count = 0;
};

std::vector<ComparisonRow> compare(std::span<const ExperimentResult> runs, std::span<const BaselineResult> totals);
void write_comparison(const std::filesystem::path& path, std::span<const ComparisonRow> rows);
std::vector<ComparisonRow> read_comparison(const std::filesystem::path& path);

struct SensorCount {
  std::string series;
  std::string strategy;
  std::string appliance;
  double fraction = 0.0;
  double threshold = 0.0;     // watts
  std::optional<int> sensors; // empty when never reached
};

/// Sensors each mean curve needs to come within each fraction above the mean total baseline.
std::vector<SensorCount> sensor_counts(std::span<const ComparisonRow> rows, std::span<const double> fractions);
void write_sensor_counts(const std::filesystem::path& path, std::span<const SensorCount> counts);

/// One plot_<appliance>.csv per appliance: iteration, series, mean, lower, upper (mean +- one
/// standard deviation). The total baseline is repeated at every iteration as series "total".
std::vector<std::filesystem::path> export_plots(std::span<const ComparisonRow> rows, const std::filesystem::path& dir);

}  // namespace nilmal
