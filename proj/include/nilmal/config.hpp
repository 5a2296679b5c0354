#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nilmal/acquisition.hpp"
#include "nilmal/csv.hpp"
#include "nilmal/data.hpp"
#include "nilmal/json_reader.hpp"
#include "nilmal/model.hpp"
#include "nilmal/synth.hpp"
#include "nilmal/uncertainty.hpp"

namespace nilmal {

inline constexpr int kConfigVersion = 1;

enum class AcquisitionFunction { entropy, mutual_information, random };
enum class Strategy { singly, uniform, rank, round_robin };

AcquisitionFunction parse_function(std::string_view text);
Strategy parse_strategy(std::string_view text);
const char* to_string(AcquisitionFunction f);
const char* to_string(Strategy s);

/// Exactly one of `csv` and `synth` is set.
struct DataConfig {
  std::string csv;
  CsvSchema schema;
  std::optional<SynthConfig> synth;
};

struct UncertaintyConfig {
  int passes = 25;
  int samples = 1000;
  MiFormula mi_formula = MiFormula::corrected;
};

struct AcquisitionConfig {
  AcquisitionFunction function = AcquisitionFunction::entropy;
  Strategy strategy = Strategy::uniform;
  AggregationWindow window;
  std::string window_start;  // ISO dates of a static window, inclusive
  std::string window_end;
  std::vector<std::string> round_robin_order;  // empty means the appliance order
  int stride_minutes = 15;
};

struct LoopConfig {
  std::string start;       // ISO date; empty means the first day of data
  int base_days = 10;
  int cadence_days = 5;
  int budget = 5;
  std::string test_start;  // empty means the day the last iteration's data ends
  int test_days = 10;
  int train_stride_minutes = 1;
  int test_stride_minutes = 5;
  bool deterministic_test = false;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> thresholds{0.10, 0.20, 0.25};
  bool checkpoints = false;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  DataConfig data;
  SplitSpec split;
  std::vector<std::string> appliances;  // empty means every appliance in the data
  Architecture model;                   // `appliances` is filled per model
  TrainConfig train;                    // `seed` is derived per training run
  UncertaintyConfig uncertainty;
  AcquisitionConfig acquisition;
  LoopConfig loop;
  std::string output_dir = "results";
};

/// Strict parse; throws ConfigError listing every problem found.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, defaults included.
Json to_json(const ExperimentConfig& config);

/// Checks that need no data. Empty when valid.
std::vector<std::string> config_violations(const ExperimentConfig& config);

/// Day indices (from the dataset epoch) the experiment runs on.
struct Timeline {
  Minute start_day = 0;
  Minute base_end_day = 0;
  int cadence_days = 0;
  int budget = 0;
  Minute test_start_day = 0;
  Minute test_end_day = 0;

  /// Cursor of iteration i >= 1.
  Minute cursor(int iteration) const { return base_end_day + static_cast<Minute>(iteration - 1) * cadence_days; }
  /// End (exclusive) of the data used for training at iteration i.
  Minute horizon(int iteration) const { return base_end_day + static_cast<Minute>(iteration) * cadence_days; }
};

Dataset load_dataset(const DataConfig& config);

/// Fill in data-dependent defaults (dates, appliances, round-robin order, static window days)
/// and check the config against the dataset. Throws ConfigError listing every problem.
Timeline resolve(ExperimentConfig& config, const Dataset& dataset);

std::string format_date(const Dataset& dataset, Minute day);

}  // namespace nilmal
