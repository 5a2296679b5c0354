#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "nilmal/config.hpp"
#include "nilmal/experiment.hpp"

namespace nilmal::testing {

/// Small but complete experiment: 9 houses over 14 days and a narrow network, so a full
/// loop finishes in seconds.
inline Json small_config_json() {
  return Json::parse(R"({
    "version": 1,
    "data": {"synth": {"houses": 9, "days": 14, "seed": 3}},
    "split": {"train": [1, 2], "test": [3, 4], "pool": [5, 6, 7, 8]},
    "model": {"input_length": 31, "conv_channels": [4, 4], "conv_kernels": [5, 3], "dense_units": 16},
    "train": {"epochs": 2, "batch_size": 64, "stride_minutes": 45},
    "uncertainty": {"passes": 4, "samples": 40},
    "acquisition": {"function": "entropy", "strategy": "uniform", "stride_minutes": 120,
                    "window": {"mode": "dynamic", "half_width_days": 3, "kernel": "triangle"}},
    "loop": {"base_days": 4, "cadence_days": 2, "budget": 3, "test_days": 2, "test_stride_minutes": 90}
  })");
}

struct Prepared {
  ExperimentConfig config;
  Dataset dataset;
  Timeline timeline;
};

inline Prepared prepare(const Json& j) {
  Prepared p;
  p.config = parse_config(j);
  p.dataset = load_dataset(p.config.data);
  p.timeline = resolve(p.config, p.dataset);
  return p;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nilmal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace nilmal::testing
