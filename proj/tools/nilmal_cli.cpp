// nilmal: active-learning experiments for load disaggregation.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nilmal/config.hpp"
#include "nilmal/csv.hpp"
#include "nilmal/errors.hpp"
#include "nilmal/experiment.hpp"
#include "nilmal/results.hpp"
#include "nilmal/synth.hpp"
#include "nilmal/verify.hpp"

namespace fs = std::filesystem;
using namespace nilmal;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;

/// "0-4,7" -> {0, 1, 2, 3, 4, 7}
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      const auto dash = item.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw ConfigError(fmt::format("empty seed range '{}'", item));
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("malformed seed list entry '{}'", item));
    }
  }
  return out;
}

int thread_count() {
  if (const char* env = std::getenv("NILMAL_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::logic_error&) {
    }
    throw ConfigError(fmt::format("NILMAL_THREADS must be a positive integer, got '{}'", env));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

struct Loaded {
  ExperimentConfig config;
  Dataset dataset;
  Timeline timeline;
};

Loaded load(const std::string& path, const std::string& output) {
  Loaded l;
  l.config = load_config(path);
  if (!output.empty()) l.config.output_dir = output;
  l.dataset = load_dataset(l.config.data);
  l.timeline = resolve(l.config, l.dataset);
  return l;
}

int cmd_run(const std::string& path, const std::string& output, std::optional<std::uint64_t> seed) {
  Loaded l = load(path, output);
  if (seed) l.config.loop.seed = *seed;
  const fs::path dir = l.config.output_dir;
  write_resolved_config(dir, l.config);
  RunOptions options;
  if (l.config.loop.checkpoints) options.checkpoint_dir = dir / "checkpoints";
  const auto result = run_experiment(l.config, l.dataset, l.timeline, l.config.loop.seed, options);
  write_run(dir, result);
  fmt::print("wrote {} iterations to {}\n", result.records.size(), dir.string());
  return 0;
}

int cmd_baseline(const std::string& path, const std::string& output, std::optional<std::uint64_t> seed) {
  Loaded l = load(path, output);
  if (seed) l.config.loop.seed = *seed;
  const fs::path dir = l.config.output_dir;
  write_resolved_config(dir, l.config);
  const auto result = run_total_baseline(l.config, l.dataset, l.timeline, l.config.loop.seed);
  write_baseline(dir, result);
  for (const auto& [appliance, value] : result.rmse) fmt::print("{}: {:.3f} W\n", appliance, value);
  return 0;
}

int cmd_sweep(const std::string& path, const std::string& output, const std::vector<std::string>& functions,
              const std::string& seeds_text, const std::string& random_seeds_text, bool total) {
  if (functions.empty()) throw ConfigError("sweep needs at least one acquisition function");
  Loaded l = load(path, output);
  const auto seeds = seeds_text.empty() ? l.config.loop.seeds : parse_seed_list(seeds_text);
  const auto random_seeds = random_seeds_text.empty() ? seeds : parse_seed_list(random_seeds_text);
  if (seeds.empty() || random_seeds.empty()) throw ConfigError("sweep needs at least one seed");
  std::vector<SweepJob> jobs;
  for (const auto& f : functions) {
    const auto function = parse_function(f);
    for (auto s : function == AcquisitionFunction::random ? random_seeds : seeds) jobs.push_back({function, s});
  }
  l.config.loop.seeds = seeds;
  const fs::path dir = l.config.output_dir;
  write_resolved_config(dir, l.config);

  TrainingCache cache;
  auto sweep = run_sweep(l.config, l.dataset, l.timeline, jobs, total ? seeds : std::vector<std::uint64_t>{},
                         thread_count(), cache, [&](const ExperimentResult& r) { write_run(dir / r.label(), r); });
  for (const auto& t : sweep.totals) write_baseline(dir / fmt::format("total_seed{}", t.seed), t);
  const auto rows = compare(sweep.runs, sweep.totals);
  write_comparison(dir / "comparison.csv", rows);
  if (total) write_sensor_counts(dir / "sensors.csv", sensor_counts(rows, l.config.loop.thresholds));
  fmt::print("{} runs, {} trainings ({} shared); comparison in {}\n", sweep.runs.size(), cache.size(), cache.hits(),
             (dir / "comparison.csv").string());
  return 0;
}

int cmd_synth(const std::string& config_path, const std::string& output, std::optional<std::uint64_t> seed) {
  SynthConfig config;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError(fmt::format("cannot open {}", config_path));
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(fmt::format("{}: {}", config_path, e.what()));
    }
    config = synth_config_from_json(j);
  }
  if (seed) config.seed = *seed;
  const auto problems = config.violations();
  if (!problems.empty()) throw ConfigError("invalid synth config: " + problems.front());
  write_csv(synthesize(config, config.seed), fs::path(output));
  fmt::print("wrote {} houses x {} days to {}\n", config.houses, config.days, output);
  return 0;
}

int cmd_verify(const std::string& fault_text) {
  const Fault fault = parse_fault(fault_text);
  bool ok = true;
  for (const auto& r : run_verify(fault)) {
    fmt::print("{} {}: {} ({:.1f} s)\n", r.passed ? "PASS" : "FAIL", r.name, r.detail, r.seconds);
    ok = ok && r.passed;
  }
  return ok ? 0 : kRuntimeFailure;
}

int cmd_export(const std::string& input, const std::string& output) {
  fs::path table = input;
  if (fs::is_directory(table)) table /= "comparison.csv";
  const fs::path dir = output.empty() ? table.parent_path() / "plots" : fs::path(output);
  for (const auto& p : export_plots(read_comparison(table), dir)) fmt::print("{}\n", p.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active learning for non-intrusive load monitoring"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress");

  std::string config_path;
  std::string output;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run one active-learning experiment");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("-o,--output", output, "Output directory (overrides output_dir)");
  run->add_option("-s,--seed", seed, "Experiment seed (overrides loop.seed)");

  std::vector<std::string> functions{"entropy", "mi", "random"};
  std::string seeds_text;
  std::string random_seeds_text;
  bool total = false;
  auto* sweep = app.add_subcommand("sweep", "Run acquisition functions over seeds and compare them");
  sweep->add_option("config", config_path, "Experiment config (JSON)")->required();
  sweep->add_option("-o,--output", output, "Output directory (overrides output_dir)");
  sweep->add_option("-f,--functions", functions, "Acquisition functions: entropy, mi, random")->delimiter(',');
  sweep->add_option("--seeds", seeds_text, "Seeds, e.g. 0-4 (default loop.seeds)");
  sweep->add_option("--random-seeds", random_seeds_text, "Seeds for the random function (default --seeds)");
  sweep->add_flag("--total-baseline", total, "Add total-baseline rows and sensor counts");

  auto* baseline = app.add_subcommand("baseline-total", "Train on every train and pool house");
  baseline->add_option("config", config_path, "Experiment config (JSON)")->required();
  baseline->add_option("-o,--output", output, "Output directory (overrides output_dir)");
  baseline->add_option("-s,--seed", seed, "Seed (overrides loop.seed)");

  std::string synth_config;
  auto* synth = app.add_subcommand("synth", "Generate synthetic household data as CSV");
  synth->add_option("-c,--config", synth_config, "Generator config (JSON)");
  synth->add_option("-o,--output", output, "CSV file to write")->required();
  synth->add_option("-s,--seed", seed, "Generator seed (overrides the config)");

  std::string fault = "none";
  auto* verify = app.add_subcommand("verify", "Run the built-in numerical checks");
  verify->add_option("--inject-fault", fault, "Deliberate defect: gradient, moments, mi or kernel");

  std::string input;
  auto* plots = app.add_subcommand("export-plots", "Write per-appliance plot series from a sweep");
  plots->add_option("input", input, "Sweep directory or comparison.csv")->required();
  plots->add_option("-o,--output", output, "Directory for plot CSVs (default <input>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (*run) return cmd_run(config_path, output, seed);
    if (*sweep) return cmd_sweep(config_path, output, functions, seeds_text, random_seeds_text, total);
    if (*baseline) return cmd_baseline(config_path, output, seed);
    if (*synth) return cmd_synth(synth_config, output, seed);
    if (*verify) return cmd_verify(fault);
    if (*plots) return cmd_export(input, output);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}
