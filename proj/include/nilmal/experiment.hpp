#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nilmal/access.hpp"
#include "nilmal/acquisition.hpp"
#include "nilmal/config.hpp"
#include "nilmal/model.hpp"
#include "nilmal/windows.hpp"

namespace nilmal {

/// A network trained on one data composition together with its test errors.
struct TrainedModel {
  std::shared_ptr<const Seq2PointNet> net;
  Normalizer normalizer;
  std::size_t train_windows = 0;
  std::vector<double> rmse;  // watts, in the network's appliance order
  std::vector<double> epoch_loss;
};

/// Memo of trained models keyed by everything that determines them, so runs sharing a
/// (seed, data composition) train once. Thread-safe; concurrent requests for one key wait
/// for a single computation.
class TrainingCache {
 public:
  std::shared_ptr<const TrainedModel> get(const std::string& key, const std::function<TrainedModel()>& compute);
  std::size_t size() const;
  std::size_t hits() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_future<std::shared_ptr<const TrainedModel>>> entries_;
  std::size_t hits_ = 0;
};

/// One selection track: the single multi-appliance track, or one per appliance when
/// querying singly.
struct TrackRecord {
  std::string name;  // "all", or the appliance of a query-singly track
  std::optional<int> selected;
  ScoreTable scores;  // empty for random selection and at iteration 0
  Selection selection;
  std::vector<int> train_houses;
  std::size_t train_windows = 0;
};

struct IterationRecord {
  int iteration = 0;
  Minute cursor_day = 0;
  std::string cursor_date;
  std::vector<TrackRecord> tracks;
  std::map<std::string, double> rmse;  // watts
  std::optional<int> intersection;     // query-singly: houses queried by every track so far
};

struct ExperimentResult {
  AcquisitionFunction function = AcquisitionFunction::entropy;
  Strategy strategy = Strategy::uniform;
  std::uint64_t seed = 0;
  std::vector<std::string> appliances;
  std::vector<IterationRecord> records;
  bool stopped_early = false;

  /// Test RMSE of one appliance, one value per completed iteration.
  std::vector<double> curve(const std::string& appliance) const;
  std::string label() const;
};

struct BaselineResult {
  std::uint64_t seed = 0;
  std::map<std::string, double> rmse;
  std::size_t train_windows = 0;
};

struct RunOptions {
  TrainingCache* cache = nullptr;
  AccessLog* log = nullptr;
  std::filesystem::path checkpoint_dir;  // empty disables checkpoints
};

/// Training seed of iteration `iteration` for experiment seed `seed`.
std::uint64_t iteration_seed(std::uint64_t seed, int iteration);

/// `config` must already be resolved against `dataset`.
ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& dataset, const Timeline& timeline,
                                std::uint64_t seed, const RunOptions& options = {});
BaselineResult run_total_baseline(const ExperimentConfig& config, const Dataset& dataset, const Timeline& timeline,
                                  std::uint64_t seed, const RunOptions& options = {});

struct SweepJob {
  AcquisitionFunction function = AcquisitionFunction::entropy;
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::vector<ExperimentResult> runs;  // in job order
  std::vector<BaselineResult> totals;  // in seed order
};

/// Independent experiments (and total baselines for `total_seeds`) on `threads` workers sharing
/// one training cache. Results do not depend on the thread count. `on_run` is called, under a
/// lock, as each run finishes.
SweepResult run_sweep(const ExperimentConfig& config, const Dataset& dataset, const Timeline& timeline,
                      const std::vector<SweepJob>& jobs, const std::vector<std::uint64_t>& total_seeds, int threads,
                      TrainingCache& cache, const std::function<void(const ExperimentResult&)>& on_run = {});

double rmse(std::span<const double> predictions, std::span<const double> targets);

/// Smallest iteration whose RMSE is within `fraction` above the total baseline.
std::optional<int> sensors_to_reach(double fraction, std::span<const double> curve, double total_rmse);

/// Reads that broke the no-leakage rules: any appliance read of a test house outside
/// evaluation, of a pool house before its query date (per track), or during acquisition.
std::vector<std::string> audit_access(std::span<const AccessRecord> records, const ExperimentConfig& config,
                                      const ExperimentResult& result);

}  // namespace nilmal
