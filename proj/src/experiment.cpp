#include "nilmal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <atomic>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nilmal/errors.hpp"
#include "nilmal/uncertainty.hpp"

namespace nilmal {

using Eigen::Index;

namespace {

constexpr Index kPredictBatch = 256;

struct Track {
  std::string name;
  std::vector<std::string> appliances;
  std::set<int> train;
  std::set<int> pool;
  std::map<int, Minute> joined;  // queried house -> query day
  std::shared_ptr<const TrainedModel> model;
};

std::vector<TrainingSegment> segments_of(const Track& track, const Timeline& t, Minute horizon_day) {
  std::vector<TrainingSegment> out;
  for (int h : track.train) {
    auto it = track.joined.find(h);
    const Minute from = it == track.joined.end() ? t.start_day : it->second;
    out.push_back({h, TimeRange::days(from, horizon_day)});
  }
  return out;
}

std::string cache_key(const ExperimentConfig& c, const std::vector<std::string>& appliances,
                      const std::vector<TrainingSegment>& segments, const Timeline& t, std::uint64_t train_seed) {
  Json key = {{"seed", train_seed},
              {"appliances", appliances},
              {"model", to_json(c)["model"]},
              {"train", to_json(c)["train"]},
              {"passes", c.uncertainty.passes},
              {"deterministic_test", c.loop.deterministic_test},
              {"test", {c.split.test, t.test_start_day, t.test_end_day, c.loop.test_stride_minutes}}};
  Json segs = Json::array();
  for (const auto& s : segments) segs.push_back({s.house_id, s.targets.begin, s.targets.end});
  key["segments"] = segs;
  return key.dump();
}

// k x n denormalized predictions: ensemble means of MC passes, or one pass without dropout.
Eigen::MatrixXd predict_watts(const Seq2PointNet& net, const Normalizer& norm, const WindowSet& windows,
                              const ExperimentConfig& c, std::uint64_t seed) {
  const Index n = static_cast<Index>(windows.size());
  const Index k = static_cast<Index>(net.appliance_count());
  Eigen::MatrixXd out(k, n);
  Eigen::MatrixXd inputs;
  std::vector<std::size_t> idx;
  for (Index start = 0; start < n; start += kPredictBatch) {
    const Index len = std::min(kPredictBatch, n - start);
    idx.resize(static_cast<std::size_t>(len));
    for (Index j = 0; j < len; ++j) idx[static_cast<std::size_t>(j)] = static_cast<std::size_t>(start + j);
    windows.fill_inputs(idx, inputs);
    Eigen::MatrixXd mean;
    if (c.loop.deterministic_test) {
      mean = forward_batch(net, inputs, nullptr).mean;
    } else {
      std::vector<Rng> rngs;
      rngs.reserve(idx.size());
      for (std::size_t i : idx) {
        rngs.push_back(keyed_rng({seed, stream_tag("test"), static_cast<std::uint64_t>(windows.house_id(i)),
                                  static_cast<std::uint64_t>(windows.midpoint(i))}));
      }
      mean = mc_predict_batch(net, inputs, c.uncertainty.passes, rngs).ensemble_mean();
    }
    for (Index a = 0; a < k; ++a) {
      for (Index j = 0; j < len; ++j) {
        out(a, start + j) = norm.denormalize_target(static_cast<std::size_t>(a), mean(a, j));
      }
    }
  }
  return out;
}

TrainedModel fit_and_evaluate(const ExperimentConfig& c, const Dataset& data, const Timeline& t,
                              const std::vector<std::string>& appliances,
                              const std::vector<TrainingSegment>& segments, std::uint64_t train_seed,
                              AccessLog* log) {
  const int length = c.model.input_length;
  const Minute half = (length - 1) / 2;

  GuardedView training(data, Phase::training, log);
  for (const auto& s : segments) {
    training.allow_mains(s.house_id);
    training.allow_appliances(s.house_id, s.targets);
  }
  TrainedModel result;
  result.normalizer = fit_normalizer(training, segments, appliances);
  WindowSet windows(length, appliances, true);
  for (const auto& s : segments) {
    const TimeRange cover = data.coverage(s.house_id);
    const TimeRange inputs = TimeRange{s.targets.begin - half, s.targets.end}.intersect(cover);
    windows.append(training, s.house_id, inputs, result.normalizer, c.loop.train_stride_minutes);
  }
  if (windows.empty()) throw ValidationError("no training windows for this iteration");
  result.train_windows = windows.size();

  Architecture arch = c.model;
  arch.appliances = appliances;
  auto net = std::make_shared<Seq2PointNet>(Seq2PointNet::initialized(arch, train_seed));
  TrainConfig tc = c.train;
  tc.seed = train_seed;
  result.epoch_loss = train(*net, windows, tc).epoch_loss;
  result.net = net;

  GuardedView evaluation(data, Phase::evaluation, log);
  const TimeRange test_range = TimeRange::days(t.test_start_day, t.test_end_day);
  WindowSet test(length, appliances, true);
  for (int h : c.split.test) {
    evaluation.allow_mains(h);
    evaluation.allow_appliances(h, test_range);
    test.append(evaluation, h, test_range.intersect(data.coverage(h)), result.normalizer,
                c.loop.test_stride_minutes);
  }
  if (test.empty()) throw ValidationError("the test window holds no complete input window");
  const Eigen::MatrixXd pred = predict_watts(*net, result.normalizer, test, c, train_seed);
  for (std::size_t a = 0; a < appliances.size(); ++a) {
    std::vector<double> target(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) target[i] = test.target_watts(i, a);
    std::vector<double> p(pred.row(static_cast<Index>(a)).begin(), pred.row(static_cast<Index>(a)).end());
    result.rmse.push_back(rmse(p, target));
  }
  return result;
}

std::shared_ptr<const TrainedModel> obtain(const ExperimentConfig& c, const Dataset& data, const Timeline& t,
                                           const std::vector<std::string>& appliances,
                                           const std::vector<TrainingSegment>& segments, std::uint64_t train_seed,
                                           const RunOptions& options) {
  auto compute = [&] { return fit_and_evaluate(c, data, t, appliances, segments, train_seed, options.log); };
  // A cache hit skips the reads, so audited runs always train.
  if (options.cache == nullptr || options.log != nullptr) return std::make_shared<const TrainedModel>(compute());
  return options.cache->get(cache_key(c, appliances, segments, t, train_seed), compute);
}

ScoreTable score_pool(const ExperimentConfig& c, const Dataset& data, const Track& track, Minute today,
                      std::uint64_t train_seed, AccessLog* log) {
  const auto& net = *track.model->net;
  const auto& norm = track.model->normalizer;
  const auto& window = c.acquisition.window;
  const bool mi = c.acquisition.function == AcquisitionFunction::mutual_information;
  const std::size_t k = track.appliances.size();

  GuardedView acquisition(data, Phase::acquisition, log);
  for (int h : track.pool) acquisition.allow_mains(h);

  ScoreTable table(std::vector<int>(track.pool.begin(), track.pool.end()), track.appliances);
  Eigen::MatrixXd inputs;
  std::vector<std::size_t> idx;
  for (int h : track.pool) {
    const TimeRange range = window.range(today).intersect(data.coverage(h));
    WindowSet points = make_input_windows(acquisition, h, range, c.model.input_length, norm,
                                          c.acquisition.stride_minutes);
    std::vector<std::vector<TimedScore>> scores(k);
    const Index n = static_cast<Index>(points.size());
    for (Index start = 0; start < n; start += kPredictBatch) {
      const Index len = std::min(kPredictBatch, n - start);
      idx.resize(static_cast<std::size_t>(len));
      std::vector<Rng> rngs;
      for (Index j = 0; j < len; ++j) {
        idx[static_cast<std::size_t>(j)] = static_cast<std::size_t>(start + j);
        rngs.push_back(keyed_rng({train_seed, stream_tag("pool"), static_cast<std::uint64_t>(h),
                                  static_cast<std::uint64_t>(points.midpoint(static_cast<std::size_t>(start + j)))}));
      }
      points.fill_inputs(idx, inputs);
      const McBatch batch = mc_predict_batch(net, inputs, c.uncertainty.passes, rngs);
      for (Index j = 0; j < len; ++j) {
        const Minute minute = points.midpoint(static_cast<std::size_t>(start + j));
        for (std::size_t a = 0; a < k; ++a) {
          const GaussianMixture mix = batch.mixture(static_cast<Index>(a), j);
          double s;
          if (mi) {
            Rng r = keyed_rng({train_seed, stream_tag("mi"), static_cast<std::uint64_t>(h),
                               static_cast<std::uint64_t>(minute), a});
            s = mutual_information_score(mix, c.uncertainty.samples, r, c.uncertainty.mi_formula);
          } else {
            s = entropy_score(mix, norm.scale(a));
          }
          scores[a].push_back({minute, s});
        }
      }
    }
    for (std::size_t a = 0; a < k; ++a) {
      table.at(h, track.appliances[a]) = aggregate_house_score(scores[a], window, today, h);
    }
  }
  return table;
}

std::vector<int> sorted(const std::set<int>& s) { return {s.begin(), s.end()}; }

}  // namespace

std::shared_ptr<const TrainedModel> TrainingCache::get(const std::string& key,
                                                        const std::function<TrainedModel()>& compute) {
  std::promise<std::shared_ptr<const TrainedModel>> promise;
  std::shared_future<std::shared_ptr<const TrainedModel>> future;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      ++hits_;
      future = it->second;
    } else {
      future = promise.get_future().share();
      entries_.emplace(key, future);
      owner = true;
    }
  }
  if (!owner) return future.get();
  try {
    promise.set_value(std::make_shared<const TrainedModel>(compute()));
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mutex_);
    entries_.erase(key);
  }
  return future.get();
}

std::size_t TrainingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::size_t TrainingCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::vector<double> ExperimentResult::curve(const std::string& appliance) const {
  std::vector<double> out;
  for (const auto& r : records) out.push_back(r.rmse.at(appliance));
  return out;
}

std::string ExperimentResult::label() const {
  return fmt::format("{}_{}_seed{}", to_string(function), to_string(strategy), seed);
}

std::uint64_t iteration_seed(std::uint64_t seed, int iteration) {
  Rng r = keyed_rng({seed, stream_tag("retrain"), static_cast<std::uint64_t>(iteration)});
  return r();
}

double rmse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw ShapeError(fmt::format("rmse: {} predictions for {} targets", predictions.size(), targets.size()));
  }
  if (targets.empty()) throw ShapeError("rmse: no samples");
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = targets[i] - predictions[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(targets.size()));
}

std::optional<int> sensors_to_reach(double fraction, std::span<const double> curve, double total_rmse) {
  const double threshold = (1.0 + fraction) * total_rmse;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i] <= threshold) return static_cast<int>(i);
  }
  return std::nullopt;
}

ExperimentResult run_experiment(const ExperimentConfig& c, const Dataset& data, const Timeline& t,
                                std::uint64_t seed, const RunOptions& options) {
  ExperimentResult result;
  result.function = c.acquisition.function;
  result.strategy = c.acquisition.strategy;
  result.seed = seed;
  result.appliances = c.appliances;

  std::vector<Track> tracks;
  if (c.acquisition.strategy == Strategy::singly) {
    for (const auto& a : c.appliances) tracks.push_back({a, {a}, c.split.train, c.split.pool, {}, nullptr});
  } else {
    tracks.push_back({"all", c.appliances, c.split.train, c.split.pool, {}, nullptr});
  }
  std::vector<std::set<int>> queried(tracks.size());

  auto train_all = [&](int iteration, IterationRecord& rec) {
    const std::uint64_t train_seed = iteration_seed(seed, iteration);
    for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
      auto& track = tracks[ti];
      const auto segs = segments_of(track, t, t.horizon(iteration));
      track.model = obtain(c, data, t, track.appliances, segs, train_seed, options);
      for (std::size_t a = 0; a < track.appliances.size(); ++a) rec.rmse[track.appliances[a]] = track.model->rmse[a];
      rec.tracks[ti].train_houses = sorted(track.train);
      rec.tracks[ti].train_windows = track.model->train_windows;
      if (!options.checkpoint_dir.empty()) {
        std::filesystem::create_directories(options.checkpoint_dir);
        track.model->net->save(options.checkpoint_dir / fmt::format("iter{:02}_{}.ckpt", iteration, track.name));
      }
    }
    if (c.acquisition.strategy == Strategy::singly) {
      std::set<int> common = queried.front();
      for (const auto& q : queried) {
        std::set<int> next;
        std::set_intersection(common.begin(), common.end(), q.begin(), q.end(), std::inserter(next, next.begin()));
        common = std::move(next);
      }
      rec.intersection = static_cast<int>(common.size());
    }
  };

  auto new_record = [&](int iteration, Minute cursor) {
    IterationRecord rec;
    rec.iteration = iteration;
    rec.cursor_day = cursor;
    rec.cursor_date = format_date(data, cursor);
    for (const auto& track : tracks) rec.tracks.push_back({track.name, std::nullopt, {}, {}, {}, 0});
    return rec;
  };

  {
    IterationRecord rec = new_record(0, t.base_end_day);
    train_all(0, rec);
    result.records.push_back(std::move(rec));
    spdlog::info("{}: iteration 0 trained", result.label());
  }

  for (int i = 1; i <= t.budget; ++i) {
    const Minute today = t.cursor(i);
    const std::uint64_t score_seed = iteration_seed(seed, i - 1);
    IterationRecord rec = new_record(i, today);
    bool exhausted = false;
    for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
      auto& track = tracks[ti];
      auto& tr = rec.tracks[ti];
      if (track.pool.empty()) {
        exhausted = true;
        break;
      }
      int house;
      if (c.acquisition.function == AcquisitionFunction::random) {
        Rng rng = keyed_rng({seed, stream_tag("random"), ti, static_cast<std::uint64_t>(i)});
        house = select_random(sorted(track.pool), rng);
        tr.selection.house_id = house;
      } else {
        tr.scores = score_pool(c, data, track, today, score_seed, options.log);
        switch (c.acquisition.strategy) {
          case Strategy::singly: tr.selection = query_singly(tr.scores, track.name); break;
          case Strategy::uniform: tr.selection = combine_uniform(tr.scores); break;
          case Strategy::rank: tr.selection = combine_rank(tr.scores); break;
          case Strategy::round_robin:
            tr.selection = combine_round_robin(tr.scores, i - 1, c.acquisition.round_robin_order);
            break;
        }
        house = tr.selection.house_id;
      }
      tr.selected = house;
      track.pool.erase(house);
      track.train.insert(house);
      track.joined[house] = today;
      queried[ti].insert(house);
    }
    if (exhausted) {
      spdlog::warn("{}: pool exhausted before iteration {}; stopping", result.label(), i);
      result.stopped_early = true;
      break;
    }
    train_all(i, rec);
    std::string picks;
    for (const auto& tr : rec.tracks) picks += fmt::format(" {}={}", tr.name, *tr.selected);
    spdlog::info("{}: iteration {} queried{}", result.label(), i, picks);
    result.records.push_back(std::move(rec));
  }
  return result;
}

BaselineResult run_total_baseline(const ExperimentConfig& c, const Dataset& data, const Timeline& t,
                                  std::uint64_t seed, const RunOptions& options) {
  BaselineResult result;
  result.seed = seed;
  std::vector<TrainingSegment> segs;
  std::set<int> houses = c.split.train;
  houses.insert(c.split.pool.begin(), c.split.pool.end());
  for (int h : houses) segs.push_back({h, TimeRange::days(t.start_day, t.horizon(t.budget))});
  Rng r = keyed_rng({seed, stream_tag("total")});
  const std::uint64_t train_seed = r();
  std::vector<std::vector<std::string>> groups;
  if (c.acquisition.strategy == Strategy::singly) {
    for (const auto& a : c.appliances) groups.push_back({a});
  } else {
    groups.push_back(c.appliances);
  }
  for (const auto& g : groups) {
    auto model = obtain(c, data, t, g, segs, train_seed, options);
    for (std::size_t a = 0; a < g.size(); ++a) result.rmse[g[a]] = model->rmse[a];
    result.train_windows = std::max(result.train_windows, model->train_windows);
  }
  return result;
}

SweepResult run_sweep(const ExperimentConfig& c, const Dataset& data, const Timeline& t,
                      const std::vector<SweepJob>& jobs, const std::vector<std::uint64_t>& total_seeds, int threads,
                      TrainingCache& cache, const std::function<void(const ExperimentResult&)>& on_run) {
  SweepResult out;
  out.runs.resize(jobs.size());
  out.totals.resize(total_seeds.size());
  const std::size_t count = jobs.size() + total_seeds.size();
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::exception_ptr failure;
  RunOptions options;
  options.cache = &cache;

  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        if (i < jobs.size()) {
          ExperimentConfig job = c;
          job.acquisition.function = jobs[i].function;
          out.runs[i] = run_experiment(job, data, t, jobs[i].seed, options);
          if (on_run) {
            std::lock_guard lock(mutex);
            on_run(out.runs[i]);
          }
        } else {
          const std::size_t k = i - jobs.size();
          out.totals[k] = run_total_baseline(c, data, t, total_seeds[k], options);
        }
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<std::string> audit_access(std::span<const AccessRecord> records, const ExperimentConfig& c,
                                      const ExperimentResult& result) {
  // (track name, house) -> query day
  std::map<std::pair<std::string, int>, Minute> joined;
  for (const auto& rec : result.records) {
    for (const auto& tr : rec.tracks) {
      if (tr.selected) joined[{tr.name, *tr.selected}] = rec.cursor_day;
    }
  }
  const bool singly = result.strategy == Strategy::singly;
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (r.channel != Channel::appliance) continue;
    auto where = fmt::format("{} read of {} for house {} over [{}, {})", to_string(r.phase), r.appliance, r.house_id,
                             r.range.begin, r.range.end);
    if (!r.allowed) out.push_back("denied " + where);
    if (r.phase == Phase::acquisition) {
      out.push_back("appliance data read during acquisition: " + where);
      continue;
    }
    const bool test = c.split.test.count(r.house_id) != 0;
    if (r.phase == Phase::evaluation) {
      if (!test) out.push_back("evaluation read a non-test house: " + where);
      continue;
    }
    if (test) {
      out.push_back("test-house appliance data read outside evaluation: " + where);
    } else if (c.split.pool.count(r.house_id)) {
      auto it = joined.find({singly ? r.appliance : std::string("all"), r.house_id});
      if (it == joined.end()) {
        out.push_back("unqueried pool house read: " + where);
      } else if (r.range.begin < it->second * kMinutesPerDay) {
        out.push_back("pool house read before its query date: " + where);
      }
    }
  }
  return out;
}

}  // namespace nilmal
