#pragma once

#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "nilmal/data.hpp"

namespace nilmal {

enum class Phase { training, acquisition, evaluation };
enum class Channel { mains, appliance };

const char* to_string(Phase phase);

struct AccessRecord {
  Phase phase;
  int house_id;
  Channel channel;
  std::string appliance;  // empty for mains
  TimeRange range;
  bool allowed;
};

/// Thread-safe append-only log of every read made through a GuardedView.
class AccessLog {
 public:
  void record(AccessRecord r);
  std::vector<AccessRecord> records() const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<AccessRecord> records_;
};

/// Access-controlled view of a dataset for one phase of the experiment. Reads must be
/// granted explicitly; a read outside the grants is logged and throws LeakageError.
class GuardedView : public DataSource {
 public:
  GuardedView(const Dataset& dataset, Phase phase, AccessLog* log = nullptr);

  void allow_mains(int house_id);
  /// Appliance readings of `house_id` inside `range` (may be called repeatedly).
  void allow_appliances(int house_id, TimeRange range);

  Phase phase() const { return phase_; }
  TimeRange coverage(int house_id) const override;
  std::vector<double> mains(int house_id, TimeRange range) const override;
  std::vector<double> appliance(int house_id, const std::string& name, TimeRange range) const override;

 private:
  bool appliance_allowed(int house_id, TimeRange range) const;

  const Dataset& dataset_;
  Phase phase_;
  AccessLog* log_;
  std::set<int> mains_;
  std::map<int, std::vector<TimeRange>> appliances_;
};

}  // namespace nilmal
