#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace nilmal {

/// Minutes since the dataset epoch (midnight of the first recorded day).
using Minute = std::int64_t;
inline constexpr Minute kMinutesPerDay = 1440;

/// Half-open interval [begin, end) of minutes.
struct TimeRange {
  Minute begin = 0;
  Minute end = 0;

  Minute length() const { return end > begin ? end - begin : 0; }
  bool empty() const { return end <= begin; }
  bool contains(Minute m) const { return m >= begin && m < end; }
  bool contains(const TimeRange& r) const { return r.empty() || (r.begin >= begin && r.end <= end); }
  TimeRange intersect(const TimeRange& r) const {
    return {std::max(begin, r.begin), std::min(end, r.end)};
  }
  static TimeRange days(Minute first_day, Minute end_day) {
    return {first_day * kMinutesPerDay, end_day * kMinutesPerDay};
  }
  bool operator==(const TimeRange&) const = default;
};

/// Mains and per-appliance power of one house at a fixed one-minute cadence.
/// Sample i is taken at minute `start + i`.
struct PowerSeries {
  int house_id = 0;
  Minute start = 0;
  std::vector<double> mains;
  std::map<std::string, std::vector<double>> appliances;

  Minute end() const { return start + static_cast<Minute>(mains.size()); }
  TimeRange coverage() const { return {start, end()}; }
  bool has_appliance(const std::string& name) const { return appliances.count(name) != 0; }

  /// Throws ValidationError on empty, non-finite, negative or misaligned traces.
  void validate() const;

  bool operator==(const PowerSeries&) const = default;
};

/// Read access to household power. Appliances a house does not have read as zeros.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual TimeRange coverage(int house_id) const = 0;
  virtual std::vector<double> mains(int house_id, TimeRange range) const = 0;
  virtual std::vector<double> appliance(int house_id, const std::string& name,
                                        TimeRange range) const = 0;
};

/// Immutable collection of houses, sorted by id.
class Dataset : public DataSource {
 public:
  Dataset() = default;
  Dataset(std::int64_t epoch_unix_minute, std::vector<PowerSeries> series);

  std::int64_t epoch_unix_minute() const { return epoch_; }
  const std::vector<PowerSeries>& series() const { return series_; }
  const PowerSeries& house(int house_id) const;
  bool contains(int house_id) const;
  std::vector<int> house_ids() const;
  /// Union of appliance names over all houses, sorted.
  std::vector<std::string> appliance_names() const;
  /// Number of whole days covered by every house, counted from the epoch.
  Minute common_days() const;

  TimeRange coverage(int house_id) const override;
  std::vector<double> mains(int house_id, TimeRange range) const override;
  std::vector<double> appliance(int house_id, const std::string& name,
                                TimeRange range) const override;

  bool operator==(const Dataset& other) const {
    return epoch_ == other.epoch_ && series_ == other.series_;
  }

 private:
  std::int64_t epoch_ = 0;
  std::vector<PowerSeries> series_;
};

struct SplitSpec {
  std::set<int> train;
  std::set<int> pool;
  std::set<int> test;

  /// Every violated split invariant, one message each; empty when valid.
  /// `dataset` may be null to skip the existence check.
  std::vector<std::string> violations(const Dataset* dataset) const;
  void validate(const Dataset& dataset) const;
};

}  // namespace nilmal
