#include "nilmal/data.hpp"

#include <cmath>

#include <fmt/format.h>

#include "nilmal/errors.hpp"

namespace nilmal {

namespace {

void check_trace(int house_id, const std::string& name, const std::vector<double>& trace) {
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (!std::isfinite(trace[i])) {
      throw ValidationError(fmt::format("house {}: {} is not finite at sample {}", house_id, name, i));
    }
    if (trace[i] < 0.0) {
      throw ValidationError(fmt::format("house {}: negative {} power {} W at sample {}", house_id,
                                        name, trace[i], i));
    }
  }
}

}  // namespace

void PowerSeries::validate() const {
  if (mains.empty()) throw ValidationError(fmt::format("house {}: empty mains trace", house_id));
  check_trace(house_id, "mains", mains);
  for (const auto& [name, trace] : appliances) {
    if (trace.size() != mains.size()) {
      throw ValidationError(fmt::format("house {}: appliance {} has {} samples, mains has {}",
                                        house_id, name, trace.size(), mains.size()));
    }
    check_trace(house_id, name, trace);
  }
}

Dataset::Dataset(std::int64_t epoch_unix_minute, std::vector<PowerSeries> series)
    : epoch_(epoch_unix_minute), series_(std::move(series)) {
  std::sort(series_.begin(), series_.end(),
            [](const PowerSeries& a, const PowerSeries& b) { return a.house_id < b.house_id; });
  for (std::size_t i = 0; i < series_.size(); ++i) {
    if (i > 0 && series_[i].house_id == series_[i - 1].house_id) {
      throw ValidationError(fmt::format("duplicate house {}", series_[i].house_id));
    }
    series_[i].validate();
  }
}

const PowerSeries& Dataset::house(int house_id) const {
  auto it = std::lower_bound(series_.begin(), series_.end(), house_id,
                             [](const PowerSeries& s, int id) { return s.house_id < id; });
  if (it == series_.end() || it->house_id != house_id) {
    throw ValidationError(fmt::format("unknown house {}", house_id));
  }
  return *it;
}

bool Dataset::contains(int house_id) const {
  auto it = std::lower_bound(series_.begin(), series_.end(), house_id,
                             [](const PowerSeries& s, int id) { return s.house_id < id; });
  return it != series_.end() && it->house_id == house_id;
}

std::vector<int> Dataset::house_ids() const {
  std::vector<int> ids;
  ids.reserve(series_.size());
  for (const auto& s : series_) ids.push_back(s.house_id);
  return ids;
}

std::vector<std::string> Dataset::appliance_names() const {
  std::set<std::string> names;
  for (const auto& s : series_) {
    for (const auto& [name, trace] : s.appliances) names.insert(name);
  }
  return {names.begin(), names.end()};
}

Minute Dataset::common_days() const {
  if (series_.empty()) return 0;
  Minute end = series_.front().end();
  for (const auto& s : series_) end = std::min(end, s.end());
  return end / kMinutesPerDay;
}

TimeRange Dataset::coverage(int house_id) const { return house(house_id).coverage(); }

std::vector<double> Dataset::mains(int house_id, TimeRange range) const {
  const auto& s = house(house_id);
  if (!s.coverage().contains(range)) {
    throw ValidationError(fmt::format("house {}: range [{}, {}) outside coverage [{}, {})", house_id,
                                      range.begin, range.end, s.start, s.end()));
  }
  auto first = s.mains.begin() + (range.begin - s.start);
  return {first, first + range.length()};
}

std::vector<double> Dataset::appliance(int house_id, const std::string& name,
                                       TimeRange range) const {
  const auto& s = house(house_id);
  if (!s.coverage().contains(range)) {
    throw ValidationError(fmt::format("house {}: range [{}, {}) outside coverage [{}, {})", house_id,
                                      range.begin, range.end, s.start, s.end()));
  }
  auto it = s.appliances.find(name);
  if (it == s.appliances.end()) return std::vector<double>(range.length(), 0.0);
  auto first = it->second.begin() + (range.begin - s.start);
  return {first, first + range.length()};
}

std::vector<std::string> SplitSpec::violations(const Dataset* dataset) const {
  std::vector<std::string> out;
  auto overlap = [&](const std::set<int>& a, const std::set<int>& b, const char* an, const char* bn) {
    for (int h : a) {
      if (b.count(h)) out.push_back(fmt::format("split overlap: house {} is in both {} and {}", h, an, bn));
    }
  };
  overlap(train, pool, "train", "pool");
  overlap(train, test, "train", "test");
  overlap(pool, test, "pool", "test");
  if (train.empty()) out.push_back("split: train set is empty");
  if (test.empty()) out.push_back("split: test set is empty");
  if (dataset != nullptr) {
    for (const auto* set : {&train, &pool, &test}) {
      for (int h : *set) {
        if (!dataset->contains(h)) out.push_back(fmt::format("split: house {} not in dataset", h));
      }
    }
  }
  return out;
}

void SplitSpec::validate(const Dataset& dataset) const {
  auto v = violations(&dataset);
  if (!v.empty()) throw ValidationError(v.front());
}

}  // namespace nilmal
