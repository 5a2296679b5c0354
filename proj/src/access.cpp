#include "nilmal/access.hpp"

#include <fmt/format.h>

#include "nilmal/errors.hpp"

namespace nilmal {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::training: return "training";
    case Phase::acquisition: return "acquisition";
    case Phase::evaluation: return "evaluation";
  }
  return "?";
}

void AccessLog::record(AccessRecord r) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(r));
}

std::vector<AccessRecord> AccessLog::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

void AccessLog::clear() {
  std::lock_guard lock(mutex_);
  records_.clear();
}

GuardedView::GuardedView(const Dataset& dataset, Phase phase, AccessLog* log)
    : dataset_(dataset), phase_(phase), log_(log) {}

void GuardedView::allow_mains(int house_id) { mains_.insert(house_id); }

void GuardedView::allow_appliances(int house_id, TimeRange range) {
  if (!range.empty()) appliances_[house_id].push_back(range);
}

TimeRange GuardedView::coverage(int house_id) const { return dataset_.coverage(house_id); }

bool GuardedView::appliance_allowed(int house_id, TimeRange range) const {
  auto it = appliances_.find(house_id);
  if (it == appliances_.end()) return false;
  for (const auto& granted : it->second) {
    if (granted.contains(range)) return true;
  }
  return false;
}

std::vector<double> GuardedView::mains(int house_id, TimeRange range) const {
  const bool ok = mains_.count(house_id) != 0;
  if (log_ != nullptr) log_->record({phase_, house_id, Channel::mains, {}, range, ok});
  if (!ok) {
    throw LeakageError(fmt::format("{} phase may not read mains of house {}", to_string(phase_), house_id));
  }
  return dataset_.mains(house_id, range);
}

std::vector<double> GuardedView::appliance(int house_id, const std::string& name, TimeRange range) const {
  const bool ok = appliance_allowed(house_id, range);
  if (log_ != nullptr) log_->record({phase_, house_id, Channel::appliance, name, range, ok});
  if (!ok) {
    throw LeakageError(fmt::format("{} phase may not read {} of house {} over [{}, {})", to_string(phase_), name,
                                   house_id, range.begin, range.end));
  }
  return dataset_.appliance(house_id, name, range);
}

}  // namespace nilmal
