#include "nilmal/windows.hpp"

#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nilmal/errors.hpp"

namespace nilmal {

double Normalizer::scale(const std::string& appliance) const {
  for (std::size_t a = 0; a < appliances.size(); ++a) {
    if (appliances[a] == appliance) return scales[a];
  }
  throw ValidationError(fmt::format("normalizer has no appliance {}", appliance));
}

namespace {

// Welford accumulator; population variance.
struct Moments {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 0 ? std::sqrt(m2 / static_cast<double>(n)) : 0.0; }
};

}  // namespace

Normalizer fit_normalizer(const DataSource& source, std::span<const TrainingSegment> segments,
                          const std::vector<std::string>& appliances) {
  Moments mains;
  std::vector<Moments> app(appliances.size());
  for (const auto& seg : segments) {
    if (seg.targets.empty()) continue;
    for (double w : source.mains(seg.house_id, seg.targets)) mains.add(w);
    for (std::size_t a = 0; a < appliances.size(); ++a) {
      for (double w : source.appliance(seg.house_id, appliances[a], seg.targets)) app[a].add(w);
    }
  }
  if (mains.n == 0) throw ValidationError("cannot fit normalizer on empty training data");

  Normalizer norm;
  norm.mains_mean = mains.mean;
  norm.mains_std = mains.stddev();
  if (norm.mains_std < Normalizer::kStdFloor) {
    spdlog::warn("mains standard deviation {:.3g} W below floor, using {} W", norm.mains_std,
                 Normalizer::kStdFloor);
    norm.mains_std = Normalizer::kStdFloor;
  }
  norm.appliances = appliances;
  for (const auto& m : app) norm.scales.push_back(std::max(m.stddev(), Normalizer::kStdFloor));
  return norm;
}

WindowSet::WindowSet(int length, std::vector<std::string> appliances, bool with_targets)
    : length_(length), appliances_(std::move(appliances)), with_targets_(with_targets) {
  if (length_ < 1 || length_ % 2 == 0) {
    throw ShapeError(fmt::format("window length must be odd and positive, got {}", length_));
  }
}

void WindowSet::append(const DataSource& source, int house_id, TimeRange range, const Normalizer& norm,
                       int stride) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  if (range.length() < length_) return;
  const Minute half = (length_ - 1) / 2;

  Segment seg;
  seg.house_id = house_id;
  seg.begin = range.begin;
  auto mains = source.mains(house_id, range);
  seg.mains.reserve(mains.size());
  for (double w : mains) seg.mains.push_back(norm.normalize_mains(w));
  if (with_targets_) {
    TimeRange mid{range.begin + half, range.end - half};
    for (std::size_t a = 0; a < appliances_.size(); ++a) {
      auto raw = source.appliance(house_id, appliances_[a], mid);
      std::vector<double> scaled(raw.size());
      for (std::size_t i = 0; i < raw.size(); ++i) scaled[i] = norm.normalize_target(a, raw[i]);
      seg.targets.push_back(std::move(scaled));
      seg.raw_targets.push_back(std::move(raw));
    }
  }
  const auto segment = static_cast<std::uint32_t>(segments_.size());
  const Minute count = range.length() - (length_ - 1);
  for (Minute off = 0; off < count; off += stride) {
    index_.push_back({segment, static_cast<std::uint32_t>(off)});
  }
  segments_.push_back(std::move(seg));
}

void WindowSet::append(const WindowSet& other) {
  if (other.length_ != length_ || other.appliances_ != appliances_ || other.with_targets_ != with_targets_) {
    throw ShapeError("cannot merge window sets of different shape");
  }
  const auto base = static_cast<std::uint32_t>(segments_.size());
  segments_.insert(segments_.end(), other.segments_.begin(), other.segments_.end());
  for (const auto& r : other.index_) index_.push_back({r.segment + base, r.offset});
}

Minute WindowSet::midpoint(std::size_t i) const {
  const auto& r = index_[i];
  return segments_[r.segment].begin + r.offset + (length_ - 1) / 2;
}

double WindowSet::target_watts(std::size_t i, std::size_t appliance) const {
  if (!with_targets_) throw ShapeError("window set has no targets");
  const auto& r = index_[i];
  return segments_[r.segment].raw_targets[appliance][r.offset];
}

void WindowSet::fill_inputs(std::span<const std::size_t> indices, Eigen::MatrixXd& inputs) const {
  inputs.resize(length_, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto& r = index_[indices[j]];
    const double* src = segments_[r.segment].mains.data() + r.offset;
    std::copy(src, src + length_, inputs.col(static_cast<Eigen::Index>(j)).data());
  }
}

void WindowSet::fill_targets(std::span<const std::size_t> indices, Eigen::MatrixXd& targets) const {
  if (!with_targets_) throw ShapeError("window set has no targets");
  targets.resize(static_cast<Eigen::Index>(appliances_.size()), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto& r = index_[indices[j]];
    for (std::size_t a = 0; a < appliances_.size(); ++a) {
      targets(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) =
          segments_[r.segment].targets[a][r.offset];
    }
  }
}

WindowSample WindowSet::sample(std::size_t i) const {
  const auto& r = index_.at(i);
  const auto& seg = segments_[r.segment];
  WindowSample s;
  s.input.assign(seg.mains.begin() + r.offset, seg.mains.begin() + r.offset + length_);
  if (with_targets_) {
    for (const auto& t : seg.targets) s.target.push_back(t[r.offset]);
  }
  s.house_id = seg.house_id;
  s.midpoint = midpoint(i);
  return s;
}

WindowSet make_windows(const DataSource& source, int house_id, const std::vector<std::string>& appliances,
                       TimeRange range, int length, const Normalizer& norm, int stride) {
  WindowSet set(length, appliances, true);
  set.append(source, house_id, range, norm, stride);
  return set;
}

WindowSet make_input_windows(const DataSource& source, int house_id, TimeRange range, int length,
                             const Normalizer& norm, int stride) {
  WindowSet set(length, {}, false);
  set.append(source, house_id, range, norm, stride);
  return set;
}

}  // namespace nilmal
