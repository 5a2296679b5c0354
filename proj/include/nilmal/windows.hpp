#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nilmal/data.hpp"

namespace nilmal {

/// Mains are z-scored with training statistics; appliance targets are divided by their
/// training standard deviation. Standard deviations are floored at `kStdFloor` watts.
struct Normalizer {
  static constexpr double kStdFloor = 1.0;

  double mains_mean = 0.0;
  double mains_std = 1.0;
  std::vector<std::string> appliances;
  std::vector<double> scales;

  double normalize_mains(double watts) const { return (watts - mains_mean) / mains_std; }
  double denormalize_mains(double z) const { return z * mains_std + mains_mean; }
  double normalize_target(std::size_t a, double watts) const { return watts / scales.at(a); }
  double denormalize_target(std::size_t a, double y) const { return y * scales.at(a); }
  double scale(std::size_t a) const { return scales.at(a); }
  double scale(const std::string& appliance) const;
};

/// Appliance data of `house_id` usable as training targets over `targets`.
struct TrainingSegment {
  int house_id = 0;
  TimeRange targets;
};

/// Fit on the mains and appliance readings inside the training segments.
Normalizer fit_normalizer(const DataSource& source, std::span<const TrainingSegment> segments,
                          const std::vector<std::string>& appliances);

struct WindowSample {
  std::vector<double> input;   // normalized mains, length L
  std::vector<double> target;  // normalized appliance power at the midpoint
  int house_id = 0;
  Minute midpoint = 0;
};

/// Sliding mains windows with the appliance readings at their midpoints.
/// Windows are stored as references into per-house normalized mains segments.
class WindowSet {
 public:
  WindowSet(int length, std::vector<std::string> appliances, bool with_targets);

  int length() const { return length_; }
  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }
  bool has_targets() const { return with_targets_; }
  const std::vector<std::string>& appliances() const { return appliances_; }
  std::size_t appliance_count() const { return appliances_.size(); }

  /// Windows lying inside `range` (which bounds the inputs, not only the midpoints),
  /// one every `stride` minutes starting at the first valid midpoint.
  void append(const DataSource& source, int house_id, TimeRange range, const Normalizer& norm,
              int stride = 1);
  void append(const WindowSet& other);

  int house_id(std::size_t i) const { return segments_[index_[i].segment].house_id; }
  Minute midpoint(std::size_t i) const;
  /// Raw target in watts.
  double target_watts(std::size_t i, std::size_t appliance) const;

  /// L x n input matrix for the given windows.
  void fill_inputs(std::span<const std::size_t> indices, Eigen::MatrixXd& inputs) const;
  /// k x n normalized target matrix.
  void fill_targets(std::span<const std::size_t> indices, Eigen::MatrixXd& targets) const;
  WindowSample sample(std::size_t i) const;

 private:
  struct Segment {
    int house_id = 0;
    Minute begin = 0;
    std::vector<double> mains;                 // normalized, covers the appended range
    std::vector<std::vector<double>> targets;  // per appliance, normalized, midpoint range
    std::vector<std::vector<double>> raw_targets;
  };
  struct Ref {
    std::uint32_t segment;
    std::uint32_t offset;  // window start within the segment
  };

  int length_;
  std::vector<std::string> appliances_;
  bool with_targets_;
  std::vector<Segment> segments_;
  std::vector<Ref> index_;
};

/// Training/evaluation windows: reads mains over `range` and appliance data only at midpoints.
WindowSet make_windows(const DataSource& source, int house_id, const std::vector<std::string>& appliances,
                       TimeRange range, int length, const Normalizer& norm, int stride = 1);

/// Input-only windows for scoring houses whose appliance data must not be touched.
WindowSet make_input_windows(const DataSource& source, int house_id, TimeRange range, int length,
                             const Normalizer& norm, int stride = 1);

}  // namespace nilmal
