#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nilmal/data.hpp"
#include "nilmal/rng.hpp"

namespace nilmal {

enum class WindowMode { fixed, dynamic };
enum class Kernel { uniform, triangle };

/// Days over which per-timestamp scores are pooled into one per-house score. Days are
/// indices counted from the dataset epoch.
struct AggregationWindow {
  WindowMode mode = WindowMode::dynamic;
  int half_width = 7;         // dynamic: [T - K, T + K]
  Minute first_day = 0;       // fixed: [first_day, last_day], inclusive
  Minute last_day = 0;
  Kernel kernel = Kernel::triangle;
  bool causal_only = false;   // dynamic: [T - K, T - 1]

  std::vector<std::string> violations() const;
  /// Inclusive day span at current day T.
  std::pair<Minute, Minute> day_span(Minute today) const;
  TimeRange range(Minute today) const;
  /// Weight shared by every timestamp of `day`; 0 outside the window.
  double weight(Minute day, Minute today) const;
  std::string describe(Minute today) const;
};

WindowMode parse_window_mode(std::string_view text);
Kernel parse_kernel(std::string_view text);
const char* to_string(WindowMode mode);
const char* to_string(Kernel kernel);

struct TimedScore {
  Minute minute = 0;
  double score = 0.0;
};

/// Kernel-weighted mean of the scores inside the window. Throws ValidationError naming the
/// house and window when no score falls inside.
double aggregate_house_score(std::span<const TimedScore> scores, const AggregationWindow& window, Minute today,
                             int house_id = 0);

/// Aggregated scores of pool houses (rows, sorted by id) for each appliance (columns).
struct ScoreTable {
  std::vector<int> houses;
  std::vector<std::string> appliances;
  Eigen::MatrixXd values;

  ScoreTable() = default;
  ScoreTable(std::vector<int> houses, std::vector<std::string> appliances);
  double& at(int house_id, const std::string& appliance);
  double at(int house_id, const std::string& appliance) const;
  Eigen::Index row(int house_id) const;
  Eigen::Index column(const std::string& appliance) const;
  /// Throws ValidationError on an empty table, unsorted houses or a non-finite or negative score.
  void validate() const;
};

/// Descending-score rank per appliance (1 = highest); equal scores share the better rank.
Eigen::MatrixXi score_ranks(const ScoreTable& table);

struct Selection {
  int house_id = 0;
  std::vector<double> combined;  // per table row; what the argmax (or argmin for ranks) ran on
  Eigen::MatrixXi ranks;
  std::string active_appliance;  // round robin and query-singly
};

Selection query_singly(const ScoreTable& table, const std::string& appliance);
Selection combine_uniform(const ScoreTable& table);
Selection combine_rank(const ScoreTable& table);
/// Query `query` (0 for the first selection) scores only appliance order[query mod M].
Selection combine_round_robin(const ScoreTable& table, int query, const std::vector<std::string>& order);
int select_random(const std::vector<int>& pool, Rng& rng);

}  // namespace nilmal
