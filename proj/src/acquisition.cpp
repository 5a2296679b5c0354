#include "nilmal/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "nilmal/errors.hpp"

namespace nilmal {

using Eigen::Index;

namespace {

Minute floor_day(Minute minute) {
  return minute >= 0 ? minute / kMinutesPerDay : -((-minute + kMinutesPerDay - 1) / kMinutesPerDay);
}

// Index of the largest value; the first (lowest house id) wins ties.
Index argmax(const std::vector<double>& values) {
  Index best = 0;
  for (Index i = 1; i < static_cast<Index>(values.size()); ++i) {
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

Selection single_column(const ScoreTable& table, Index column) {
  Selection s;
  s.ranks = score_ranks(table);
  s.combined.resize(table.houses.size());
  for (Index r = 0; r < table.values.rows(); ++r) s.combined[static_cast<std::size_t>(r)] = table.values(r, column);
  s.house_id = table.houses[static_cast<std::size_t>(argmax(s.combined))];
  s.active_appliance = table.appliances[static_cast<std::size_t>(column)];
  return s;
}

}  // namespace

std::vector<std::string> AggregationWindow::violations() const {
  std::vector<std::string> out;
  if (mode == WindowMode::dynamic) {
    if (half_width < 0) out.push_back("window half_width must be non-negative");
    if (causal_only && half_width < 1) out.push_back("a causal window needs half_width >= 1");
  } else {
    if (last_day < first_day) out.push_back("fixed window ends before it starts");
    if (causal_only) out.push_back("causal_only applies to dynamic windows only");
  }
  return out;
}

std::pair<Minute, Minute> AggregationWindow::day_span(Minute today) const {
  if (mode == WindowMode::fixed) return {first_day, last_day};
  return {today - half_width, causal_only ? today - 1 : today + half_width};
}

TimeRange AggregationWindow::range(Minute today) const {
  auto [first, last] = day_span(today);
  return TimeRange::days(first, last + 1);
}

double AggregationWindow::weight(Minute day, Minute today) const {
  auto [first, last] = day_span(today);
  if (day < first || day > last) return 0.0;
  if (kernel == Kernel::uniform) return 1.0;
  if (mode == WindowMode::fixed) {
    const double center = 0.5 * static_cast<double>(first_day + last_day);
    const double k = 0.5 * static_cast<double>(last_day - first_day);
    return 1.0 - std::abs(center - static_cast<double>(day)) / (k + 1.0);
  }
  return 1.0 - static_cast<double>(std::abs(today - day)) / static_cast<double>(half_width + 1);
}

std::string AggregationWindow::describe(Minute today) const {
  auto [first, last] = day_span(today);
  return fmt::format("{} {} window, days [{}, {}]", to_string(mode), to_string(kernel), first, last);
}

WindowMode parse_window_mode(std::string_view text) {
  if (text == "static") return WindowMode::fixed;
  if (text == "dynamic") return WindowMode::dynamic;
  throw ConfigError(fmt::format("unknown window mode '{}' (expected static or dynamic)", text));
}

Kernel parse_kernel(std::string_view text) {
  if (text == "uniform") return Kernel::uniform;
  if (text == "triangle") return Kernel::triangle;
  throw ConfigError(fmt::format("unknown kernel '{}' (expected uniform or triangle)", text));
}

const char* to_string(WindowMode mode) { return mode == WindowMode::fixed ? "static" : "dynamic"; }
const char* to_string(Kernel kernel) { return kernel == Kernel::uniform ? "uniform" : "triangle"; }

double aggregate_house_score(std::span<const TimedScore> scores, const AggregationWindow& window, Minute today,
                             int house_id) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& s : scores) {
    const double w = window.weight(floor_day(s.minute), today);
    if (w <= 0.0) continue;
    num += w * s.score;
    den += w;
  }
  if (den <= 0.0) {
    throw ValidationError(fmt::format("house {}: no scores inside the {}", house_id, window.describe(today)));
  }
  return num / den;
}

ScoreTable::ScoreTable(std::vector<int> h, std::vector<std::string> a)
    : houses(std::move(h)), appliances(std::move(a)),
      values(Eigen::MatrixXd::Zero(static_cast<Index>(houses.size()), static_cast<Index>(appliances.size()))) {}

Index ScoreTable::row(int house_id) const {
  auto it = std::lower_bound(houses.begin(), houses.end(), house_id);
  if (it == houses.end() || *it != house_id) throw ValidationError(fmt::format("house {} is not scored", house_id));
  return it - houses.begin();
}

Index ScoreTable::column(const std::string& appliance) const {
  auto it = std::find(appliances.begin(), appliances.end(), appliance);
  if (it == appliances.end()) throw ValidationError(fmt::format("missing scores for appliance {}", appliance));
  return it - appliances.begin();
}

double& ScoreTable::at(int house_id, const std::string& appliance) { return values(row(house_id), column(appliance)); }

double ScoreTable::at(int house_id, const std::string& appliance) const {
  return values(row(house_id), column(appliance));
}

void ScoreTable::validate() const {
  if (houses.empty()) throw ValidationError("empty pool");
  if (appliances.empty()) throw ValidationError("score table has no appliances");
  if (!std::is_sorted(houses.begin(), houses.end()) ||
      std::adjacent_find(houses.begin(), houses.end()) != houses.end()) {
    throw ValidationError("score table houses must be unique and sorted");
  }
  if (values.rows() != static_cast<Index>(houses.size()) || values.cols() != static_cast<Index>(appliances.size())) {
    throw ValidationError("score table shape does not match its labels");
  }
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError(fmt::format("house {}: invalid {} score {}", houses[static_cast<std::size_t>(r)],
                                          appliances[static_cast<std::size_t>(c)], v));
      }
    }
  }
}

Eigen::MatrixXi score_ranks(const ScoreTable& table) {
  const Index n = table.values.rows();
  Eigen::MatrixXi ranks(n, table.values.cols());
  for (Index c = 0; c < table.values.cols(); ++c) {
    for (Index r = 0; r < n; ++r) {
      int higher = 0;
      for (Index o = 0; o < n; ++o) higher += table.values(o, c) > table.values(r, c) ? 1 : 0;
      ranks(r, c) = higher + 1;
    }
  }
  return ranks;
}

Selection query_singly(const ScoreTable& table, const std::string& appliance) {
  table.validate();
  return single_column(table, table.column(appliance));
}

Selection combine_uniform(const ScoreTable& table) {
  table.validate();
  Selection s;
  s.ranks = score_ranks(table);
  const double w = 1.0 / static_cast<double>(table.appliances.size());
  for (Index r = 0; r < table.values.rows(); ++r) s.combined.push_back(w * table.values.row(r).sum());
  s.house_id = table.houses[static_cast<std::size_t>(argmax(s.combined))];
  return s;
}

Selection combine_rank(const ScoreTable& table) {
  table.validate();
  Selection s;
  s.ranks = score_ranks(table);
  Index best = 0;
  for (Index r = 0; r < s.ranks.rows(); ++r) {
    s.combined.push_back(static_cast<double>(s.ranks.row(r).sum()));
    if (s.combined.back() < s.combined[static_cast<std::size_t>(best)]) best = r;
  }
  s.house_id = table.houses[static_cast<std::size_t>(best)];
  return s;
}

Selection combine_round_robin(const ScoreTable& table, int query, const std::vector<std::string>& order) {
  table.validate();
  if (order.empty()) throw ConfigError("round-robin order is empty");
  if (query < 0) throw ValidationError("negative round-robin query index");
  const auto& active = order[static_cast<std::size_t>(query) % order.size()];
  return single_column(table, table.column(active));
}

int select_random(const std::vector<int>& pool, Rng& rng) {
  if (pool.empty()) throw ValidationError("empty pool");
  std::vector<int> sorted = pool;
  std::sort(sorted.begin(), sorted.end());
  std::uniform_int_distribution<std::size_t> pick(0, sorted.size() - 1);
  return sorted[pick(rng)];
}

}  // namespace nilmal
