#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "nilmal/acquisition.hpp"
#include "nilmal/errors.hpp"

using namespace nilmal;

namespace {

ScoreTable table_of(const std::map<int, std::vector<double>>& rows, std::vector<std::string> apps) {
  std::vector<int> houses;
  for (const auto& [h, v] : rows) houses.push_back(h);
  ScoreTable t(houses, apps);
  for (const auto& [h, v] : rows) {
    for (std::size_t a = 0; a < apps.size(); ++a) t.at(h, apps[a]) = v[a];
  }
  return t;
}

AggregationWindow dynamic(int k, Kernel kernel) {
  AggregationWindow w;
  w.mode = WindowMode::dynamic;
  w.half_width = k;
  w.kernel = kernel;
  return w;
}

ScoreTable random_table(Rng& rng, int houses, int apps) {
  std::uniform_real_distribution<double> score(0.0, 100.0);
  std::vector<int> ids;
  int id = 0;
  std::uniform_int_distribution<int> gap(1, 4);
  for (int h = 0; h < houses; ++h) ids.push_back(id += gap(rng));
  std::vector<std::string> names;
  for (int a = 0; a < apps; ++a) names.push_back("app" + std::to_string(a));
  ScoreTable t(ids, names);
  for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = score(rng);
  return t;
}

// Hand-rolled oracle for the rank strategy: sort-based ranking, independent of score_ranks.
int rank_oracle(const ScoreTable& t) {
  const auto n = t.houses.size();
  std::vector<int> sums(n, 0);
  for (std::size_t a = 0; a < t.appliances.size(); ++a) {
    std::vector<double> col;
    for (std::size_t h = 0; h < n; ++h) col.push_back(t.values(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(a)));
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    for (std::size_t h = 0; h < n; ++h) {
      sums[h] += static_cast<int>(std::find(sorted.begin(), sorted.end(), col[h]) - sorted.begin()) + 1;
    }
  }
  return t.houses[static_cast<std::size_t>(std::min_element(sums.begin(), sums.end()) - sums.begin())];
}

}  // namespace

TEST_CASE("uniform kernel aggregates to the plain mean") {
  const AggregationWindow w = dynamic(7, Kernel::uniform);
  const std::vector<TimedScore> s{{20 * kMinutesPerDay, 2.0}, {21 * kMinutesPerDay + 5, 4.0}, {19 * kMinutesPerDay, 6.0}};
  CHECK(aggregate_house_score(s, w, 20) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("uniform kernel over a single timestamp returns it exactly") {
  const AggregationWindow w = dynamic(3, Kernel::uniform);
  const std::vector<TimedScore> s{{10 * kMinutesPerDay + 77, 0.1234567}};
  CHECK(aggregate_house_score(s, w, 11) == 0.1234567);
}

TEST_CASE("triangle kernel weights for K = 7") {
  const AggregationWindow w = dynamic(7, Kernel::triangle);
  const Minute today = 30;
  CHECK(w.weight(today, today) == 1.0);
  CHECK(w.weight(today - 7, today) == 0.125);
  CHECK(w.weight(today + 7, today) == 0.125);
  CHECK(w.weight(today + 3, today) == 0.625);
  CHECK(w.weight(today - 4, today) == 0.5);
  CHECK(w.weight(today + 8, today) == 0.0);
  double total = 0.0;
  for (Minute d = today - 7; d <= today + 7; ++d) total += w.weight(d, today);
  CHECK(total == 8.0);
}

TEST_CASE("triangle K = 7 with one unit score on day T gives 1/8") {
  const AggregationWindow w = dynamic(7, Kernel::triangle);
  const Minute today = 30;
  std::vector<TimedScore> s;
  for (Minute d = today - 7; d <= today + 7; ++d) s.push_back({d * kMinutesPerDay + 600, d == today ? 1.0 : 0.0});
  CHECK(aggregate_house_score(s, w, today) == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("constant score over a full triangle window returns the constant") {
  const AggregationWindow w = dynamic(7, Kernel::triangle);
  std::vector<TimedScore> s;
  for (Minute m = 13 * kMinutesPerDay; m < 28 * kMinutesPerDay; m += 15) s.push_back({m, 2.75});
  CHECK(std::abs(aggregate_house_score(s, w, 20) - 2.75) < 1e-12);
}

TEST_CASE("an empty window names the house and window") {
  const AggregationWindow w = dynamic(2, Kernel::triangle);
  const std::vector<TimedScore> s{{100 * kMinutesPerDay, 1.0}};
  try {
    aggregate_house_score(s, w, 10, 42);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("house 42") != std::string::npos);
    CHECK(msg.find("[8, 12]") != std::string::npos);
  }
}

TEST_CASE("dynamic windows at T and T + 5 differ by 5 days at both ends") {
  const AggregationWindow w = dynamic(7, Kernel::triangle);
  const auto a = w.range(20);
  const auto b = w.range(25);
  CHECK(b.begin - a.begin == 5 * kMinutesPerDay);
  CHECK(b.end - a.end == 5 * kMinutesPerDay);
  CHECK(a.length() == 15 * kMinutesPerDay);
}

TEST_CASE("causal window stops before the current day") {
  AggregationWindow w = dynamic(7, Kernel::triangle);
  w.causal_only = true;
  const auto [first, last] = w.day_span(20);
  CHECK(first == 13);
  CHECK(last == 19);
  CHECK(w.weight(20, 20) == 0.0);
  CHECK(w.weight(19, 20) == 0.875);
}

TEST_CASE("static window uses its own fixed days") {
  AggregationWindow w;
  w.mode = WindowMode::fixed;
  w.first_day = 3;
  w.last_day = 9;
  w.kernel = Kernel::triangle;
  CHECK(w.day_span(100) == std::pair<Minute, Minute>{3, 9});
  CHECK(w.weight(6, 100) == 1.0);
  CHECK(w.weight(3, 100) == 0.25);
  CHECK(w.weight(10, 100) == 0.0);
  w.last_day = 2;
  CHECK_FALSE(w.violations().empty());
}

TEST_CASE("query singly picks the argmax with ties to the lowest id") {
  CHECK(query_singly(table_of({{5, {3}}, {9, {7}}}, {"furnace"}), "furnace").house_id == 9);
  CHECK(query_singly(table_of({{5, {7}}, {9, {7}}}, {"furnace"}), "furnace").house_id == 5);
  CHECK(query_singly(table_of({{4, {0.1}}}, {"furnace"}), "furnace").house_id == 4);
}

TEST_CASE("uniform weighting on the two-appliance example selects h2") {
  const ScoreTable t = table_of({{1, {6, 4}}, {2, {100, 105}}}, {"a1", "a2"});
  const Selection s = combine_uniform(t);
  CHECK(s.house_id == 2);
  CHECK(s.combined[0] == 5.0);
  CHECK(s.combined[1] == 102.5);
}

TEST_CASE("uniform weighting ties go to the lowest house id") {
  CHECK(combine_uniform(table_of({{3, {1, 2}}, {7, {1, 2}}, {8, {1, 2}}}, {"a", "b"})).house_id == 3);
}

TEST_CASE("uniform weighting with one appliance equals query singly") {
  Rng rng = keyed_rng({stream_tag("uniform-m1")});
  for (int t = 0; t < 100; ++t) {
    const ScoreTable table = random_table(rng, 6, 1);
    REQUIRE(combine_uniform(table).house_id == query_singly(table, "app0").house_id);
  }
}

TEST_CASE("rank strategy on the three-house example") {
  const ScoreTable t = table_of({{1, {6, 4}}, {2, {100, 105}}, {3, {0.03, 0.02}}}, {"a1", "a2"});
  const Selection s = combine_rank(t);
  CHECK(s.ranks(0, 0) == 2);
  CHECK(s.ranks(1, 0) == 1);
  CHECK(s.ranks(2, 0) == 3);
  CHECK(s.ranks(0, 1) == 2);
  CHECK(s.ranks(1, 1) == 1);
  CHECK(s.ranks(2, 1) == 3);
  CHECK(s.combined == std::vector<double>{4, 2, 6});
  CHECK(s.house_id == 2);
}

TEST_CASE("equal scores share the better rank") {
  const auto r = score_ranks(table_of({{1, {5}}, {2, {9}}, {3, {5}}, {4, {1}}}, {"a"}));
  CHECK(r(0, 0) == 2);
  CHECK(r(1, 0) == 1);
  CHECK(r(2, 0) == 2);
  CHECK(r(3, 0) == 4);
}

TEST_CASE("round robin cycles through the order") {
  const ScoreTable t = table_of({{1, {9, 1, 1}}, {2, {1, 9, 1}}, {3, {1, 1, 9}}}, {"ac", "furnace", "fridge"});
  const std::vector<std::string> order{"ac", "furnace", "fridge"};
  CHECK(combine_round_robin(t, 0, order).house_id == 1);
  CHECK(combine_round_robin(t, 0, order).active_appliance == "ac");
  CHECK(combine_round_robin(t, 1, order).house_id == 2);
  CHECK(combine_round_robin(t, 2, order).house_id == 3);
  CHECK(combine_round_robin(t, 3, order).active_appliance == "ac");
  const std::vector<std::string> one{"fridge"};
  for (int i = 0; i < 5; ++i) CHECK(combine_round_robin(t, i, one).house_id == 3);
}

TEST_CASE("property: rank selection matches a sort-based oracle") {
  Rng rng = keyed_rng({stream_tag("rank-oracle")});
  std::uniform_int_distribution<int> houses(1, 9);
  std::uniform_int_distribution<int> apps(1, 5);
  for (int t = 0; t < 500; ++t) {
    ScoreTable table = random_table(rng, houses(rng), apps(rng));
    // Coarse values make rank ties common.
    table.values = (table.values.array() / 20.0).floor().matrix();
    REQUIRE(combine_rank(table).house_id == rank_oracle(table));
  }
}

TEST_CASE("property: scaling every score by a positive constant keeps all selections") {
  Rng rng = keyed_rng({stream_tag("scale-invariance")});
  std::uniform_real_distribution<double> log_c(-5.0, 5.0);
  std::uniform_int_distribution<int> houses(1, 8);
  std::uniform_int_distribution<int> apps(1, 5);
  for (int t = 0; t < 500; ++t) {
    const ScoreTable a = random_table(rng, houses(rng), apps(rng));
    ScoreTable b = a;
    b.values *= std::exp(log_c(rng));
    std::vector<std::string> order = a.appliances;
    REQUIRE(combine_uniform(a).house_id == combine_uniform(b).house_id);
    REQUIRE(combine_rank(a).house_id == combine_rank(b).house_id);
    REQUIRE(combine_round_robin(a, t, order).house_id == combine_round_robin(b, t, order).house_id);
    REQUIRE(query_singly(a, order.back()).house_id == query_singly(b, order.back()).house_id);
  }
}

TEST_CASE("property: rank selection survives per-appliance monotone transforms") {
  Rng rng = keyed_rng({stream_tag("monotone")});
  std::uniform_real_distribution<double> log_c(-3.0, 3.0);
  std::uniform_int_distribution<int> kind(0, 2);
  for (int t = 0; t < 500; ++t) {
    const ScoreTable a = random_table(rng, 7, 4);
    ScoreTable b = a;
    for (Eigen::Index c = 0; c < b.values.cols(); ++c) {
      const double scale = std::exp(log_c(rng));
      switch (kind(rng)) {
        case 0: b.values.col(c) = (b.values.col(c).array() * scale).sqrt(); break;
        case 1: b.values.col(c) = (b.values.col(c).array() / 50.0).exp() * scale; break;
        default: b.values.col(c) = b.values.col(c).array().cube() * scale + 3.0; break;
      }
    }
    REQUIRE(combine_rank(a).house_id == combine_rank(b).house_id);
    REQUIRE(score_ranks(a) == score_ranks(b));
  }
}

TEST_CASE("strategies reject invalid tables") {
  ScoreTable t = table_of({{1, {1, 2}}}, {"a", "b"});
  t.values(0, 1) = NAN;
  CHECK_THROWS_AS(combine_uniform(t), ValidationError);
  t.values(0, 1) = -1.0;
  CHECK_THROWS_AS(combine_rank(t), ValidationError);
  CHECK_THROWS_AS(query_singly(table_of({{1, {1}}}, {"a"}), "b"), ValidationError);
  CHECK_THROWS_AS(combine_uniform(ScoreTable({}, {"a"})), ValidationError);
}

TEST_CASE("random selection") {
  SUBCASE("single-house pool") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      Rng rng = keyed_rng({s});
      CHECK(select_random({5}, rng) == 5);
    }
  }
  SUBCASE("uniform frequencies over a four-house pool") {
    Rng rng = keyed_rng({stream_tag("random-freq")});
    std::map<int, int> counts;
    for (int i = 0; i < 10000; ++i) ++counts[select_random({2, 4, 6, 8}, rng)];
    for (const auto& [h, c] : counts) CHECK(std::abs(c / 10000.0 - 0.25) < 0.02);
    CHECK(counts.size() == 4);
  }
  SUBCASE("same seed, same sequence; order of the pool does not matter") {
    Rng a = keyed_rng({9});
    Rng b = keyed_rng({9});
    for (int i = 0; i < 50; ++i) CHECK(select_random({1, 2, 3, 4, 5}, a) == select_random({5, 3, 1, 4, 2}, b));
  }
  SUBCASE("empty pool") {
    Rng rng = keyed_rng({1});
    CHECK_THROWS_AS(select_random({}, rng), ValidationError);
  }
}
