#include "nilmal/results.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "nilmal/errors.hpp"

namespace nilmal {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Json record_json(const ExperimentResult& result, const IterationRecord& rec) {
  Json tracks = Json::array();
  for (const auto& tr : rec.tracks) {
    Json t = {{"track", tr.name},
              {"selected", tr.selected ? Json(*tr.selected) : Json(nullptr)},
              {"train_houses", tr.train_houses},
              {"train_windows", tr.train_windows}};
    if (!tr.scores.houses.empty()) {
      Json scores = Json::object();
      for (std::size_t h = 0; h < tr.scores.houses.size(); ++h) {
        Json per = Json::object();
        for (std::size_t a = 0; a < tr.scores.appliances.size(); ++a) {
          per[tr.scores.appliances[a]] = tr.scores.values(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(a));
        }
        scores[std::to_string(tr.scores.houses[h])] = per;
      }
      t["scores"] = scores;
      if (!tr.selection.active_appliance.empty()) t["active_appliance"] = tr.selection.active_appliance;
    }
    tracks.push_back(t);
  }
  Json j = {{"iteration", rec.iteration},
            {"function", to_string(result.function)},
            {"strategy", to_string(result.strategy)},
            {"seed", result.seed},
            {"cursor", rec.cursor_date},
            {"rmse", rec.rmse},
            {"tracks", tracks}};
  if (rec.intersection) j["intersection"] = *rec.intersection;
  return j;
}

void write_run(const fs::path& dir, const ExperimentResult& result) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "records.jsonl");
    for (const auto& rec : result.records) out << record_json(result, rec).dump() << '\n';
  }
  {
    auto out = open_out(dir / "summary.csv");
    out << "iteration,cursor,track,selected,train_windows";
    for (const auto& a : result.appliances) out << ",rmse_" << a;
    out << '\n';
    for (const auto& rec : result.records) {
      for (const auto& tr : rec.tracks) {
        out << rec.iteration << ',' << rec.cursor_date << ',' << tr.name << ','
            << (tr.selected ? std::to_string(*tr.selected) : std::string()) << ',' << tr.train_windows;
        for (const auto& a : result.appliances) out << ',' << fmt::format("{}", rec.rmse.at(a));
        out << '\n';
      }
    }
  }
  for (const auto& rec : result.records) {
    bool scored = false;
    for (const auto& tr : rec.tracks) scored = scored || !tr.scores.houses.empty();
    if (!scored) continue;
    auto out = open_out(dir / fmt::format("scores_iter{:02}.csv", rec.iteration));
    out << "track,house_id,appliance,score,rank,combined,selected\n";
    for (const auto& tr : rec.tracks) {
      const auto& t = tr.scores;
      for (std::size_t h = 0; h < t.houses.size(); ++h) {
        for (std::size_t a = 0; a < t.appliances.size(); ++a) {
          const auto hi = static_cast<Eigen::Index>(h);
          const auto ai = static_cast<Eigen::Index>(a);
          out << fmt::format("{},{},{},{},{},{},{}\n", tr.name, t.houses[h], t.appliances[a], t.values(hi, ai),
                             tr.selection.ranks(hi, ai), tr.selection.combined[h],
                             tr.selected && *tr.selected == t.houses[h] ? 1 : 0);
        }
      }
    }
  }
}

void write_resolved_config(const fs::path& dir, const ExperimentConfig& config) {
  auto out = open_out(dir / "resolved_config.json");
  out << to_json(config).dump(2) << '\n';
}

void write_baseline(const fs::path& dir, const BaselineResult& result) {
  auto out = open_out(dir / "baseline.json");
  Json j = {{"seed", result.seed}, {"rmse", result.rmse}, {"train_windows", result.train_windows}};
  out << j.dump(2) << '\n';
}

std::vector<ComparisonRow> compare(std::span<const ExperimentResult> runs, std::span<const BaselineResult> totals) {
  using Key = std::tuple<std::string, std::string, std::string, int>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& run : runs) {
    for (const auto& rec : run.records) {
      for (const auto& [appliance, value] : rec.rmse) {
        groups[{to_string(run.function), to_string(run.strategy), appliance, rec.iteration}].push_back(value);
      }
    }
  }
  for (const auto& total : totals) {
    for (const auto& [appliance, value] : total.rmse) groups[{"total", "", appliance, -1}].push_back(value);
  }
  std::vector<ComparisonRow> rows;
  for (const auto& [key, values] : groups) {
    ComparisonRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), 0.0, 0.0,
                      static_cast<int>(values.size())};
    for (double v : values) row.mean += v;
    row.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    rows.push_back(row);
  }
  return rows;
}

void write_comparison(const fs::path& path, std::span<const ComparisonRow> rows) {
  auto out = open_out(path);
  out << "series,strategy,appliance,iteration,mean,std,n\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.series, r.strategy, r.appliance,
                       r.iteration < 0 ? std::string() : std::to_string(r.iteration), r.mean, r.stddev, r.count);
  }
}

std::vector<ComparisonRow> read_comparison(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::string line;
  std::getline(in, line);
  if (line.rfind("series,strategy,appliance,iteration,mean,std,n", 0) != 0) {
    throw ParseError(1, fmt::format("{} is not a comparison table", path.string()));
  }
  std::vector<ComparisonRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 7) throw ParseError(number, "expected 7 columns");
    try {
      rows.push_back({cells[0], cells[1], cells[2], cells[3].empty() ? -1 : std::stoi(cells[3]), std::stod(cells[4]),
                      std::stod(cells[5]), std::stoi(cells[6])});
    } catch (const std::logic_error&) {
      throw ParseError(number, "malformed number");
    }
  }
  return rows;
}

std::vector<SensorCount> sensor_counts(std::span<const ComparisonRow> rows, std::span<const double> fractions) {
  std::map<std::string, double> total;
  std::map<std::tuple<std::string, std::string, std::string>, std::map<int, double>> curves;
  for (const auto& r : rows) {
    if (r.iteration < 0) {
      total[r.appliance] = r.mean;
    } else {
      curves[{r.series, r.strategy, r.appliance}][r.iteration] = r.mean;
    }
  }
  std::vector<SensorCount> out;
  for (const auto& [key, points] : curves) {
    auto it = total.find(std::get<2>(key));
    if (it == total.end()) continue;
    std::vector<double> curve;
    for (const auto& [iteration, mean] : points) curve.push_back(mean);
    for (double f : fractions) {
      out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), f, (1.0 + f) * it->second,
                     sensors_to_reach(f, curve, it->second)});
    }
  }
  return out;
}

void write_sensor_counts(const fs::path& path, std::span<const SensorCount> counts) {
  auto out = open_out(path);
  out << "series,strategy,appliance,fraction,threshold,sensors\n";
  for (const auto& c : counts) {
    out << fmt::format("{},{},{},{},{},{}\n", c.series, c.strategy, c.appliance, c.fraction, c.threshold,
                       c.sensors ? std::to_string(*c.sensors) : std::string("NA"));
  }
}

std::vector<fs::path> export_plots(std::span<const ComparisonRow> rows, const fs::path& dir) {
  std::set<std::string> appliances;
  std::set<int> iterations;
  for (const auto& r : rows) {
    appliances.insert(r.appliance);
    if (r.iteration >= 0) iterations.insert(r.iteration);
  }
  std::vector<fs::path> written;
  for (const auto& a : appliances) {
    const fs::path path = dir / fmt::format("plot_{}.csv", a);
    auto out = open_out(path);
    out << "iteration,series,mean,lower,upper\n";
    for (const auto& r : rows) {
      if (r.appliance != a) continue;
      const std::string series = r.strategy.empty() ? r.series : r.series + "/" + r.strategy;
      auto line = [&](int iteration) {
        out << fmt::format("{},{},{},{},{}\n", iteration, series, r.mean, r.mean - r.stddev, r.mean + r.stddev);
      };
      if (r.iteration >= 0) {
        line(r.iteration);
      } else {
        for (int i : iterations) line(i);
      }
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace nilmal
