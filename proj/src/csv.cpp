#include "nilmal/csv.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "nilmal/errors.hpp"

namespace nilmal {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, r.ptr};
}

int column_index(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  throw ParseError(1, fmt::format("missing column '{}'", name));
}

// One house being assembled row by row.
struct HouseBuilder {
  int house_id = 0;
  std::int64_t first_unix = 0;
  std::int64_t last_unix = 0;
  std::vector<double> mains;
  std::vector<std::optional<bool>> present;  // per appliance column, decided on first row
  std::vector<std::vector<double>> appliances;
};

void append_minute(HouseBuilder& b, std::int64_t ts, std::size_t line) {
  if (b.mains.empty()) {
    b.first_unix = ts;
  } else if (ts <= b.last_unix) {
    throw ValidationError(fmt::format("house {}: non-monotone timestamp {} at line {}", b.house_id,
                                      format_timestamp(ts), line));
  } else if (ts != b.last_unix + 1) {
    throw ValidationError(fmt::format("house {}: gap in timestamps, missing minute {} (next row {} at line {})",
                                      b.house_id, format_timestamp(b.last_unix + 1),
                                      format_timestamp(ts), line));
  }
  b.last_unix = ts;
}

double checked_power(const std::string& cell, const std::string& column, int house, std::size_t line) {
  auto v = parse_double(cell);
  if (!v || !std::isfinite(*v)) {
    throw ParseError(line, fmt::format("column {}: cannot parse '{}' as watts", column, cell));
  }
  if (*v < 0.0) {
    throw ValidationError(fmt::format("house {}: negative power {} W in column {} at line {}", house, *v,
                                      column, line));
  }
  return *v;
}

Dataset assemble(std::map<int, HouseBuilder>& houses, const std::vector<std::string>& names) {
  if (houses.empty()) throw ValidationError("no data rows");
  std::int64_t first = houses.begin()->second.first_unix;
  for (const auto& [id, b] : houses) first = std::min(first, b.first_unix);
  std::int64_t epoch = first - (((first % kMinutesPerDay) + kMinutesPerDay) % kMinutesPerDay);

  std::vector<PowerSeries> series;
  for (auto& [id, b] : houses) {
    PowerSeries s;
    s.house_id = id;
    s.start = b.first_unix - epoch;
    s.mains = std::move(b.mains);
    for (std::size_t a = 0; a < names.size(); ++a) {
      if (b.present[a].value_or(false)) s.appliances.emplace(names[a], std::move(b.appliances[a]));
    }
    series.push_back(std::move(s));
  }
  return Dataset(epoch, std::move(series));
}

Dataset parse_wide(std::istream& in, const CsvSchema& schema, const std::vector<std::string>& header) {
  const int ts_col = column_index(header, schema.timestamp);
  const int house_col = column_index(header, schema.house_id);
  const int mains_col = column_index(header, schema.mains);

  std::vector<std::string> names;
  std::vector<int> cols;
  if (schema.appliance_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      const auto& h = header[i];
      if (static_cast<int>(i) == mains_col || static_cast<int>(i) == ts_col ||
          static_cast<int>(i) == house_col) {
        continue;
      }
      if (h.size() > 2 && h.ends_with("_w")) {
        names.push_back(h.substr(0, h.size() - 2));
        cols.push_back(static_cast<int>(i));
      }
    }
  } else {
    for (const auto& [name, column] : schema.appliance_columns) {
      names.push_back(name);
      cols.push_back(column_index(header, column));
    }
  }

  std::map<int, HouseBuilder> houses;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw ParseError(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    }
    std::int64_t house = 0;
    if (!parse_int(cells[house_col], house)) {
      throw ParseError(line_no, fmt::format("cannot parse house id '{}'", cells[house_col]));
    }
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(cells[ts_col]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    auto [it, inserted] = houses.try_emplace(static_cast<int>(house));
    auto& b = it->second;
    if (inserted) {
      b.house_id = static_cast<int>(house);
      b.present.assign(names.size(), std::nullopt);
      b.appliances.assign(names.size(), {});
    }
    append_minute(b, ts, line_no);
    b.mains.push_back(checked_power(cells[mains_col], header[mains_col], b.house_id, line_no));
    for (std::size_t a = 0; a < names.size(); ++a) {
      const auto& cell = cells[cols[a]];
      const bool has = !cell.empty();
      if (!b.present[a]) {
        b.present[a] = has;
      } else if (*b.present[a] != has) {
        throw ParseError(line_no, fmt::format("house {}: column {} is empty on some rows only",
                                              b.house_id, header[cols[a]]));
      }
      if (has) b.appliances[a].push_back(checked_power(cell, header[cols[a]], b.house_id, line_no));
    }
  }
  return assemble(houses, names);
}

Dataset parse_long(std::istream& in, const CsvSchema& schema, const std::vector<std::string>& header) {
  const int ts_col = column_index(header, schema.timestamp);
  const int house_col = column_index(header, schema.house_id);
  const int channel_col = column_index(header, schema.channel);
  const int power_col = column_index(header, schema.power);

  // house -> channel -> (timestamp, watts, line) in file order
  struct Reading {
    std::int64_t ts;
    double watts;
    std::size_t line;
  };
  std::map<int, std::map<std::string, std::vector<Reading>>> raw;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw ParseError(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    }
    std::int64_t house = 0;
    if (!parse_int(cells[house_col], house)) {
      throw ParseError(line_no, fmt::format("cannot parse house id '{}'", cells[house_col]));
    }
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(cells[ts_col]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    std::string channel = cells[channel_col];
    if (channel != schema.mains_channel && !schema.appliance_columns.empty()) {
      auto it = std::find_if(schema.appliance_columns.begin(), schema.appliance_columns.end(),
                             [&](const auto& kv) { return kv.second == channel; });
      if (it == schema.appliance_columns.end()) continue;
      channel = it->first;
    }
    double w = checked_power(cells[power_col], channel, static_cast<int>(house), line_no);
    raw[static_cast<int>(house)][channel].push_back({ts, w, line_no});
  }

  std::set<std::string> name_set;
  for (const auto& [house, channels] : raw) {
    for (const auto& [ch, r] : channels) {
      if (ch != schema.mains_channel) name_set.insert(ch);
    }
  }
  std::vector<std::string> names(name_set.begin(), name_set.end());

  std::map<int, HouseBuilder> houses;
  for (auto& [house, channels] : raw) {
    auto mit = channels.find(schema.mains_channel);
    if (mit == channels.end()) {
      throw ValidationError(fmt::format("house {}: no '{}' channel", house, schema.mains_channel));
    }
    auto& b = houses[house];
    b.house_id = house;
    b.present.assign(names.size(), false);
    b.appliances.assign(names.size(), {});
    for (const auto& r : mit->second) {
      append_minute(b, r.ts, r.line);
      b.mains.push_back(r.watts);
    }
    for (std::size_t a = 0; a < names.size(); ++a) {
      auto cit = channels.find(names[a]);
      if (cit == channels.end()) continue;
      const auto& readings = cit->second;
      if (readings.size() != b.mains.size()) {
        throw ValidationError(fmt::format("house {}: channel {} has {} readings, mains has {}", house,
                                          names[a], readings.size(), b.mains.size()));
      }
      for (std::size_t i = 0; i < readings.size(); ++i) {
        if (readings[i].ts != b.first_unix + static_cast<std::int64_t>(i)) {
          throw ValidationError(fmt::format("house {}: channel {} timestamp {} at line {} does not match mains",
                                            house, names[a], format_timestamp(readings[i].ts),
                                            readings[i].line));
        }
        b.appliances[a].push_back(readings[i].watts);
      }
      b.present[a] = true;
    }
  }
  return assemble(houses, names);
}

}  // namespace

std::int64_t parse_date(const std::string& text) {
  int y = 0;
  unsigned mo = 0;
  unsigned d = 0;
  char dash1 = 0;
  char dash2 = 0;
  std::istringstream ss(text);
  ss >> y >> dash1 >> mo >> dash2 >> d;
  if (!ss || dash1 != '-' || dash2 != '-' || text.size() != 10) {
    throw std::invalid_argument(fmt::format("cannot parse date '{}'", text));
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
  if (!ymd.ok()) throw std::invalid_argument(fmt::format("invalid date '{}'", text));
  return static_cast<std::int64_t>(std::chrono::sys_days{ymd}.time_since_epoch().count()) * kMinutesPerDay;
}

std::int64_t parse_timestamp(const std::string& text) {
  std::int64_t minutes = 0;
  if (parse_int(text, minutes)) return minutes;
  if (text.size() < 16 || (text[10] != 'T' && text[10] != ' ')) {
    throw std::invalid_argument(fmt::format("cannot parse timestamp '{}'", text));
  }
  std::int64_t day = parse_date(text.substr(0, 10));
  std::string rest = text.substr(11);
  if (!rest.empty() && rest.back() == 'Z') rest.pop_back();
  std::int64_t hh = 0;
  std::int64_t mm = 0;
  std::int64_t ss = 0;
  bool ok = rest.size() >= 5 && rest[2] == ':' && parse_int(rest.substr(0, 2), hh) &&
            parse_int(rest.substr(3, 2), mm);
  if (ok && rest.size() > 5) ok = rest.size() == 8 && rest[5] == ':' && parse_int(rest.substr(6, 2), ss);
  if (!ok || hh > 23 || mm > 59 || ss != 0) {
    throw std::invalid_argument(fmt::format("cannot parse timestamp '{}'", text));
  }
  return day + hh * 60 + mm;
}

std::string format_timestamp(std::int64_t unix_minute) {
  std::int64_t day = unix_minute >= 0 ? unix_minute / kMinutesPerDay
                                      : -((-unix_minute + kMinutesPerDay - 1) / kMinutesPerDay);
  std::int64_t minute_of_day = unix_minute - day * kMinutesPerDay;
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:00Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                     minute_of_day / 60, minute_of_day % 60);
}

Dataset parse_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header row");
  auto header = split_row(line);
  if (schema.layout == CsvSchema::Layout::long_form) return parse_long(in, schema, header);
  return parse_wide(in, schema, header);
}

Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  return parse_csv(in, schema);
}

void write_csv(const Dataset& dataset, std::ostream& out) {
  auto names = dataset.appliance_names();
  out << "timestamp,house_id,mains_w";
  for (const auto& n : names) out << ',' << n << "_w";
  out << '\n';
  std::string row;
  for (const auto& s : dataset.series()) {
    std::vector<const std::vector<double>*> traces;
    for (const auto& n : names) {
      auto it = s.appliances.find(n);
      traces.push_back(it == s.appliances.end() ? nullptr : &it->second);
    }
    for (std::size_t i = 0; i < s.mains.size(); ++i) {
      row = format_timestamp(dataset.epoch_unix_minute() + s.start + static_cast<Minute>(i));
      row += ',';
      row += std::to_string(s.house_id);
      row += ',';
      row += format_double(s.mains[i]);
      for (const auto* t : traces) {
        row += ',';
        if (t != nullptr) row += format_double((*t)[i]);
      }
      row += '\n';
      out << row;
    }
  }
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  write_csv(dataset, out);
}

}  // namespace nilmal
