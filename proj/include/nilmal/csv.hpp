#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "nilmal/data.hpp"

namespace nilmal {

/// Column map for household CSV files.
///
/// Wide layout (canonical): one row per (house, minute) with `timestamp`, `house_id`,
/// `mains_w` and one `<appliance>_w` column per appliance. A house whose cells are all empty
/// in an appliance column does not have that appliance.
///
/// Long layout: one row per (house, minute, channel) with `timestamp`, `house_id`,
/// `channel` and `power_w`; the channel named `mains_channel` carries the aggregate.
struct CsvSchema {
  enum class Layout { wide, long_form };

  Layout layout = Layout::wide;
  std::string timestamp = "timestamp";
  std::string house_id = "house_id";
  std::string mains = "mains_w";
  /// appliance name -> column; empty means every other column ending in `_w`.
  std::map<std::string, std::string> appliance_columns;

  std::string channel = "channel";
  std::string power = "power_w";
  std::string mains_channel = "mains";
};

/// Minutes since 1970-01-01T00:00Z for an ISO-8601 date-time (`YYYY-MM-DD[T ]hh:mm[:ss][Z]`,
/// seconds must be zero) or a plain integer count of epoch minutes.
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t unix_minute);
/// Minutes since the Unix epoch for midnight of an ISO `YYYY-MM-DD` date.
std::int64_t parse_date(const std::string& text);

/// Parse household power. Rejects gaps, non-monotone timestamps and negative power.
Dataset parse_csv(std::istream& in, const CsvSchema& schema = {});
Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Canonical wide layout with ISO timestamps; absent appliances are written as empty cells.
void write_csv(const Dataset& dataset, std::ostream& out);
void write_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace nilmal
