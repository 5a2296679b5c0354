#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nilmal/data.hpp"
#include "nilmal/json_reader.hpp"

namespace nilmal {

/// Closed interval a per-house parameter is drawn from; lo == hi fixes it.
struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Appliance names produced by the generator.
namespace appliance {
inline constexpr const char* kAirConditioner = "air_conditioner";
inline constexpr const char* kFurnace = "furnace";
inline constexpr const char* kRefrigerator = "refrigerator";
inline constexpr const char* kDishwasher = "dishwasher";
inline constexpr const char* kClothesWasher = "clothes_washer";
}  // namespace appliance

/// Cooling or heating load that cycles with the outdoor temperature.
struct ThermostatParams {
  double ownership = 1.0;  // probability a house has the appliance
  ParamRange power_w;
  ParamRange setpoint_c;
  double full_load_delta_c = 6.0;  // temperature distance from the setpoint at 100% duty
  int cycle_minutes = 20;
};

struct FridgeParams {
  double ownership = 1.0;
  ParamRange power_w{90.0, 180.0};
  ParamRange period_minutes{45.0, 90.0};
  ParamRange duty{0.35, 0.55};
};

struct ModeParams {
  ParamRange power_w;
  ParamRange minutes;
};

/// Appliance run as sparse events, each a fixed sequence of power modes.
struct EventParams {
  double ownership = 1.0;
  double events_per_day = 0.7;
  ParamRange start_hour{7.0, 22.0};
  std::vector<ModeParams> modes;
};

struct SynthConfig {
  int houses = 15;
  int first_house_id = 1;
  std::string start_date = "2018-03-01";
  int days = 30;
  std::uint64_t seed = 7;

  ParamRange baseline_w{80.0, 250.0};
  double evening_extra_w = 150.0;  // lighting bump between 18:00 and 23:00, scaled per house
  double noise_w = 10.0;           // uniform noise bound; must stay below baseline_w.lo

  double temp_start_c = 10.0;  // seasonal ramp across the date range
  double temp_end_c = 32.0;
  double diurnal_amplitude_c = 6.0;
  double weather_sd_c = 2.0;

  ThermostatParams air_conditioner{0.6, {1800.0, 4000.0}, {22.0, 26.0}, 6.0, 20};
  ThermostatParams furnace{0.8, {300.0, 700.0}, {15.0, 19.0}, 8.0, 15};
  FridgeParams refrigerator;
  EventParams dishwasher{0.9, 0.7, {7.0, 22.0},
                         {{{150.0, 250.0}, {20.0, 30.0}},
                          {{1000.0, 1400.0}, {15.0, 25.0}},
                          {{150.0, 250.0}, {10.0, 15.0}},
                          {{600.0, 900.0}, {20.0, 30.0}}}};
  EventParams clothes_washer{0.9, 0.6, {7.0, 22.0},
                             {{{300.0, 500.0}, {10.0, 15.0}},
                              {{150.0, 250.0}, {20.0, 30.0}},
                              {{500.0, 800.0}, {8.0, 12.0}}}};

  std::vector<std::string> violations() const;
};

/// Parse a generator config; unknown keys and invalid values throw ConfigError listing all of them.
SynthConfig synth_config_from_json(const Json& j);
Json to_json(const SynthConfig& config);

/// Generator-internal decomposition of one house: mains = baseline + noise + sum of appliances,
/// summed in that order (appliances in name order).
struct SynthHouse {
  int house_id = 0;
  std::vector<double> baseline;
  std::vector<double> noise;
  std::map<std::string, std::vector<double>> appliances;
};

struct SynthOutput {
  Dataset dataset;
  std::vector<SynthHouse> houses;
  std::vector<double> temperature_c;  // shared outdoor temperature, one per minute
};

/// Deterministic for a fixed (config, seed).
SynthOutput synthesize_detailed(const SynthConfig& config, std::uint64_t seed);
Dataset synthesize(const SynthConfig& config, std::uint64_t seed);

}  // namespace nilmal
