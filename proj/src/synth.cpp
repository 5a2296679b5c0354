#include "nilmal/synth.hpp"

#include <cmath>
#include <numbers>

#include "nilmal/csv.hpp"
#include "nilmal/errors.hpp"
#include "nilmal/rng.hpp"

namespace nilmal {

namespace {

double draw(const ParamRange& r, Rng& rng) { return r.lo + (r.hi - r.lo) * uniform01(rng); }

void check_range(std::vector<std::string>& out, const std::string& name, const ParamRange& r,
                 double min_allowed) {
  if (!(r.lo <= r.hi)) out.push_back(fmt::format("{}: lower bound {} above upper bound {}", name, r.lo, r.hi));
  if (r.lo < min_allowed) out.push_back(fmt::format("{}: {} below minimum {}", name, r.lo, min_allowed));
}

void check_probability(std::vector<std::string>& out, const std::string& name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) out.push_back(fmt::format("{}: {} not in [0, 1]", name, p));
}

// JSON: a number or a two-element [lo, hi] array.
void read_range(ObjectReader& r, const std::string& key, ParamRange& out) {
  const Json* v = r.child(key);
  if (v == nullptr) return;
  if (v->is_number()) {
    out.lo = out.hi = v->get<double>();
  } else if (v->is_array() && v->size() == 2 && (*v)[0].is_number() && (*v)[1].is_number()) {
    out.lo = (*v)[0].get<double>();
    out.hi = (*v)[1].get<double>();
  } else {
    r.error(key, "expected a number or [lo, hi]");
  }
}

Json range_json(const ParamRange& r) { return Json::array({r.lo, r.hi}); }

void read_thermostat(const Json& j, const std::string& path, ThermostatParams& p,
                     std::vector<std::string>& errors) {
  ObjectReader r(j, path, errors);
  r.get("ownership", p.ownership);
  read_range(r, "power_w", p.power_w);
  read_range(r, "setpoint_c", p.setpoint_c);
  r.get("full_load_delta_c", p.full_load_delta_c);
  r.get("cycle_minutes", p.cycle_minutes);
  r.finish();
}

Json thermostat_json(const ThermostatParams& p) {
  return {{"ownership", p.ownership},
          {"power_w", range_json(p.power_w)},
          {"setpoint_c", range_json(p.setpoint_c)},
          {"full_load_delta_c", p.full_load_delta_c},
          {"cycle_minutes", p.cycle_minutes}};
}

void read_events(const Json& j, const std::string& path, EventParams& p, std::vector<std::string>& errors) {
  ObjectReader r(j, path, errors);
  r.get("ownership", p.ownership);
  r.get("events_per_day", p.events_per_day);
  read_range(r, "start_hour", p.start_hour);
  if (const Json* modes = r.child("modes")) {
    if (!modes->is_array()) {
      r.error("modes", "expected an array");
    } else {
      p.modes.clear();
      for (std::size_t i = 0; i < modes->size(); ++i) {
        ModeParams m;
        ObjectReader mr((*modes)[i], fmt::format("{}.modes[{}]", path, i), errors);
        read_range(mr, "power_w", m.power_w);
        read_range(mr, "minutes", m.minutes);
        mr.finish();
        p.modes.push_back(m);
      }
    }
  }
  r.finish();
}

Json events_json(const EventParams& p) {
  Json modes = Json::array();
  for (const auto& m : p.modes) {
    modes.push_back({{"power_w", range_json(m.power_w)}, {"minutes", range_json(m.minutes)}});
  }
  return {{"ownership", p.ownership},
          {"events_per_day", p.events_per_day},
          {"start_hour", range_json(p.start_hour)},
          {"modes", modes}};
}

std::vector<double> thermostat_trace(const ThermostatParams& p, const std::vector<double>& temp, bool cooling,
                                     Rng& rng) {
  const double power = draw(p.power_w, rng);
  const double setpoint = draw(p.setpoint_c, rng);
  const int cycle = std::max(1, p.cycle_minutes);
  const auto phase = static_cast<std::size_t>(uniform01(rng) * cycle);
  std::vector<double> trace(temp.size(), 0.0);
  // The first cycle is shortened by the phase so houses do not switch in lockstep.
  std::size_t len = static_cast<std::size_t>(cycle) - phase;
  for (std::size_t begin = 0; begin < temp.size(); begin += len, len = static_cast<std::size_t>(cycle)) {
    double delta = cooling ? temp[begin] - setpoint : setpoint - temp[begin];
    double duty = std::clamp(delta / p.full_load_delta_c, 0.0, 1.0);
    auto on = static_cast<std::size_t>(std::lround(duty * static_cast<double>(len)));
    for (std::size_t t = begin; t < std::min(begin + on, temp.size()); ++t) trace[t] = power;
  }
  return trace;
}

std::vector<double> fridge_trace(const FridgeParams& p, std::size_t minutes, Rng& rng) {
  const double power = draw(p.power_w, rng);
  const double period = std::max(2.0, std::round(draw(p.period_minutes, rng)));
  const double duty = draw(p.duty, rng);
  const double phase = std::floor(uniform01(rng) * period);
  std::vector<double> trace(minutes, 0.0);
  for (std::size_t t = 0; t < minutes; ++t) {
    double pos = std::fmod(static_cast<double>(t) + phase, period);
    if (pos < duty * period) trace[t] = power;
  }
  return trace;
}

std::vector<double> event_trace(const EventParams& p, int days, Rng& rng) {
  const auto minutes = static_cast<std::size_t>(days) * kMinutesPerDay;
  std::vector<double> trace(minutes, 0.0);
  std::poisson_distribution<int> count(p.events_per_day);
  std::size_t busy_until = 0;
  for (int d = 0; d < days; ++d) {
    int n = count(rng);
    std::vector<std::size_t> starts;
    for (int e = 0; e < n; ++e) {
      double hour = draw(p.start_hour, rng);
      starts.push_back(static_cast<std::size_t>(d) * kMinutesPerDay + static_cast<std::size_t>(hour * 60.0));
    }
    std::sort(starts.begin(), starts.end());
    for (std::size_t start : starts) {
      std::size_t t = std::max(start, busy_until);
      for (const auto& mode : p.modes) {
        double power = draw(mode.power_w, rng);
        auto len = static_cast<std::size_t>(std::lround(draw(mode.minutes, rng)));
        for (std::size_t i = 0; i < len && t < minutes; ++i, ++t) trace[t] = power;
      }
      busy_until = t;
    }
  }
  return trace;
}

}  // namespace

std::vector<std::string> SynthConfig::violations() const {
  std::vector<std::string> out;
  if (houses < 1) out.push_back(fmt::format("houses: need at least 1, got {}", houses));
  if (days < 1) out.push_back(fmt::format("days: empty date range ({} days)", days));
  try {
    parse_date(start_date);
  } catch (const std::invalid_argument& e) {
    out.push_back(fmt::format("start_date: {}", e.what()));
  }
  check_range(out, "baseline_w", baseline_w, 0.0);
  if (noise_w < 0.0) out.push_back("noise_w: must be >= 0");
  if (baseline_w.lo < noise_w) {
    out.push_back(fmt::format("baseline_w: lower bound {} must be >= noise_w {}", baseline_w.lo, noise_w));
  }
  if (evening_extra_w < 0.0) out.push_back("evening_extra_w: must be >= 0");
  if (weather_sd_c < 0.0) out.push_back("weather_sd_c: must be >= 0");
  for (const auto& [name, p] : {std::pair{"air_conditioner", &air_conditioner}, std::pair{"furnace", &furnace}}) {
    check_probability(out, std::string(name) + ".ownership", p->ownership);
    check_range(out, std::string(name) + ".power_w", p->power_w, 0.0);
    check_range(out, std::string(name) + ".setpoint_c", p->setpoint_c, -100.0);
    if (!(p->full_load_delta_c > 0.0)) out.push_back(std::string(name) + ".full_load_delta_c: must be > 0");
    if (p->cycle_minutes < 1) out.push_back(std::string(name) + ".cycle_minutes: must be >= 1");
  }
  check_probability(out, "refrigerator.ownership", refrigerator.ownership);
  check_range(out, "refrigerator.power_w", refrigerator.power_w, 0.0);
  check_range(out, "refrigerator.period_minutes", refrigerator.period_minutes, 2.0);
  check_range(out, "refrigerator.duty", refrigerator.duty, 0.0);
  if (refrigerator.duty.hi > 1.0) out.push_back("refrigerator.duty: must be <= 1");
  for (const auto& [name, p] : {std::pair{"dishwasher", &dishwasher}, std::pair{"clothes_washer", &clothes_washer}}) {
    check_probability(out, std::string(name) + ".ownership", p->ownership);
    if (p->events_per_day < 0.0) out.push_back(std::string(name) + ".events_per_day: must be >= 0");
    check_range(out, std::string(name) + ".start_hour", p->start_hour, 0.0);
    if (p->start_hour.hi >= 24.0) out.push_back(std::string(name) + ".start_hour: must be < 24");
    if (p->modes.empty()) out.push_back(std::string(name) + ".modes: need at least one mode");
    for (std::size_t i = 0; i < p->modes.size(); ++i) {
      check_range(out, fmt::format("{}.modes[{}].power_w", name, i), p->modes[i].power_w, 0.0);
      check_range(out, fmt::format("{}.modes[{}].minutes", name, i), p->modes[i].minutes, 1.0);
    }
  }
  return out;
}

SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  std::vector<std::string> errors;
  ObjectReader r(j, "", errors);
  int version = 1;
  r.get("version", version);
  if (version != 1) r.error("version", fmt::format("unsupported version {}", version));
  r.get("houses", c.houses);
  r.get("first_house_id", c.first_house_id);
  r.get("start_date", c.start_date);
  r.get("days", c.days);
  r.get("seed", c.seed);
  read_range(r, "baseline_w", c.baseline_w);
  r.get("evening_extra_w", c.evening_extra_w);
  r.get("noise_w", c.noise_w);
  if (const Json* t = r.child("temperature")) {
    ObjectReader tr(*t, "temperature", errors);
    tr.get("start_c", c.temp_start_c);
    tr.get("end_c", c.temp_end_c);
    tr.get("diurnal_amplitude_c", c.diurnal_amplitude_c);
    tr.get("weather_sd_c", c.weather_sd_c);
    tr.finish();
  }
  if (const Json* a = r.child("appliances")) {
    ObjectReader ar(*a, "appliances", errors);
    if (const Json* v = ar.child(appliance::kAirConditioner)) {
      read_thermostat(*v, "appliances.air_conditioner", c.air_conditioner, errors);
    }
    if (const Json* v = ar.child(appliance::kFurnace)) read_thermostat(*v, "appliances.furnace", c.furnace, errors);
    if (const Json* v = ar.child(appliance::kRefrigerator)) {
      ObjectReader fr(*v, "appliances.refrigerator", errors);
      fr.get("ownership", c.refrigerator.ownership);
      read_range(fr, "power_w", c.refrigerator.power_w);
      read_range(fr, "period_minutes", c.refrigerator.period_minutes);
      read_range(fr, "duty", c.refrigerator.duty);
      fr.finish();
    }
    if (const Json* v = ar.child(appliance::kDishwasher)) {
      read_events(*v, "appliances.dishwasher", c.dishwasher, errors);
    }
    if (const Json* v = ar.child(appliance::kClothesWasher)) {
      read_events(*v, "appliances.clothes_washer", c.clothes_washer, errors);
    }
    ar.finish();
  }
  r.finish();
  for (auto& v : c.violations()) errors.push_back(std::move(v));
  if (!errors.empty()) {
    std::string msg = "invalid synthetic config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

Json to_json(const SynthConfig& c) {
  return {{"version", 1},
          {"houses", c.houses},
          {"first_house_id", c.first_house_id},
          {"start_date", c.start_date},
          {"days", c.days},
          {"seed", c.seed},
          {"baseline_w", range_json(c.baseline_w)},
          {"evening_extra_w", c.evening_extra_w},
          {"noise_w", c.noise_w},
          {"temperature",
           {{"start_c", c.temp_start_c},
            {"end_c", c.temp_end_c},
            {"diurnal_amplitude_c", c.diurnal_amplitude_c},
            {"weather_sd_c", c.weather_sd_c}}},
          {"appliances",
           {{appliance::kAirConditioner, thermostat_json(c.air_conditioner)},
            {appliance::kFurnace, thermostat_json(c.furnace)},
            {appliance::kRefrigerator,
             {{"ownership", c.refrigerator.ownership},
              {"power_w", range_json(c.refrigerator.power_w)},
              {"period_minutes", range_json(c.refrigerator.period_minutes)},
              {"duty", range_json(c.refrigerator.duty)}}},
            {appliance::kDishwasher, events_json(c.dishwasher)},
            {appliance::kClothesWasher, events_json(c.clothes_washer)}}}};
}

SynthOutput synthesize_detailed(const SynthConfig& config, std::uint64_t seed) {
  auto problems = config.violations();
  if (!problems.empty()) throw ConfigError("invalid synthetic config: " + problems.front());

  const auto minutes = static_cast<std::size_t>(config.days) * kMinutesPerDay;
  SynthOutput out;

  // Shared outdoor temperature: seasonal ramp, diurnal cycle peaking mid-afternoon, daily weather offset.
  Rng weather = keyed_rng({seed, stream_tag("weather")});
  std::normal_distribution<double> weather_noise(0.0, 1.0);
  std::vector<double> offsets(static_cast<std::size_t>(config.days));
  for (auto& o : offsets) o = config.weather_sd_c * weather_noise(weather);
  out.temperature_c.resize(minutes);
  for (std::size_t t = 0; t < minutes; ++t) {
    double frac = static_cast<double>(t) / static_cast<double>(minutes);
    double hour = static_cast<double>(t % kMinutesPerDay) / 60.0;
    out.temperature_c[t] = config.temp_start_c + (config.temp_end_c - config.temp_start_c) * frac +
                           config.diurnal_amplitude_c * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0) +
                           offsets[t / kMinutesPerDay];
  }

  std::vector<PowerSeries> series;
  for (int h = 0; h < config.houses; ++h) {
    const int id = config.first_house_id + h;
    Rng rng = keyed_rng({seed, stream_tag("house"), static_cast<std::uint64_t>(id)});
    SynthHouse house;
    house.house_id = id;

    const double base = draw(config.baseline_w, rng);
    const double evening = config.evening_extra_w * (0.5 + uniform01(rng));
    house.baseline.resize(minutes);
    house.noise.resize(minutes);
    for (std::size_t t = 0; t < minutes; ++t) {
      auto minute_of_day = static_cast<int>(t % kMinutesPerDay);
      house.baseline[t] = base + ((minute_of_day >= 18 * 60 && minute_of_day < 23 * 60) ? evening : 0.0);
      house.noise[t] = config.noise_w * (2.0 * uniform01(rng) - 1.0);
    }

    // Ownership is drawn for every appliance before any trace so that changing one
    // appliance's parameters leaves the others' streams intact.
    bool has_ac = uniform01(rng) < config.air_conditioner.ownership;
    bool has_furnace = uniform01(rng) < config.furnace.ownership;
    bool has_fridge = uniform01(rng) < config.refrigerator.ownership;
    bool has_dish = uniform01(rng) < config.dishwasher.ownership;
    bool has_washer = uniform01(rng) < config.clothes_washer.ownership;

    auto sub = [&](const char* name) { return keyed_rng({seed, stream_tag(name), static_cast<std::uint64_t>(id)}); };
    if (has_ac) {
      Rng r = sub(appliance::kAirConditioner);
      house.appliances[appliance::kAirConditioner] =
          thermostat_trace(config.air_conditioner, out.temperature_c, true, r);
    }
    if (has_furnace) {
      Rng r = sub(appliance::kFurnace);
      house.appliances[appliance::kFurnace] = thermostat_trace(config.furnace, out.temperature_c, false, r);
    }
    if (has_fridge) {
      Rng r = sub(appliance::kRefrigerator);
      house.appliances[appliance::kRefrigerator] = fridge_trace(config.refrigerator, minutes, r);
    }
    if (has_dish) {
      Rng r = sub(appliance::kDishwasher);
      house.appliances[appliance::kDishwasher] = event_trace(config.dishwasher, config.days, r);
    }
    if (has_washer) {
      Rng r = sub(appliance::kClothesWasher);
      house.appliances[appliance::kClothesWasher] = event_trace(config.clothes_washer, config.days, r);
    }

    PowerSeries s;
    s.house_id = id;
    s.start = 0;
    s.mains.resize(minutes);
    for (std::size_t t = 0; t < minutes; ++t) s.mains[t] = house.baseline[t] + house.noise[t];
    for (const auto& [name, trace] : house.appliances) {
      for (std::size_t t = 0; t < minutes; ++t) s.mains[t] += trace[t];
    }
    s.appliances = house.appliances;
    series.push_back(std::move(s));
    out.houses.push_back(std::move(house));
  }
  out.dataset = Dataset(parse_date(config.start_date), std::move(series));
  return out;
}

Dataset synthesize(const SynthConfig& config, std::uint64_t seed) {
  return synthesize_detailed(config, seed).dataset;
}

}  // namespace nilmal
