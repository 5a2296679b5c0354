#include "nilmal/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "nilmal/errors.hpp"

namespace nilmal {

namespace {

std::string join_errors(const std::string& what, const std::vector<std::string>& errors) {
  std::string out = what;
  for (const auto& e : errors) out += "\n  - " + e;
  return out;
}

template <class Parse>
void get_enum(ObjectReader& r, const std::string& key, Parse parse, std::vector<std::string>& errors) {
  std::string text;
  if (!r.get(key, text)) return;
  try {
    parse(text);
  } catch (const ConfigError& e) {
    errors.push_back(fmt::format("{}: {}", r.key_path(key), e.what()));
  }
}

void read_schema(ObjectReader& r, CsvSchema& s, std::vector<std::string>& errors) {
  std::string layout;
  if (r.get("layout", layout)) {
    if (layout == "wide") {
      s.layout = CsvSchema::Layout::wide;
    } else if (layout == "long") {
      s.layout = CsvSchema::Layout::long_form;
    } else {
      errors.push_back(fmt::format("{}: unknown layout '{}' (expected wide or long)", r.key_path("layout"), layout));
    }
  }
  r.get("timestamp_column", s.timestamp);
  r.get("house_column", s.house_id);
  r.get("mains_column", s.mains);
  r.get("appliance_columns", s.appliance_columns);
  r.get("channel_column", s.channel);
  r.get("power_column", s.power);
  r.get("mains_channel", s.mains_channel);
}

std::vector<int> read_houses(ObjectReader& r, const std::string& key) {
  std::vector<int> ids;
  r.require(key, ids);
  return ids;
}

std::optional<Minute> day_of(const std::string& date, const Dataset& dataset, const std::string& key,
                             std::vector<std::string>& errors) {
  try {
    const std::int64_t m = parse_date(date) - dataset.epoch_unix_minute();
    return m >= 0 ? m / kMinutesPerDay : -((-m + kMinutesPerDay - 1) / kMinutesPerDay);
  } catch (const std::exception& e) {
    errors.push_back(fmt::format("{}: {}", key, e.what()));
    return std::nullopt;
  }
}

}  // namespace

AcquisitionFunction parse_function(std::string_view text) {
  if (text == "entropy") return AcquisitionFunction::entropy;
  if (text == "mi") return AcquisitionFunction::mutual_information;
  if (text == "random") return AcquisitionFunction::random;
  throw ConfigError(fmt::format("unknown acquisition function '{}' (expected entropy, mi or random)", text));
}

Strategy parse_strategy(std::string_view text) {
  if (text == "singly") return Strategy::singly;
  if (text == "uniform") return Strategy::uniform;
  if (text == "rank") return Strategy::rank;
  if (text == "round-robin") return Strategy::round_robin;
  throw ConfigError(fmt::format("unknown strategy '{}' (expected singly, uniform, rank or round-robin)", text));
}

const char* to_string(AcquisitionFunction f) {
  switch (f) {
    case AcquisitionFunction::entropy: return "entropy";
    case AcquisitionFunction::mutual_information: return "mi";
    case AcquisitionFunction::random: return "random";
  }
  return "?";
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::singly: return "singly";
    case Strategy::uniform: return "uniform";
    case Strategy::rank: return "rank";
    case Strategy::round_robin: return "round-robin";
  }
  return "?";
}

ExperimentConfig parse_config(const Json& j) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  ObjectReader root(j, "", errors);

  if (root.require("version", c.version) && c.version != kConfigVersion) {
    errors.push_back(fmt::format("version: unsupported config version {} (expected {})", c.version, kConfigVersion));
  }

  if (const Json* d = root.child("data")) {
    ObjectReader r(*d, "data", errors);
    const bool has_csv = r.get("csv", c.data.csv);
    read_schema(r, c.data.schema, errors);
    if (const Json* s = r.child("synth")) {
      try {
        c.data.synth = synth_config_from_json(*s);
      } catch (const ConfigError& e) {
        errors.push_back(fmt::format("data.synth: {}", e.what()));
      }
    }
    if (has_csv == c.data.synth.has_value()) errors.push_back("data: set exactly one of csv and synth");
    r.finish();
  } else {
    errors.push_back("data: required key missing");
  }

  if (const Json* s = root.child("split")) {
    ObjectReader r(*s, "split", errors);
    for (const char* key : {"train", "pool", "test"}) {
      auto ids = read_houses(r, key);
      auto& target = std::string_view(key) == "train" ? c.split.train
                     : std::string_view(key) == "pool" ? c.split.pool
                                                       : c.split.test;
      target.insert(ids.begin(), ids.end());
      if (target.size() != ids.size()) errors.push_back(fmt::format("split.{}: duplicate house ids", key));
    }
    r.finish();
  } else {
    errors.push_back("split: required key missing");
  }

  root.get("appliances", c.appliances);

  if (const Json* m = root.child("model")) {
    ObjectReader r(*m, "model", errors);
    r.get("input_length", c.model.input_length);
    r.get("conv_channels", c.model.conv_channels);
    r.get("conv_kernels", c.model.conv_kernels);
    r.get("dense_units", c.model.dense_units);
    r.get("dropout", c.model.dropout);
    r.finish();
  }

  if (const Json* t = root.child("train")) {
    ObjectReader r(*t, "train", errors);
    r.get("learning_rate", c.train.learning_rate);
    r.get("batch_size", c.train.batch_size);
    r.get("epochs", c.train.epochs);
    r.get("beta1", c.train.beta1);
    r.get("beta2", c.train.beta2);
    r.get("epsilon", c.train.epsilon);
    r.get("grad_clip", c.train.grad_clip);
    r.get("stride_minutes", c.loop.train_stride_minutes);
    r.finish();
  }

  if (const Json* u = root.child("uncertainty")) {
    ObjectReader r(*u, "uncertainty", errors);
    r.get("passes", c.uncertainty.passes);
    r.get("samples", c.uncertainty.samples);
    get_enum(r, "mi_formula", [&](const std::string& v) { c.uncertainty.mi_formula = parse_mi_formula(v); }, errors);
    r.finish();
  }

  if (const Json* a = root.child("acquisition")) {
    ObjectReader r(*a, "acquisition", errors);
    get_enum(r, "function", [&](const std::string& v) { c.acquisition.function = parse_function(v); }, errors);
    get_enum(r, "strategy", [&](const std::string& v) { c.acquisition.strategy = parse_strategy(v); }, errors);
    r.get("round_robin_order", c.acquisition.round_robin_order);
    r.get("stride_minutes", c.acquisition.stride_minutes);
    if (const Json* w = r.child("window")) {
      ObjectReader wr(*w, "acquisition.window", errors);
      auto& win = c.acquisition.window;
      get_enum(wr, "mode", [&](const std::string& v) { win.mode = parse_window_mode(v); }, errors);
      get_enum(wr, "kernel", [&](const std::string& v) { win.kernel = parse_kernel(v); }, errors);
      wr.get("half_width_days", win.half_width);
      wr.get("causal_only", win.causal_only);
      wr.get("start", c.acquisition.window_start);
      wr.get("end", c.acquisition.window_end);
      wr.finish();
    }
    r.finish();
  }

  if (const Json* l = root.child("loop")) {
    ObjectReader r(*l, "loop", errors);
    r.get("start", c.loop.start);
    r.get("base_days", c.loop.base_days);
    r.get("cadence_days", c.loop.cadence_days);
    r.get("budget", c.loop.budget);
    r.get("test_start", c.loop.test_start);
    r.get("test_days", c.loop.test_days);
    r.get("test_stride_minutes", c.loop.test_stride_minutes);
    r.get("deterministic_test", c.loop.deterministic_test);
    r.get("seed", c.loop.seed);
    r.get("seeds", c.loop.seeds);
    r.get("thresholds", c.loop.thresholds);
    r.get("checkpoints", c.loop.checkpoints);
    r.finish();
  }

  root.get("output_dir", c.output_dir);
  root.finish();

  for (auto& e : config_violations(c)) errors.push_back(std::move(e));
  if (!errors.empty()) throw ConfigError(join_errors("invalid config:", errors));
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_config(j);
}

std::vector<std::string> config_violations(const ExperimentConfig& c) {
  std::vector<std::string> out;
  auto add = [&](const std::string& prefix, const std::vector<std::string>& v) {
    for (const auto& e : v) out.push_back(prefix + e);
  };
  add("split: ", c.split.violations(nullptr));
  Architecture arch = c.model;
  arch.appliances = {"probe"};
  add("model: ", arch.violations());
  add("train: ", c.train.violations());
  add("acquisition.window: ", c.acquisition.window.violations());

  std::set<std::string> names(c.appliances.begin(), c.appliances.end());
  if (names.size() != c.appliances.size()) out.push_back("appliances: duplicate names");
  if (c.uncertainty.passes < 1) out.push_back("uncertainty.passes: must be at least 1");
  if (c.uncertainty.samples < 1) out.push_back("uncertainty.samples: must be at least 1");
  if (c.acquisition.stride_minutes < 1) out.push_back("acquisition.stride_minutes: must be at least 1");
  for (const auto& a : c.acquisition.round_robin_order) {
    if (!c.appliances.empty() && !names.count(a)) {
      out.push_back(fmt::format("acquisition.round_robin_order: '{}' is not a configured appliance", a));
    }
  }
  const bool fixed = c.acquisition.window.mode == WindowMode::fixed;
  if (fixed && (c.acquisition.window_start.empty() || c.acquisition.window_end.empty())) {
    out.push_back("acquisition.window: a static window needs start and end dates");
  }
  if (!fixed && (!c.acquisition.window_start.empty() || !c.acquisition.window_end.empty())) {
    out.push_back("acquisition.window: start and end apply to static windows only");
  }

  const auto& l = c.loop;
  if (l.base_days < 1) out.push_back("loop.base_days: must be at least 1");
  if (l.cadence_days < 1) out.push_back("loop.cadence_days: must be at least 1");
  if (l.budget < 0) out.push_back("loop.budget: must be non-negative");
  if (l.budget > static_cast<int>(c.split.pool.size())) {
    out.push_back(fmt::format("loop.budget: {} exceeds the pool size {}", l.budget, c.split.pool.size()));
  }
  if (l.test_days < 1) out.push_back("loop.test_days: must be at least 1");
  if (l.train_stride_minutes < 1) out.push_back("train.stride_minutes: must be at least 1");
  if (l.test_stride_minutes < 1) out.push_back("loop.test_stride_minutes: must be at least 1");
  if (l.seeds.empty()) out.push_back("loop.seeds: must not be empty");
  for (double t : l.thresholds) {
    if (!(t >= 0.0)) out.push_back(fmt::format("loop.thresholds: {} must be non-negative", t));
  }
  if (c.output_dir.empty()) out.push_back("output_dir: must not be empty");
  if (c.data.synth) add("data.synth: ", c.data.synth->violations());
  return out;
}

Json to_json(const ExperimentConfig& c) {
  Json data = Json::object();
  if (c.data.synth) {
    data["synth"] = to_json(*c.data.synth);
  } else {
    const auto& s = c.data.schema;
    data = {{"csv", c.data.csv},
            {"layout", s.layout == CsvSchema::Layout::wide ? "wide" : "long"},
            {"timestamp_column", s.timestamp},
            {"house_column", s.house_id},
            {"mains_column", s.mains},
            {"appliance_columns", s.appliance_columns},
            {"channel_column", s.channel},
            {"power_column", s.power},
            {"mains_channel", s.mains_channel}};
  }
  const auto& w = c.acquisition.window;
  Json window = {{"mode", to_string(w.mode)}, {"kernel", to_string(w.kernel)}};
  if (w.mode == WindowMode::fixed) {
    window["start"] = c.acquisition.window_start;
    window["end"] = c.acquisition.window_end;
  } else {
    window["half_width_days"] = w.half_width;
    window["causal_only"] = w.causal_only;
  }
  return {
      {"version", c.version},
      {"data", data},
      {"split", {{"train", c.split.train}, {"pool", c.split.pool}, {"test", c.split.test}}},
      {"appliances", c.appliances},
      {"model",
       {{"input_length", c.model.input_length},
        {"conv_channels", c.model.conv_channels},
        {"conv_kernels", c.model.conv_kernels},
        {"dense_units", c.model.dense_units},
        {"dropout", c.model.dropout}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"grad_clip", c.train.grad_clip},
        {"stride_minutes", c.loop.train_stride_minutes}}},
      {"uncertainty",
       {{"passes", c.uncertainty.passes},
        {"samples", c.uncertainty.samples},
        {"mi_formula", to_string(c.uncertainty.mi_formula)}}},
      {"acquisition",
       {{"function", to_string(c.acquisition.function)},
        {"strategy", to_string(c.acquisition.strategy)},
        {"window", window},
        {"round_robin_order", c.acquisition.round_robin_order},
        {"stride_minutes", c.acquisition.stride_minutes}}},
      {"loop",
       {{"start", c.loop.start},
        {"base_days", c.loop.base_days},
        {"cadence_days", c.loop.cadence_days},
        {"budget", c.loop.budget},
        {"test_start", c.loop.test_start},
        {"test_days", c.loop.test_days},
        {"test_stride_minutes", c.loop.test_stride_minutes},
        {"deterministic_test", c.loop.deterministic_test},
        {"seed", c.loop.seed},
        {"seeds", c.loop.seeds},
        {"thresholds", c.loop.thresholds},
        {"checkpoints", c.loop.checkpoints}}},
      {"output_dir", c.output_dir},
  };
}

Dataset load_dataset(const DataConfig& config) {
  if (config.synth) return synthesize(*config.synth, config.synth->seed);
  return ingest_csv(config.csv, config.schema);
}

std::string format_date(const Dataset& dataset, Minute day) {
  return format_timestamp(dataset.epoch_unix_minute() + day * kMinutesPerDay).substr(0, 10);
}

Timeline resolve(ExperimentConfig& c, const Dataset& dataset) {
  std::vector<std::string> errors = c.split.violations(&dataset);

  const auto available = dataset.appliance_names();
  if (c.appliances.empty()) c.appliances = available;
  for (const auto& a : c.appliances) {
    if (!std::binary_search(available.begin(), available.end(), a)) {
      errors.push_back(fmt::format("appliances: '{}' does not occur in the data", a));
    }
  }
  if (c.appliances.empty()) errors.push_back("appliances: the data has no appliance columns");
  if (c.acquisition.round_robin_order.empty()) c.acquisition.round_robin_order = c.appliances;
  for (const auto& a : c.acquisition.round_robin_order) {
    if (std::find(c.appliances.begin(), c.appliances.end(), a) == c.appliances.end()) {
      errors.push_back(fmt::format("acquisition.round_robin_order: '{}' is not a configured appliance", a));
    }
  }

  Timeline t;
  t.cadence_days = c.loop.cadence_days;
  t.budget = c.loop.budget;
  if (c.loop.start.empty()) c.loop.start = format_date(dataset, 0);
  if (auto d = day_of(c.loop.start, dataset, "loop.start", errors)) t.start_day = *d;
  t.base_end_day = t.start_day + c.loop.base_days;
  if (c.loop.test_start.empty()) c.loop.test_start = format_date(dataset, t.horizon(t.budget));
  if (auto d = day_of(c.loop.test_start, dataset, "loop.test_start", errors)) t.test_start_day = *d;
  t.test_end_day = t.test_start_day + c.loop.test_days;

  if (c.acquisition.window.mode == WindowMode::fixed) {
    auto first = day_of(c.acquisition.window_start, dataset, "acquisition.window.start", errors);
    auto last = day_of(c.acquisition.window_end, dataset, "acquisition.window.end", errors);
    if (first && last) {
      c.acquisition.window.first_day = *first;
      c.acquisition.window.last_day = *last;
      if (*last < *first) errors.push_back("acquisition.window: end precedes start");
    }
  }

  const Minute days = dataset.common_days();
  if (t.start_day < 0) errors.push_back(fmt::format("loop.start: {} precedes the data", c.loop.start));
  if (t.horizon(t.budget) > days) {
    errors.push_back(fmt::format("loop: the last iteration needs data until {} but the data ends {}",
                                 format_date(dataset, t.horizon(t.budget)), format_date(dataset, days)));
  }
  if (t.test_start_day < 0 || t.test_end_day > days) {
    errors.push_back(fmt::format("loop: test window [{}, {}) lies outside the data", c.loop.test_start,
                                 format_date(dataset, t.test_end_day)));
  }
  if (!errors.empty()) throw ConfigError(join_errors("invalid config:", errors));
  return t;
}

}  // namespace nilmal
