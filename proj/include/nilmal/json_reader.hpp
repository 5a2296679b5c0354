#pragma once

#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace nilmal {

using Json = nlohmann::json;

/// Strict reader for one JSON object: records a message for every type mismatch,
/// missing required key and unknown key instead of stopping at the first one.
class ObjectReader {
 public:
  ObjectReader(const Json& object, std::string path, std::vector<std::string>& errors)
      : object_(object), path_(std::move(path)), errors_(errors) {
    if (!object_.is_object()) {
      errors_.push_back(fmt::format("{}: expected an object", path_.empty() ? "<root>" : path_));
      ok_ = false;
    }
  }

  bool ok() const { return ok_; }
  const std::string& path() const { return path_; }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Leaves `out` untouched when the key is absent.
  template <class T>
  bool get(const std::string& key, T& out) {
    if (!ok_) return false;
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return false;
    try {
      out = it->template get<T>();
      return true;
    } catch (const nlohmann::json::exception&) {
      errors_.push_back(fmt::format("{}: wrong type ({})", key_path(key), it->type_name()));
      return false;
    }
  }

  template <class T>
  bool require(const std::string& key, T& out) {
    if (!ok_) return false;
    if (object_.find(key) == object_.end()) {
      seen_.insert(key);
      errors_.push_back(fmt::format("{}: required key missing", key_path(key)));
      return false;
    }
    return get(key, out);
  }

  /// Pointer to a nested value, or null when absent.
  const Json* child(const std::string& key) {
    if (!ok_) return nullptr;
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  void error(const std::string& key, const std::string& message) {
    errors_.push_back(fmt::format("{}: {}", key_path(key), message));
  }

  /// Report keys that were never asked for.
  void finish() {
    if (!ok_) return;
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) errors_.push_back(fmt::format("{}: unknown key", key_path(it.key())));
    }
  }

 private:
  const Json& object_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

}  // namespace nilmal
