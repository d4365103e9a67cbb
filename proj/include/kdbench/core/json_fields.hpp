#pragma once

#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "kdbench/core/error.hpp"

namespace kdb {

using Json = nlohmann::json;

// Strict reader over one JSON object: every key must be consumed, and every
// error names the full key path.
class JsonObject {
 public:
  JsonObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError("missing required key '" + path_of(key) + "'");
    return *it;
  }

  template <class T>
  T required(const std::string& key) {
    return convert<T>(raw(key), path_of(key));
  }

  template <class T>
  void optional(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) out = convert<T>(*it, path_of(key));
  }

  JsonObject object(const std::string& key) { return JsonObject(raw(key), path_of(key)); }

  // Rejects keys that were never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path_of(it.key()) + "'");
    }
  }

  template <class T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + path + "' must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) {
        throw ConfigError("'" + path + "' must be a " + (std::is_unsigned_v<T> ? "non-negative " : "") + "integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("'" + path + "' must be a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("'" + path + "' must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, Json>) {
      return v;
    } else {
      using E = typename T::value_type;
      if (!v.is_array()) throw ConfigError("'" + path + "' must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<E>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace kdb
