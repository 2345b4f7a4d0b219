// Strict field access for JSON configs: unknown keys and wrong types are
// errors, never silently ignored.
#pragma once

#include <initializer_list>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include "json.hpp"
#include "unismmc/errors.hpp"

namespace unismmc::schema {

using json = nlohmann::json;

class Object {
 public:
  Object(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  /// Rejects keys outside `allowed`.
  void only(std::initializer_list<const char*> allowed) const {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!ok.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return path_ + "." + key; }

  template <typename T>
  T get(const char* key) const {
    if (!j_.contains(key)) throw ConfigError(path(key) + ": required");
    return convert<T>(j_.at(key), path(key));
  }

  template <typename T>
  T get_or(const char* key, T fallback) const {
    return j_.contains(key) ? convert<T>(j_.at(key), path(key)) : fallback;
  }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<long long>() >= 0))
        throw ConfigError(where + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
    } else {
      // std::vector<U>
      if (!v.is_array()) throw ConfigError(where + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    }
    return v.template get<T>();
  }

 private:
  const json& j_;
  std::string path_;
};

inline json parse(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": malformed JSON: " + e.what());
  }
}

}  // namespace unismmc::schema
