#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "crl/types.hpp"

namespace crl {

inline void require_object(const nlohmann::json& j, const std::string& context) {
  if (!j.is_object()) throw Error(ErrorCategory::config, context + ": expected a JSON object");
}

/// Rejects keys outside `allowed`; config documents are strict.
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& context) {
  require_object(j, context);
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* name) { return key == name; });
    if (!known) throw Error(ErrorCategory::config, context + ": unknown key '" + key + "'");
  }
}

/// Reads j[key] into `out` when present, with a config diagnostic on type errors.
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::config, context + "." + key + ": " + e.what());
  }
}

template <typename T>
T read_required(const nlohmann::json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw Error(ErrorCategory::config, context + ": missing key '" + key + "'");
  T out{};
  read_optional(j, key, out, context);
  return out;
}

}  // namespace crl
