#pragma once

#include <json.hpp>

namespace schema {

using nlohmann::json;

// Replaces every value by its type name and collapses arrays and method-keyed
// objects to one representative, so two reports can be compared by layout.
inline json skeleton(json const &j, bool method_keys = false)
{
  if (j.is_object()) {
    json out = json::object();
    for (auto const &[k, v] : j.items()) {
      bool const keyed = k == "scores" || k == "averages";
      out[method_keys ? "<method>" : k] = skeleton(v, keyed);
    }
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    if (!j.empty()) out.push_back(skeleton(j[0]));
    return out;
  }
  if (j.is_string()) return "string";
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  return "null";
}

// Merges "number" and "null" leaves into "number|null" where the golden says so.
inline bool matches(json const &got, json const &golden)
{
  if (golden.is_string()) {
    auto const g = golden.get<std::string>();
    if (g == "number|null") return got == "number" || got == "null";
    return got == golden;
  }
  if (golden.is_array()) {
    return got.is_array() && got.size() == golden.size() && (golden.empty() || matches(got[0], golden[0]));
  }
  if (!got.is_object() || got.size() != golden.size()) return false;
  for (auto const &[k, v] : golden.items()) {
    if (!got.contains(k) || !matches(got[k], v)) return false;
  }
  // Key order is part of the schema.
  auto gi = got.begin();
  for (auto it = golden.begin(); it != golden.end(); ++it, ++gi) {
    if (gi.key() != it.key()) return false;
  }
  return true;
}

} // namespace schema
