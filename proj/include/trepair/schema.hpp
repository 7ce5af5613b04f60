#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trepair/value.hpp"

namespace trepair {

using PredId = int;

/// Signature of a stored predicate. Relations have no value columns; a
/// function with no key columns is a scalar.
struct PredicateSig {
  std::string name;
  PredId id = -1;
  std::vector<Type> key_types;
  std::vector<Type> value_types;

  bool is_relation() const { return value_types.empty(); }
  std::size_t key_arity() const { return key_types.size(); }
  std::size_t value_arity() const { return value_types.size(); }
  std::size_t arity() const { return key_types.size() + value_types.size(); }
};

inline void check_tuple(const PredicateSig& sig, const Tuple& t,
                        const std::vector<Type>& types, const char* what) {
  if (t.size() != types.size()) {
    throw SchemaError(sig.name + ": " + what + " arity " + std::to_string(t.size()) +
                      ", expected " + std::to_string(types.size()));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].type() != types[i]) {
      throw SchemaError(sig.name + ": " + what + " column " + std::to_string(i) + " is " +
                        type_name(t[i].type()) + ", expected " + type_name(types[i]));
    }
  }
}

/// Fixed set of predicates; ids follow declaration order and define the
/// predicate-major order of the global domain.
class Schema {
 public:
  PredId add(std::string name, std::vector<Type> key, std::vector<Type> value = {}) {
    if (by_name_.count(name)) throw SchemaError("duplicate predicate '" + name + "'");
    PredicateSig sig{name, static_cast<PredId>(preds_.size()), std::move(key), std::move(value)};
    by_name_[name] = sig.id;
    preds_.push_back(std::move(sig));
    return preds_.back().id;
  }

  const PredicateSig* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &preds_[static_cast<std::size_t>(it->second)];
  }
  const PredicateSig& at(PredId id) const { return preds_.at(static_cast<std::size_t>(id)); }
  const PredicateSig& at(const std::string& name) const {
    const auto* p = find(name);
    if (!p) throw SchemaError("unknown predicate '" + name + "'");
    return *p;
  }
  std::size_t size() const { return preds_.size(); }
  const std::vector<PredicateSig>& predicates() const { return preds_; }

  nlohmann::json to_json() const {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : preds_) {
      nlohmann::json k = nlohmann::json::array(), v = nlohmann::json::array();
      for (auto t : p.key_types) k.push_back(type_name(t));
      for (auto t : p.value_types) v.push_back(type_name(t));
      preds.push_back({{"name", p.name}, {"key", k}, {"value", v}});
    }
    return {{"predicates", preds}};
  }

  /// `{"predicates":[{"name":"inventory","key":["int"],"value":["int"]}, ...]}`
  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    for (const auto& p : j.at("predicates")) {
      std::vector<Type> k, v;
      for (const auto& t : p.at("key")) k.push_back(parse_type(t.get<std::string>()));
      if (p.contains("value")) {
        for (const auto& t : p.at("value")) v.push_back(parse_type(t.get<std::string>()));
      }
      s.add(p.at("name").get<std::string>(), std::move(k), std::move(v));
    }
    return s;
  }

 private:
  std::vector<PredicateSig> preds_;
  std::map<std::string, PredId> by_name_;
};

using SchemaPtr = std::shared_ptr<const Schema>;

inline nlohmann::json value_to_json(const Value& v) {
  switch (v.type()) {
    case Type::Int: return v.as_int();
    case Type::String: return v.as_string();
    case Type::Bool: return v.as_bool();
  }
  return nullptr;
}

inline Value value_from_json(const nlohmann::json& j) {
  if (j.is_boolean()) return Value(j.get<bool>());
  if (j.is_number_integer()) return Value(j.get<std::int64_t>());
  if (j.is_string()) return Value(j.get<std::string>());
  throw SchemaError("unsupported JSON value " + j.dump());
}

inline nlohmann::json tuple_to_json(const Tuple& t) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& v : t) a.push_back(value_to_json(v));
  return a;
}

inline Tuple tuple_from_json(const nlohmann::json& j) {
  Tuple t;
  for (const auto& e : j) t.push_back(value_from_json(e));
  return t;
}

}  // namespace trepair
