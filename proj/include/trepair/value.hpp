#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace trepair {

/// Raised when values of different type tags are compared, or when a tuple
/// does not match a predicate signature.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller violates an operation's contract (e.g. removing a
/// record from a monotone signal).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Type : std::uint8_t { Int, String, Bool };

inline const char* type_name(Type t) {
  switch (t) {
    case Type::Int: return "int";
    case Type::String: return "string";
    case Type::Bool: return "bool";
  }
  return "?";
}

inline Type parse_type(const std::string& s) {
  if (s == "int" || s == "int64") return Type::Int;
  if (s == "string") return Type::String;
  if (s == "bool") return Type::Bool;
  throw SchemaError("unknown type '" + s + "'");
}

/// A typed scalar. Ordering is total within a tag; comparing across tags
/// throws SchemaError.
class Value {
 public:
  Value() : v_(std::int64_t{0}) {}
  Value(std::int64_t i) : v_(i) {}          // NOLINT(google-explicit-constructor)
  Value(int i) : v_(std::int64_t{i}) {}     // NOLINT(google-explicit-constructor)
  Value(std::string s) : v_(std::move(s)) {}  // NOLINT(google-explicit-constructor)
  Value(const char* s) : v_(std::string(s)) {}  // NOLINT(google-explicit-constructor)
  Value(bool b) : v_(b) {}                  // NOLINT(google-explicit-constructor)

  Type type() const { return static_cast<Type>(v_.index()); }
  bool is_int() const { return v_.index() == 0; }
  std::int64_t as_int() const { return std::get<std::int64_t>(v_); }
  const std::string& as_string() const { return std::get<std::string>(v_); }
  bool as_bool() const { return std::get<bool>(v_); }

  std::strong_ordering operator<=>(const Value& o) const {
    if (v_.index() != o.v_.index()) {
      throw SchemaError(std::string("cannot compare ") + type_name(type()) +
                        " with " + type_name(o.type()));
    }
    switch (v_.index()) {
      case 0: return as_int() <=> o.as_int();
      case 1: {
        int c = as_string().compare(o.as_string());
        return c < 0 ? std::strong_ordering::less
                     : c > 0 ? std::strong_ordering::greater
                             : std::strong_ordering::equal;
      }
      default: return static_cast<int>(as_bool()) <=> static_cast<int>(o.as_bool());
    }
  }
  bool operator==(const Value& o) const {
    return v_.index() == o.v_.index() && v_ == o.v_;
  }

  std::size_t hash() const {
    std::size_t h = std::hash<std::size_t>{}(v_.index());
    std::size_t x = std::visit([](const auto& a) { return std::hash<std::decay_t<decltype(a)>>{}(a); }, v_);
    return h ^ (x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  }

  friend std::ostream& operator<<(std::ostream& os, const Value& v) {
    switch (v.v_.index()) {
      case 0: return os << v.as_int();
      case 1: {
        os << '"';
        for (char c : v.as_string()) {
          if (c == '"' || c == '\\') os << '\\';
          os << c;
        }
        return os << '"';
      }
      default: return os << (v.as_bool() ? "true" : "false");
    }
  }

 private:
  std::variant<std::int64_t, std::string, bool> v_;
};

/// Key or value tuple; ordered lexicographically (a proper prefix sorts first).
using Tuple = std::vector<Value>;

inline int cmp(const Value& a, const Value& b) {
  auto c = a <=> b;
  return c < 0 ? -1 : c > 0 ? 1 : 0;
}

inline int cmp(const Tuple& a, const Tuple& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (int c = cmp(a[i], b[i])) return c;
  }
  return a.size() < b.size() ? -1 : a.size() > b.size() ? 1 : 0;
}

inline bool starts_with(const Tuple& t, const Tuple& prefix) {
  if (t.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (!(t[i] == prefix[i])) return false;
  }
  return true;
}

inline Tuple concat(const Tuple& a, const Tuple& b) {
  Tuple r;
  r.reserve(a.size() + b.size());
  r.insert(r.end(), a.begin(), a.end());
  r.insert(r.end(), b.begin(), b.end());
  return r;
}

inline std::string to_string(const Tuple& t) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) os << ',';
    os << t[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t hash_tuple(const Tuple& t) {
  std::size_t h = 0xcbf29ce484222325ULL;
  for (const auto& v : t) h = (h ^ v.hash()) * 0x100000001b3ULL;
  return h;
}

struct TupleHash {
  std::size_t operator()(const Tuple& t) const { return hash_tuple(t); }
};

/// A position in tuple order lying strictly between tuples: just before
/// (upper == false) or just after (upper == true) every tuple that starts with
/// `prefix`. An empty prefix therefore denotes -inf / +inf of a key space.
struct Bound {
  Tuple prefix;
  bool upper = false;

  static Bound below(Tuple p) { return Bound{std::move(p), false}; }
  static Bound above(Tuple p) { return Bound{std::move(p), true}; }
  static Bound neg_inf() { return Bound{{}, false}; }
  static Bound pos_inf() { return Bound{{}, true}; }

  bool operator==(const Bound&) const = default;
};

/// Tuple vs bound; never returns 0.
inline int cmp(const Tuple& k, const Bound& b) {
  const std::size_t n = std::min(k.size(), b.prefix.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (int c = cmp(k[i], b.prefix[i])) return c;
  }
  if (k.size() >= b.prefix.size()) return b.upper ? -1 : 1;
  return -1;
}

inline int cmp(const Bound& a, const Bound& b) {
  const std::size_t n = std::min(a.prefix.size(), b.prefix.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (int c = cmp(a.prefix[i], b.prefix[i])) return c;
  }
  if (a.prefix.size() == b.prefix.size()) {
    return a.upper == b.upper ? 0 : (a.upper ? 1 : -1);
  }
  if (a.prefix.size() < b.prefix.size()) return a.upper ? 1 : -1;
  return b.upper ? -1 : 1;
}

inline std::string to_string(const Bound& b) {
  if (b.prefix.empty()) return b.upper ? "+inf" : "-inf";
  return to_string(b.prefix) + (b.upper ? "+" : "-");
}

}  // namespace trepair
