#pragma once

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trepair/domain.hpp"
#include "trepair/pmap.hpp"

namespace trepair {

/// Upsert (with value tuple) or retraction of one key.
struct Patch {
  bool upsert = true;
  Tuple value;

  static Patch put(Tuple v) { return {true, std::move(v)}; }
  static Patch retraction() { return {false, {}}; }
  bool operator==(const Patch& o) const { return upsert == o.upsert && (!upsert || value == o.value); }
};

/// Delta and correction signal contents: one patch per domain point.
using DeltaMap = PMap<PointKey, Patch, PointKeyLess>;

/// Closed interval of one predicate's key space. Endpoints are bounds, so a
/// key-prefix interval and a single key are both expressible.
struct SensRecord {
  PredId pred = 0;
  Bound lo, hi;

  static SensRecord point(PredId p, const Tuple& k) { return {p, Bound::below(k), Bound::above(k)}; }
  static SensRecord whole(PredId p) { return {p, Bound::neg_inf(), Bound::pos_inf()}; }

  bool contains(PredId p, const Tuple& k) const { return pred == p && cmp(k, lo) > 0 && cmp(k, hi) < 0; }
  bool contains(const PointKey& k) const { return contains(k.pred, k.key); }
  /// True when every key inside `o` is inside this record.
  bool covers(const SensRecord& o) const {
    return pred == o.pred && cmp(lo, o.lo) <= 0 && cmp(o.hi, hi) <= 0;
  }
  bool empty() const { return cmp(lo, hi) >= 0; }
  bool operator==(const SensRecord& o) const = default;
};

inline int cmp(const SensRecord& a, const SensRecord& b) {
  if (a.pred != b.pred) return a.pred < b.pred ? -1 : 1;
  if (int c = cmp(a.lo, b.lo)) return c;
  return cmp(a.hi, b.hi);
}

struct SensLess {
  bool operator()(const SensRecord& a, const SensRecord& b) const { return cmp(a, b) < 0; }
};

inline std::string to_string(const SensRecord& r) {
  return std::to_string(r.pred) + ":[" + to_string(r.lo) + "," + to_string(r.hi) + "]";
}

/// Subtree maximum of (pred, hi): lets stabbing queries skip subtrees whose
/// intervals all end before the query point. Works for any key with
/// pred/lo/hi members ordered by (pred, lo, ...).
struct SensMaxAug {
  struct value_type {
    PredId pred = -1;
    Bound hi;
  };
  static bool less(const value_type& a, const value_type& b) {
    if (a.pred != b.pred) return a.pred < b.pred;
    return cmp(a.hi, b.hi) < 0;
  }
  template <class K, class V>
  static value_type make(const K& k, const V&, const value_type* l, const value_type* r) {
    value_type m{k.pred, k.hi};
    if (l && less(m, *l)) m = *l;
    if (r && less(m, *r)) m = *r;
    return m;
  }
  /// No interval in a subtree with summary `m` can contain (p, k).
  static bool ends_before(const value_type& m, PredId p, const Tuple& k) {
    if (m.pred != p) return m.pred < p;
    return cmp(k, m.hi) > 0;
  }
};

struct Unit {
  bool operator==(const Unit&) const = default;
};

/// Sensitivity signal contents.
using SensSet = PMap<SensRecord, Unit, SensLess, SensMaxAug>;

namespace detail {
template <class Node, class F>
bool stab_nodes(const Node* n, PredId p, const Tuple& k, F& f) {
  while (n) {
    if (SensMaxAug::ends_before(n->aug, p, k)) return true;
    if (!stab_nodes(n->left.get(), p, k, f)) return false;
    const auto& r = n->key;
    if (r.pred > p || (r.pred == p && cmp(k, r.lo) < 0)) return true;
    if (r.pred == p && cmp(k, r.hi) < 0 && !f(r)) return false;
    n = n->right.get();
  }
  return true;
}
}  // namespace detail

/// Calls f(record) for every record containing (p, k) until f returns false.
template <class M, class F>
void stab(const M& set, PredId p, const Tuple& k, F&& f) {
  detail::stab_nodes(set.root(), p, k, f);
}

template <class M>
bool stab_exists(const M& set, PredId p, const Tuple& k) {
  bool hit = false;
  stab(set, p, k, [&](const auto&) {
    hit = true;
    return false;
  });
  return hit;
}

template <class M>
std::vector<typename M::key_type> stab_all(const M& set, PredId p, const Tuple& k) {
  std::vector<typename M::key_type> out;
  stab(set, p, k, [&](const auto& r) {
    out.push_back(r);
    return true;
  });
  return out;
}

/// Merges overlapping intervals of the same predicate; membership of every
/// key is unchanged.
inline std::vector<SensRecord> sens_coalesce(std::vector<SensRecord> recs) {
  std::sort(recs.begin(), recs.end(), SensLess{});
  std::vector<SensRecord> out;
  for (auto& r : recs) {
    if (r.empty()) continue;
    if (!out.empty() && out.back().pred == r.pred && cmp(out.back().hi, r.lo) >= 0) {
      if (cmp(r.hi, out.back().hi) > 0) out.back().hi = std::move(r.hi);
    } else {
      out.push_back(std::move(r));
    }
  }
  return out;
}

enum class SignalKind : std::uint8_t { Delta, Sens, Corr };

inline const char* kind_name(SignalKind k) {
  switch (k) {
    case SignalKind::Delta: return "delta";
    case SignalKind::Sens: return "sens";
    case SignalKind::Corr: return "corr";
  }
  return "?";
}

using VersionId = std::uint64_t;

/// Net change of one key between two versions.
template <class K, class V>
struct KeyChange {
  K key;
  std::optional<V> before, after;
};

/// Record-level change: a record inserted into or removed from the signal.
template <class K, class V>
struct RecordChange {
  K key;
  V value;
  bool inserted;
};

/// Ordered record set with an append-only history of immutable versions.
/// Version 0 is empty; every effective publish creates the next version.
/// Thread-safe: one writer, any number of readers.
template <class K, class V, class Less, class Aug = NoAugment>
class VersionedSignal {
 public:
  using Map = PMap<K, V, Less, Aug>;
  using Change = KeyChange<K, V>;

  VersionedSignal(SignalKind kind, std::string name) : kind_(kind), name_(std::move(name)) {
    versions_.push_back(Map{});
    logs_.emplace_back();
  }

  SignalKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  VersionId latest() const {
    std::lock_guard<std::mutex> g(mu_);
    return versions_.size() - 1;
  }
  Map snapshot() const {
    std::lock_guard<std::mutex> g(mu_);
    return versions_.back();
  }
  Map at(VersionId v) const {
    std::lock_guard<std::mutex> g(mu_);
    check_version(v);
    return versions_[v];
  }
  std::pair<VersionId, Map> latest_snapshot() const {
    std::lock_guard<std::mutex> g(mu_);
    return {versions_.size() - 1, versions_.back()};
  }

  struct PublishResult {
    VersionId version;
    bool changed;
  };

  /// Atomically applies inserts (replacing any existing value of the key)
  /// and removes. Sensitivity signals are monotone, so removes must be empty.
  PublishResult publish(const std::vector<std::pair<K, V>>& inserts, const std::vector<K>& removes) {
    if (kind_ == SignalKind::Sens && !removes.empty()) {
      throw ContractError("sensitivity signal '" + name_ + "' is monotone: records cannot be removed");
    }
    return apply(inserts, removes);
  }

  /// Removal path for sensitivity signals, reserved for replacing an
  /// operator by a null transaction.
  PublishResult withdraw(const std::vector<std::pair<K, V>>& inserts, const std::vector<K>& removes) {
    return apply(inserts, removes);
  }

  /// Replaces the contents wholesale with `target`; publishes the difference.
  PublishResult publish_contents(const Map& target, bool allow_removal) {
    Map cur = snapshot();
    std::vector<std::pair<K, V>> ins;
    std::vector<K> rem;
    diff_maps(cur, target, [&](const K& k, const V* before, const V* after) {
      if (after) ins.emplace_back(k, *after);
      else rem.push_back(k);
      (void)before;
    });
    return allow_removal ? withdraw(ins, rem) : publish(ins, rem);
  }

  /// Net per-key changes from version `from` to version `to`, in key order.
  /// Cost is proportional to the keys touched in between, not the signal size.
  std::vector<Change> changes(VersionId from, VersionId to) const {
    Map a, b;
    std::vector<K> keys;
    {
      std::lock_guard<std::mutex> g(mu_);
      check_version(from);
      check_version(to);
      if (from > to) throw std::invalid_argument("signal '" + name_ + "': from > to");
      a = versions_[from];
      b = versions_[to];
      for (VersionId v = from + 1; v <= to; ++v) keys.insert(keys.end(), logs_[v].begin(), logs_[v].end());
    }
    Less less;
    std::sort(keys.begin(), keys.end(), less);
    keys.erase(std::unique(keys.begin(), keys.end(),
                           [&](const K& x, const K& y) { return !less(x, y) && !less(y, x); }),
               keys.end());
    std::vector<Change> out;
    for (auto& k : keys) {
      const V* x = a.find(k);
      const V* y = b.find(k);
      if (!x && !y) continue;
      if (x && y && *x == *y) continue;
      Change c{k, std::nullopt, std::nullopt};
      if (x) c.before = *x;
      if (y) c.after = *y;
      out.push_back(std::move(c));
    }
    return out;
  }

  /// Same as changes(), expanded to record insertions/removals.
  std::vector<RecordChange<K, V>> record_changes(VersionId from, VersionId to) const {
    std::vector<RecordChange<K, V>> out;
    for (auto& c : changes(from, to)) {
      if (c.before) out.push_back({c.key, *c.before, false});
      if (c.after) out.push_back({c.key, *c.after, true});
    }
    return out;
  }

  /// Drops retained history older than `keep_from`; later version ids are
  /// unaffected.
  void discard_history_before(VersionId keep_from) {
    std::lock_guard<std::mutex> g(mu_);
    for (VersionId v = floor_; v < keep_from && v + 1 < versions_.size(); ++v) {
      versions_[v] = Map{};
      logs_[v].clear();
      logs_[v].shrink_to_fit();
      floor_ = v + 1;
    }
  }

 private:
  PublishResult apply(const std::vector<std::pair<K, V>>& inserts, const std::vector<K>& removes) {
    std::lock_guard<std::mutex> g(mu_);
    Map m = versions_.back();
    std::vector<K> touched;
    for (const auto& k : removes) {
      if (m.contains(k)) {
        m = m.erase(k);
        touched.push_back(k);
      }
    }
    for (const auto& [k, v] : inserts) {
      const V* cur = m.find(k);
      if (cur && *cur == v) continue;
      m = m.insert(k, v);
      touched.push_back(k);
    }
    if (touched.empty()) return {versions_.size() - 1, false};
    versions_.push_back(std::move(m));
    logs_.push_back(std::move(touched));
    return {versions_.size() - 1, true};
  }

  void check_version(VersionId v) const {
    if (v >= versions_.size() || v < floor_) {
      throw std::out_of_range("signal '" + name_ + "': unknown version " + std::to_string(v));
    }
  }

  SignalKind kind_;
  std::string name_;
  mutable std::mutex mu_;
  std::vector<Map> versions_;
  std::vector<std::vector<K>> logs_;
  VersionId floor_ = 0;
};

/// Visits keys whose value differs between `a` and `b`, in key order.
template <class M, class F>
void diff_maps(const M& a, const M& b, F&& f) {
  if (a.same_root(b)) return;
  auto ia = a.items();
  auto ib = b.items();
  std::size_t i = 0, j = 0;
  while (i < ia.size() || j < ib.size()) {
    int c;
    if (i == ia.size()) c = 1;
    else if (j == ib.size()) c = -1;
    else c = cmp(ia[i].first, ib[j].first);
    if (c < 0) {
      f(ia[i].first, &ia[i].second, nullptr);
      ++i;
    } else if (c > 0) {
      f(ib[j].first, nullptr, &ib[j].second);
      ++j;
    } else {
      if (!(ia[i].second == ib[j].second)) f(ia[i].first, &ia[i].second, &ib[j].second);
      ++i;
      ++j;
    }
  }
}

using DeltaSignal = VersionedSignal<PointKey, Patch, PointKeyLess>;
using SensSignal = VersionedSignal<SensRecord, Unit, SensLess, SensMaxAug>;

inline nlohmann::json to_json(const PointKey& k, const Patch& p) {
  nlohmann::json j{{"pred", k.pred}, {"key", tuple_to_json(k.key)}, {"sign", p.upsert ? "+" : "-"}};
  if (p.upsert) j["value"] = tuple_to_json(p.value);
  return j;
}

inline nlohmann::json to_json(const SensRecord& r) {
  auto b = [](const Bound& x) {
    return nlohmann::json{{"prefix", tuple_to_json(x.prefix)}, {"upper", x.upper}};
  };
  return {{"pred", r.pred}, {"lo", b(r.lo)}, {"hi", b(r.hi)}};
}

/// One JSON object per line, in record order.
inline void dump_lines(std::ostream& os, const DeltaMap& m) {
  m.for_each([&](const PointKey& k, const Patch& p) { os << to_json(k, p).dump() << '\n'; });
}
inline void dump_lines(std::ostream& os, const SensSet& m) {
  m.for_each([&](const SensRecord& r, const Unit&) { os << to_json(r).dump() << '\n'; });
}

}  // namespace trepair
