#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "trepair/lftj.hpp"
#include "trepair/signal.hpp"

namespace trepair {

/// Sensitivity index entry: atom `pred` (flat atom index) was read over
/// [lo, hi] while exploring `region`.
struct IndexEntry {
  int pred = 0;
  Bound lo, hi;
  Region region;
  bool operator==(const IndexEntry&) const = default;
};

struct IndexEntryLess {
  bool operator()(const IndexEntry& a, const IndexEntry& b) const {
    if (a.pred != b.pred) return a.pred < b.pred;
    if (int c = cmp(a.lo, b.lo)) return c < 0;
    if (int c = cmp(a.hi, b.hi)) return c < 0;
    return cmp(a.region, b.region) < 0;
  }
};

/// Search key for the first region whose prefix extends `prefix` by a value
/// above `after`.
struct ExtensionProbe {
  const Tuple& prefix;
  const Bound& after;
};

inline bool before_probe(const Region& a, const ExtensionProbe& p) {
  const std::size_t n = std::min(a.prefix.size(), p.prefix.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (int c = cmp(a.prefix[i], p.prefix[i])) return c < 0;
  }
  if (a.prefix.size() <= p.prefix.size()) return true;
  return cmp(Tuple{a.prefix[p.prefix.size()]}, p.after) < 0;
}

struct RegionLess {
  using is_transparent = void;
  bool operator()(const Region& a, const Region& b) const { return cmp(a, b) < 0; }
  bool operator()(const Region& a, const ExtensionProbe& p) const { return before_probe(a, p); }
  bool operator()(const ExtensionProbe& p, const Region& a) const { return !before_probe(a, p); }
};

using SensIndex = PMap<IndexEntry, Unit, IndexEntryLess, SensMaxAug>;

/// True when every assignment in `inner` is also in `outer`.
inline bool region_within(const Region& inner, const Region& outer) {
  if (!starts_with(inner.prefix, outer.prefix)) return false;
  if (inner.prefix.size() > outer.prefix.size()) {
    Tuple v{inner.prefix[outer.prefix.size()]};
    return cmp(v, outer.lo) > 0 && cmp(v, outer.hi) < 0;
  }
  return cmp(outer.lo, inner.lo) <= 0 && cmp(inner.hi, outer.hi) <= 0;
}

/// Regions of `rs` not contained in another region of `rs`.
inline std::vector<Region> outermost(const std::set<Region, RegionLess>& rs) {
  // per prefix, in (lo, hi) order, with the running maximum of hi
  struct Group {
    std::vector<const Region*> rs;
    std::vector<const Bound*> max_hi;
  };
  std::map<Tuple, Group> groups;
  for (const auto& r : rs) {
    auto& g = groups[r.prefix];
    g.max_hi.push_back(g.max_hi.empty() || cmp(r.hi, *g.max_hi.back()) > 0 ? &r.hi : g.max_hi.back());
    g.rs.push_back(&r);
  }
  std::vector<Region> out;
  for (const auto& [prefix, g] : groups) {
    for (std::size_t i = 0; i < g.rs.size(); ++i) {
      const Region& r = *g.rs[i];
      bool nested = (i > 0 && cmp(*g.max_hi[i - 1], r.hi) >= 0) || (i + 1 < g.rs.size() && g.rs[i + 1]->lo == r.lo);
      for (std::size_t k = 0; !nested && k < r.prefix.size(); ++k) {
        auto it = groups.find(Tuple(r.prefix.begin(), r.prefix.begin() + static_cast<std::ptrdiff_t>(k)));
        if (it == groups.end()) continue;
        const Tuple v{r.prefix[k]};
        const auto& h = it->second;
        const auto n = std::partition_point(h.rs.begin(), h.rs.end(),
                                            [&](const Region* o) { return cmp(v, o->lo) > 0; }) -
                       h.rs.begin();
        nested = n > 0 && cmp(v, *h.max_hi[static_cast<std::size_t>(n - 1)]) < 0;
      }
      if (!nested) out.push_back(r);
    }
  }
  return out;
}

/// Full tuples that differ between two views at the given keys: what was
/// there before goes to `removed`, what is there after goes to `added`.
struct TupleChanges {
  std::vector<Tuple> removed, added;
  bool empty() const { return removed.empty() && added.empty(); }
};

inline TupleChanges view_changes(const View& before, const View& after, const std::vector<Tuple>& keys) {
  TupleChanges out;
  for (const auto& k : keys) {
    auto b = before.find(k);
    auto a = after.find(k);
    if (b == a) continue;
    if (b) out.removed.push_back(concat(k, *b));
    if (a) out.added.push_back(concat(k, *a));
  }
  return out;
}

/// Change in a rule's derived head records.
struct HeadDelta {
  std::vector<Derivation> added, removed;
  std::optional<std::string> fd_error;  // a function head now has two values for one key
  bool empty() const { return added.empty() && removed.empty(); }
};

/// Keeps one rule's satisfying assignments up to date as its input views
/// change. Each derivation is supported by a count of assignments; only
/// 0 <-> positive transitions show up in the head delta. Evaluation records
/// iterator intervals in a sensitivity index, and an update re-runs the join
/// (old and new views) only in the regions whose intervals contain a changed
/// tuple.
class RuleMaintainer {
 public:
  RuleMaintainer(FlatRule rule, RulePlan plan) : rule_(std::move(rule)), plan_(std::move(plan)) {}

  const FlatRule& rule() const { return rule_; }
  const RulePlan& plan() const { return plan_; }
  const SensIndex& index() const { return index_; }
  const std::map<Derivation, int>& support() const { return support_; }
  const std::vector<View>& views() const { return views_; }
  std::uint64_t ops() const { return ops_; }
  std::uint64_t reruns() const { return reruns_; }

  /// Evaluates from scratch over `views` (one per flat atom).
  HeadDelta init(std::vector<View> views) {
    views_ = std::move(views);
    index_ = SensIndex();
    by_region_.clear();
    auto old = support_;
    support_.clear();
    std::vector<IndexEntry> fresh;
    Region all;
    for (const auto& b : run(views_, &all, &fresh)) add_support(b, 1);
    std::sort(fresh.begin(), fresh.end(), IndexEntryLess{});
    fresh.erase(std::unique(fresh.begin(), fresh.end(),
                            [](const IndexEntry& a, const IndexEntry& b) { return !IndexEntryLess{}(a, b); }),
                fresh.end());
    std::vector<std::pair<IndexEntry, Unit>> items;
    items.reserve(fresh.size());
    for (auto& e : fresh) {
      by_region_[e.region].push_back(e);
      added_.push_back(e);
      items.emplace_back(std::move(e), Unit{});
    }
    index_ = SensIndex::from_sorted(std::move(items));
    HeadDelta d;
    for (const auto& [k, n] : support_) {
      if (!old.count(k)) d.added.push_back(k);
    }
    for (const auto& [k, n] : old) {
      if (!support_.count(k)) d.removed.push_back(k);
    }
    d.fd_error = check_fd(d.added);
    return d;
  }

  /// Moves to `views`; changed[i] holds the full tuples of atom i that were
  /// inserted or removed relative to the current views.
  HeadDelta update(std::vector<View> views, const std::vector<TupleChanges>& changed) {
    std::set<Region, RegionLess> regions;
    for (std::size_t a = 0; a < changed.size(); ++a) {
      for (const auto* list : {&changed[a].removed, &changed[a].added}) {
        for (const auto& t : *list) {
          stab(index_, static_cast<int>(a), t, [&](const IndexEntry& e) {
            regions.insert(e.region);
            return true;
          });
        }
      }
    }
    const std::vector<Region> todo = outermost(regions);

    std::set<std::vector<Value>> before, after;
    std::vector<IndexEntry> fresh;
    for (const auto& r : todo) {
      auto b = run(views_, &r, nullptr);
      before.insert(b.begin(), b.end());
      auto a = run(views, &r, &fresh);
      after.insert(a.begin(), a.end());
      ++reruns_;
    }
    views_ = std::move(views);
    for (const auto& r : todo) erase_within(r);
    for (auto& e : fresh) insert_entry(std::move(e));

    std::map<Derivation, int> net;
    for (const auto& b : before) {
      if (!after.count(b)) count_into(net, b, -1);
    }
    for (const auto& a : after) {
      if (!before.count(a)) count_into(net, a, +1);
    }
    HeadDelta d;
    for (const auto& [k, n] : net) {
      if (n == 0) continue;
      int& s = support_[k];
      const int was = s;
      s += n;
      if (was == 0 && s > 0) d.added.push_back(k);
      if (was > 0 && s == 0) d.removed.push_back(k);
      if (s == 0) support_.erase(k);
    }
    d.fd_error = check_fd(d.added);
    return d;
  }

  /// Whether the rule currently has any satisfying assignment.
  bool fires() const { return !support_.empty(); }

  /// Index entries inserted since the previous call.
  std::vector<IndexEntry> take_added() { return std::exchange(added_, {}); }

 private:
  std::vector<std::vector<Value>> run(const std::vector<View>& views, const Region* r, std::vector<IndexEntry>* sink) {
    std::vector<const View*> ptrs;
    for (const auto& v : views) ptrs.push_back(&v);
    Join j(rule_, plan_, std::move(ptrs));
    std::vector<std::vector<Value>> out;
    Join::Sink s;
    if (sink) {
      s = [&](const SensEvent& e) { sink->push_back(IndexEntry{e.atom, e.lo, e.hi, e.region}); };
    }
    j.run([&](const std::vector<Value>& b) { out.push_back(b); }, s, r);
    ops_ += j.ops();
    return out;
  }

  void count_into(std::map<Derivation, int>& m, const std::vector<Value>& b, int n) const {
    if (rule_.heads.empty()) {
      m[{-1, {}}] += n;
      return;
    }
    for (std::size_t h = 0; h < rule_.heads.size(); ++h) {
      m[{static_cast<int>(h), instantiate(rule_.heads[h], plan_, b)}] += n;
    }
  }

  void add_support(const std::vector<Value>& b, int n) {
    std::map<Derivation, int> m;
    count_into(m, b, n);
    for (auto& [k, c] : m) support_[k] += c;
  }

  std::optional<std::string> check_fd(const std::vector<Derivation>& added) const {
    for (const auto& d : added) {
      if (d.head < 0) continue;
      const FlatHead& h = rule_.heads[static_cast<std::size_t>(d.head)];
      if (!h.functional || h.mode == HeadAtom::Mode::Retract) continue;
      const auto ka = static_cast<std::ptrdiff_t>(h.key_arity);
      Tuple key(d.tuple.begin(), d.tuple.begin() + ka);
      auto it = support_.lower_bound({d.head, key});
      int n = 0;
      for (; it != support_.end() && it->first.head == d.head && starts_with(it->first.tuple, key); ++it) ++n;
      if (n > 1) return "function '" + h.pred + "' derives two values for key " + to_string(key);
    }
    return std::nullopt;
  }

  void insert_entry(IndexEntry e) {
    if (index_.find(e)) return;
    by_region_[e.region].push_back(e);
    added_.push_back(e);
    index_ = index_.insert(std::move(e), Unit{});
  }

  void erase_within(const Region& r) {
    auto drop = [&](auto it) {
      for (const auto& e : it->second) index_ = index_.erase(e);
      return by_region_.erase(it);
    };
    // same prefix, interval inside r
    for (auto it = by_region_.lower_bound(Region{r.prefix, r.lo, Bound::neg_inf()});
         it != by_region_.end() && it->first.prefix == r.prefix && cmp(it->first.lo, r.hi) <= 0;) {
      it = cmp(it->first.hi, r.hi) <= 0 ? drop(it) : std::next(it);
    }
    // longer prefixes whose next value lies inside r
    const std::size_t n = r.prefix.size();
    for (auto it = by_region_.lower_bound(ExtensionProbe{r.prefix, r.lo});
         it != by_region_.end() && it->first.prefix.size() > n && starts_with(it->first.prefix, r.prefix) &&
         cmp(Tuple{it->first.prefix[n]}, r.hi) < 0;) {
      it = drop(it);
    }
  }

  FlatRule rule_;
  RulePlan plan_;
  std::vector<View> views_;
  SensIndex index_;
  std::map<Region, std::vector<IndexEntry>, RegionLess> by_region_;
  std::map<Derivation, int> support_;
  std::vector<IndexEntry> added_;
  std::uint64_t ops_ = 0;
  std::uint64_t reruns_ = 0;
};

}  // namespace trepair
