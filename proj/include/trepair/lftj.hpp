#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trepair/plan.hpp"
#include "trepair/view.hpp"

namespace trepair {

/// A set of join-variable assignments: those extending `prefix` whose next
/// variable lies within the bounds [lo, hi] (each bound over a one-element
/// tuple). With an empty prefix and infinite bounds it is everything.
struct Region {
  Tuple prefix;
  Bound lo = Bound::neg_inf();
  Bound hi = Bound::pos_inf();

  static Region all() { return {}; }

  bool contains(const Tuple& join_values) const {
    if (!starts_with(join_values, prefix)) return false;
    if (join_values.size() <= prefix.size()) return true;
    Tuple v{join_values[prefix.size()]};
    return cmp(v, lo) > 0 && cmp(v, hi) < 0;
  }
  bool operator==(const Region&) const = default;
};

inline int cmp(const Region& a, const Region& b) {
  if (int c = cmp(a.prefix, b.prefix)) return c;
  if (int c = cmp(a.lo, b.lo)) return c;
  return cmp(a.hi, b.hi);
}

/// One recorded dependency of a join run: atom `atom` (index into the flat
/// rule's atoms) was read over the tuple interval [lo, hi] while the join
/// was exploring `region`.
struct SensEvent {
  int atom;
  Bound lo, hi;
  Region region;
};

/// Leapfrog triejoin over one flat rule. Views are indexed like the rule's
/// atoms (negated atoms included). Emits full slot bindings in increasing
/// join-variable order.
class Join {
 public:
  Join(const FlatRule& rule, const RulePlan& plan, std::vector<const View*> views)
      : rule_(rule), plan_(plan), views_(std::move(views)) {}

  using Emit = std::function<void(const std::vector<Value>&)>;
  using Sink = std::function<void(const SensEvent&)>;

  /// Runs the join, optionally restricted to `restrict`, reporting every
  /// iterator interval to `sink`.
  void run(const Emit& emit, const Sink& sink = {}, const Region* restrict = nullptr) {
    emit_ = &emit;
    sink_ = sink ? &sink : nullptr;
    restrict_ = restrict;
    iters_.clear();
    iters_.reserve(plan_.atoms.size());
    for (const auto& ap : plan_.atoms) iters_.emplace_back(*views_[static_cast<std::size_t>(ap.atom)]);
    slots_.assign(plan_.vars.size(), Value());
    bool ok = true;
    for (std::size_t i = 0; i < plan_.atoms.size() && ok; ++i) {
      if (plan_.atoms[i].cols.empty()) {
        ok = views_[static_cast<std::size_t>(plan_.atoms[i].atom)]->contains_tuple({});
        continue;
      }
      ok = consume_fixed(static_cast<int>(i), -1, true);
    }
    if (ok && run_actions(0, -1)) level(0);
  }

  /// open/next/seek operations per atom in the last run (plan atom order).
  std::vector<std::uint64_t> op_counts() const {
    std::vector<std::uint64_t> out;
    for (const auto& it : iters_) out.push_back(it.ops());
    return out;
  }

  std::uint64_t ops() const { return ops_; }

 private:
  void record(int plan_atom, const TrieIterator& it, Region region) {
    ++ops_;
    if (!sink_) return;
    (*sink_)(SensEvent{plan_.atoms[static_cast<std::size_t>(plan_atom)].atom, it.last_lo(), it.last_hi(),
                       std::move(region)});
  }

  Region fixed_region(int level) const {
    Region r;
    r.prefix.assign(slots_.begin(), slots_.begin() + (level + 1));
    return r;
  }

  Region level_region(int level, const TrieIterator& it) const {
    Region r;
    r.prefix.assign(slots_.begin(), slots_.begin() + level);
    const auto c = static_cast<std::size_t>(it.column());
    if (it.last_lo().prefix.size() > c) r.lo = Bound::below({it.last_lo().prefix[c]});
    if (it.last_hi().prefix.size() > c) r.hi = Bound::above({it.last_hi().prefix[c]});
    return r;
  }

  // Opens and matches the fixed columns following the iterator's current
  // column. Returns false on mismatch; `opened` counts opened columns so the
  // caller can undo them.
  bool consume_fixed(int a, int level, bool from_root, int* opened = nullptr) {
    const AtomPlan& ap = plan_.atoms[static_cast<std::size_t>(a)];
    TrieIterator& it = iters_[static_cast<std::size_t>(a)];
    std::size_t c = from_root ? 0 : static_cast<std::size_t>(it.column() + 1);
    for (; c < ap.cols.size() && !ap.cols[c].join; ++c) {
      const ColSpec& col = ap.cols[c];
      const Value& want = col.is_const ? col.constant : slots_[static_cast<std::size_t>(col.slot)];
      it.open();
      if (opened) ++*opened;
      record(a, it, fixed_region(level));
      if (it.at_end()) return false;
      it.seek(want);
      record(a, it, fixed_region(level));
      if (it.at_end() || !(it.key() == want)) return false;
    }
    return true;
  }


  bool run_actions(std::size_t idx, int level) {
    for (const Action& act : plan_.actions[idx]) {
      if (act.kind == Action::Kind::Negation) {
        const PredAtom& na = rule_.atoms[static_cast<std::size_t>(act.index)];
        const View& v = *views_[static_cast<std::size_t>(act.index)];
        ++ops_;
        if (negation_holds(na, v, level)) return false;
        continue;
      }
      const PrimAtom& p = rule_.prims[static_cast<std::size_t>(act.index)];
      auto val = [&](const Term& t) -> const Value& {
        return t.is_var ? slots_[static_cast<std::size_t>(plan_.slot(t.var))] : t.value;
      };
      if (act.kind == Action::Kind::Compute) {
        if (act.eq_target == 1) {
          slots_[static_cast<std::size_t>(plan_.slot(p.a.var))] = val(p.b);
        } else if (act.eq_target == 2) {
          slots_[static_cast<std::size_t>(plan_.slot(p.b.var))] = val(p.a);
        } else {
          slots_[static_cast<std::size_t>(plan_.slot(p.out->var))] = arith(p, val(p.a), val(p.b));
        }
        continue;
      }
      if (!filter(p, val)) return false;
    }
    return true;
  }

  // True when some tuple of `v` matches the negated atom under the current
  // bindings. Wildcard columns match anything.
  bool negation_holds(const PredAtom& na, const View& v, int level) {
    std::vector<const Value*> want;
    bool all_bound = true;
    for (const auto& t : na.args) {
      if (t.is_var && plan_.slot(t.var) < 0) {
        want.push_back(nullptr);
        all_bound = false;
      } else {
        want.push_back(t.is_var ? &slots_[static_cast<std::size_t>(plan_.slot(t.var))] : &t.value);
      }
    }
    Tuple prefix;
    for (std::size_t i = 0; i < want.size() && i < na.key_arity && want[i]; ++i) prefix.push_back(*want[i]);
    if (sink_) (*sink_)(SensEvent{static_cast<int>(&na - rule_.atoms.data()),
                                  Bound::below(prefix), Bound::above(prefix), fixed_region(level)});
    if (all_bound) {
      Tuple full;
      for (const Value* w : want) full.push_back(*w);
      return v.contains_tuple(full);
    }
    View::Cursor c(v);
    for (c.seek(Bound::below(prefix)); !c.at_end() && starts_with(c.tuple(), prefix); c.seek(Bound::above(c.tuple()))) {
      bool match = true;
      for (std::size_t i = prefix.size(); i < want.size() && match; ++i) match = !want[i] || c.tuple()[i] == *want[i];
      if (match) return true;
    }
    return false;
  }

  static Value arith(const PrimAtom& p, const Value& a, const Value& b) {
    std::int64_t x = a.as_int(), y = b.as_int();
    switch (p.op) {
      case PrimAtom::Op::Add: return Value(x + y);
      case PrimAtom::Op::Sub: return Value(x - y);
      default: return Value(x * y);
    }
  }

  template <class Val>
  static bool filter(const PrimAtom& p, Val& val) {
    if (p.is_arith()) return arith(p, val(p.a), val(p.b)) == val(*p.out);
    int c = cmp(val(p.a), val(p.b));
    switch (p.op) {
      case PrimAtom::Op::Lt: return c < 0;
      case PrimAtom::Op::Le: return c <= 0;
      case PrimAtom::Op::Gt: return c > 0;
      case PrimAtom::Op::Ge: return c >= 0;
      case PrimAtom::Op::Eq: return c == 0;
      case PrimAtom::Op::Ne: return c != 0;
      default: return false;
    }
  }

  void process(int level, const std::vector<int>& parts) {
    bool ok = true;
    std::vector<int> opened(parts.size(), 0);
    for (std::size_t i = 0; i < parts.size() && ok; ++i) ok = consume_fixed(parts[i], level, false, &opened[i]);
    if (ok) ok = run_actions(static_cast<std::size_t>(level) + 1, level);
    if (ok) this->level(level + 1);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      for (int d = 0; d < opened[i]; ++d) iters_[static_cast<std::size_t>(parts[i])].up();
    }
  }

  void level(int L) {
    if (L == plan_.levels) {
      (*emit_)(slots_);
      return;
    }
    const auto& parts = plan_.participants[static_cast<std::size_t>(L)];
    const auto uL = static_cast<std::size_t>(L);
    for (int a : parts) {
      TrieIterator& it = iters_[static_cast<std::size_t>(a)];
      it.open();
      record(a, it, level_region(L, it));
    }
    auto close = [&] {
      for (int a : parts) iters_[static_cast<std::size_t>(a)].up();
    };
    for (int a : parts) {
      if (iters_[static_cast<std::size_t>(a)].at_end()) return close();
    }

    if (restrict_ && uL < restrict_->prefix.size()) {
      const Value& v = restrict_->prefix[uL];
      for (int a : parts) {
        TrieIterator& it = iters_[static_cast<std::size_t>(a)];
        it.seek(v);
        record(a, it, level_region(L, it));
        if (it.at_end() || !(it.key() == v)) return close();
      }
      slots_[uL] = v;
      process(L, parts);
      return close();
    }

    const Bound* hi = nullptr;
    if (restrict_ && uL == restrict_->prefix.size()) {
      hi = &restrict_->hi;
      if (!restrict_->lo.prefix.empty()) {
        const Value& lo = restrict_->lo.prefix[0];
        for (int a : parts) {
          TrieIterator& it = iters_[static_cast<std::size_t>(a)];
          it.seek(lo);
          record(a, it, level_region(L, it));
          if (it.at_end()) return close();
        }
      }
    }
    auto beyond = [&](const Value& x) { return hi && cmp(Tuple{x}, *hi) > 0; };

    // leapfrog search
    std::vector<int> order(parts.begin(), parts.end());
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      return cmp(iters_[static_cast<std::size_t>(x)].key(), iters_[static_cast<std::size_t>(y)].key()) < 0;
    });
    const std::size_t k = order.size();
    std::size_t p = 0;
    Value max = iters_[static_cast<std::size_t>(order[k - 1])].key();
    for (;;) {
      TrieIterator& it = iters_[static_cast<std::size_t>(order[p])];
      const Value x = it.key();
      if (beyond(x)) break;
      if (x == max) {
        slots_[uL] = x;
        process(L, parts);
        it.next();
        record(order[p], it, level_region(L, it));
      } else {
        it.seek(max);
        record(order[p], it, level_region(L, it));
      }
      if (it.at_end()) break;
      max = it.key();
      p = (p + 1) % k;
    }
    close();
  }

  const FlatRule& rule_;
  const RulePlan& plan_;
  std::vector<const View*> views_;
  std::vector<TrieIterator> iters_;
  std::vector<Value> slots_;
  const Emit* emit_ = nullptr;
  const Sink* sink_ = nullptr;
  const Region* restrict_ = nullptr;
  std::uint64_t ops_ = 0;
};

/// A derived head record: head index within the rule plus its tuple.
struct Derivation {
  int head;
  Tuple tuple;
  bool operator<(const Derivation& o) const {
    if (head != o.head) return head < o.head;
    return cmp(tuple, o.tuple) < 0;
  }
  bool operator==(const Derivation& o) const { return head == o.head && tuple == o.tuple; }
};

inline Tuple instantiate(const FlatHead& h, const RulePlan& plan, const std::vector<Value>& slots) {
  Tuple t;
  for (const auto& a : h.args) t.push_back(a.is_var ? slots[static_cast<std::size_t>(plan.slot(a.var))] : a.value);
  return t;
}

/// Raised when a function-typed head derives two values for one key.
class FunctionalDependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Evaluates a rule from scratch: every head instantiated over every
/// satisfying assignment, duplicates collapsed. Throws
/// FunctionalDependencyError when a function head gets conflicting values.
inline std::set<Derivation> eval_rule_full(const FlatRule& rule, const RulePlan& plan,
                                           const std::vector<const View*>& views) {
  std::set<Derivation> out;
  Join j(rule, plan, views);
  j.run([&](const std::vector<Value>& slots) {
    for (std::size_t h = 0; h < rule.heads.size(); ++h) {
      out.insert({static_cast<int>(h), instantiate(rule.heads[h], plan, slots)});
    }
    if (rule.heads.empty()) out.insert({-1, {}});
  });
  for (std::size_t h = 0; h < rule.heads.size(); ++h) {
    const FlatHead& fh = rule.heads[h];
    if (!fh.functional || fh.mode == HeadAtom::Mode::Retract) continue;
    const Tuple* prev = nullptr;
    for (auto it = out.lower_bound({static_cast<int>(h), {}}); it != out.end() && it->head == static_cast<int>(h); ++it) {
      if (prev && std::equal(prev->begin(), prev->begin() + static_cast<std::ptrdiff_t>(fh.key_arity),
                             it->tuple.begin())) {
        throw FunctionalDependencyError("function '" + fh.pred + "' derives two values for key " +
                                        to_string(Tuple(it->tuple.begin(), it->tuple.begin() + static_cast<std::ptrdiff_t>(fh.key_arity))));
      }
      prev = &it->tuple;
    }
  }
  return out;
}

}  // namespace trepair
