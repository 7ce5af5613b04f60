#pragma once

// Nested-loop rule evaluation used as a reference in tests. Works on plain
// tuple sets and shares nothing with the planner or the join.

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "trepair/rulelang.hpp"

namespace oracle {

using trepair::FlatRule;
using trepair::PrimAtom;
using trepair::Term;
using trepair::Tuple;
using trepair::Value;

using Binding = std::map<std::string, Value>;
using TupleSet = std::set<Tuple, std::less<>>;

inline bool unify(const std::vector<Term>& args, const Tuple& t, Binding& b) {
  if (args.size() != t.size()) return false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const Term& a = args[i];
    if (!a.is_var) {
      if (!(a.value == t[i])) return false;
      continue;
    }
    auto it = b.find(a.var);
    if (it == b.end()) b.emplace(a.var, t[i]);
    else if (!(it->second == t[i])) return false;
  }
  return true;
}

inline bool prims_hold(const FlatRule& r, Binding& b) {
  std::vector<bool> done(r.prims.size(), false);
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t i = 0; i < r.prims.size(); ++i) {
      if (done[i]) continue;
      const PrimAtom& p = r.prims[i];
      auto get = [&](const Term& t) -> const Value* {
        if (!t.is_var) return &t.value;
        auto it = b.find(t.var);
        return it == b.end() ? nullptr : &it->second;
      };
      const Value* x = get(p.a);
      const Value* y = get(p.b);
      if (p.is_arith()) {
        if (!x || !y) continue;
        std::int64_t v = p.op == PrimAtom::Op::Add ? x->as_int() + y->as_int()
                         : p.op == PrimAtom::Op::Sub ? x->as_int() - y->as_int()
                                                     : x->as_int() * y->as_int();
        const Value* o = get(*p.out);
        if (o && !(*o == Value(v))) return false;
        if (!o) b[p.out->var] = Value(v);
      } else if (p.op == PrimAtom::Op::Eq && (!x || !y)) {
        if (!x && !y) continue;
        if (!x) b[p.a.var] = *y;
        else b[p.b.var] = *x;
      } else {
        if (!x || !y) continue;
        bool ok = false;
        auto c = *x <=> *y;
        switch (p.op) {
          case PrimAtom::Op::Lt: ok = c < 0; break;
          case PrimAtom::Op::Le: ok = c <= 0; break;
          case PrimAtom::Op::Gt: ok = c > 0; break;
          case PrimAtom::Op::Ge: ok = c >= 0; break;
          case PrimAtom::Op::Eq: ok = c == 0; break;
          case PrimAtom::Op::Ne: ok = c != 0; break;
          default: break;
        }
        if (!ok) return false;
      }
      done[i] = true;
      progress = true;
    }
  }
  for (bool d : done) {
    if (!d) throw std::logic_error("oracle: unresolved primitive");
  }
  return true;
}

/// All satisfying bindings of the rule body. `rels[i]` holds the full tuples
/// of the rule's i-th atom (negated atoms included).
inline std::set<Binding> eval(const FlatRule& r, const std::vector<TupleSet>& rels) {
  std::set<Binding> out;
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < r.atoms.size(); ++i) {
    if (!r.atoms[i].negated) pos.push_back(i);
  }
  auto rec = [&](auto& self, std::size_t k, Binding b) -> void {
    if (k == pos.size()) {
      if (!prims_hold(r, b)) return;
      for (std::size_t i = 0; i < r.atoms.size(); ++i) {
        if (!r.atoms[i].negated) continue;
        for (const auto& t : rels[i]) {
          Binding probe = b;
          if (unify(r.atoms[i].args, t, probe)) return;
        }
      }
      out.insert(b);
      return;
    }
    for (const auto& t : rels[pos[k]]) {
      Binding nb = b;
      if (unify(r.atoms[pos[k]].args, t, nb)) self(self, k + 1, std::move(nb));
    }
  };
  rec(rec, 0, {});
  return out;
}

}  // namespace oracle
