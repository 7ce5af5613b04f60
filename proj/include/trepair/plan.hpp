#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trepair/rulelang.hpp"

namespace trepair {

/// How the join treats one column of a positive atom.
struct ColSpec {
  bool join = false;  // bound by leapfrogging at `level`
  int level = -1;
  // fixed columns: a constant, or a variable slot bound before this column
  bool is_const = false;
  Value constant;
  int slot = -1;
};

struct AtomPlan {
  int atom = -1;  // index into FlatRule::atoms
  std::vector<ColSpec> cols;
};

struct Action {
  enum class Kind : std::uint8_t { Compute, Filter, Negation };
  Kind kind;
  int index;         // prim index (Compute/Filter) or atom index (Negation)
  int eq_target = 0;  // Compute of `x = e`: 1 when x is the left term, 2 when right
};

/// Evaluation plan for one flat rule. Variables live in slots: join
/// variables first (slot == level), then computed variables.
struct RulePlan {
  std::vector<std::string> vars;
  int levels = 0;
  std::vector<AtomPlan> atoms;                 // positive atoms
  std::vector<std::vector<int>> participants;  // per level: indexes into atoms
  std::vector<std::vector<Action>> actions;    // per level + 1 (0 = before any level)
  std::vector<int> atom_for;                   // FlatRule atom index -> AtomPlan index (or -1)
  std::vector<std::optional<Type>> types;      // per slot, when known

  int slot(const std::string& v) const {
    auto it = std::find(vars.begin(), vars.end(), v);
    return it == vars.end() ? -1 : static_cast<int>(it - vars.begin());
  }
  /// Join variable order, e.g. [x, y].
  std::vector<std::string> var_order() const { return {vars.begin(), vars.begin() + levels}; }
};

namespace detail {

inline bool prim_inputs_known(const PrimAtom& p, const std::set<std::string>& known) {
  auto ok = [&](const Term& t) { return !t.is_var || known.count(t.var); };
  return ok(p.a) && ok(p.b);
}

inline void unify_type(std::map<std::string, Type>& types, const Term& t, Type ty, const SourcePos& pos) {
  if (!t.is_var) {
    if (t.value.type() != ty) {
      throw RuleError(pos, "constant " + to_string(Tuple{t.value}) + " is " + type_name(t.value.type()) +
                               ", expected " + type_name(ty));
    }
    return;
  }
  auto [it, fresh] = types.emplace(t.var, ty);
  if (!fresh && it->second != ty) {
    throw RuleError(pos, "variable '" + t.var + "' used as both " + type_name(it->second) + " and " + type_name(ty));
  }
}

inline std::optional<Type> term_type(const std::map<std::string, Type>& types, const Term& t) {
  if (!t.is_var) return t.value.type();
  auto it = types.find(t.var);
  if (it == types.end()) return std::nullopt;
  return it->second;
}

}  // namespace detail

/// Chooses a join variable order and schedules primitives, negations and
/// fixed columns. Throws RuleError when the body is not evaluable: a
/// variable not bound by a positive atom or a computation, or atoms whose
/// column orders conflict.
inline RulePlan plan_rule(const FlatRule& r, const Catalog& cat) {
  RulePlan plan;

  // type inference over stored columns, constants and arithmetic
  std::map<std::string, Type> types;
  for (const auto& a : r.atoms) {
    const PredInfo* info = cat.find(a.pred);
    if (!info) continue;
    for (std::size_t j = 0; j < a.args.size() && j < info->types.size(); ++j) {
      if (info->types[j]) detail::unify_type(types, a.args[j], *info->types[j], a.pos);
    }
  }
  for (const auto& h : r.heads) {
    const PredInfo* info = cat.find(h.pred);
    if (!info) continue;
    for (std::size_t j = 0; j < h.args.size() && j < info->types.size(); ++j) {
      if (info->types[j]) detail::unify_type(types, h.args[j], *info->types[j], h.pos);
    }
  }
  for (bool changed = true; changed;) {
    changed = false;
    std::size_t before = types.size();
    for (const auto& p : r.prims) {
      if (p.is_arith()) {
        detail::unify_type(types, p.a, Type::Int, p.pos);
        detail::unify_type(types, p.b, Type::Int, p.pos);
        detail::unify_type(types, *p.out, Type::Int, p.pos);
      } else {
        auto ta = detail::term_type(types, p.a);
        auto tb = detail::term_type(types, p.b);
        if (ta && tb && *ta != *tb) {
          throw RuleError(p.pos, std::string("comparison between ") + type_name(*ta) + " and " + type_name(*tb));
        }
        if (ta && !tb) detail::unify_type(types, p.b, *ta, p.pos);
        if (tb && !ta) detail::unify_type(types, p.a, *tb, p.pos);
      }
    }
    changed = types.size() != before;
  }

  // join variables: those in positive atoms, in order of first appearance
  std::vector<std::string> join_vars;
  std::set<std::string> join_set;
  for (const auto& a : r.atoms) {
    if (a.negated) continue;
    for (const auto& t : a.args) {
      if (t.is_var && join_set.insert(t.var).second) join_vars.push_back(t.var);
    }
  }

  // column-order constraints: within an atom, first occurrences in column order
  std::map<std::string, std::set<std::string>> succ;
  std::map<std::string, int> indeg;
  for (const auto& v : join_vars) indeg[v] = 0;
  for (const auto& a : r.atoms) {
    if (a.negated) continue;
    std::vector<std::string> firsts;
    for (const auto& t : a.args) {
      if (t.is_var && std::find(firsts.begin(), firsts.end(), t.var) == firsts.end()) firsts.push_back(t.var);
    }
    for (std::size_t i = 0; i + 1 < firsts.size(); ++i) {
      if (succ[firsts[i]].insert(firsts[i + 1]).second) ++indeg[firsts[i + 1]];
    }
  }
  std::vector<std::string> order;
  std::set<std::string> placed;
  while (order.size() < join_vars.size()) {
    bool progress = false;
    for (const auto& v : join_vars) {
      if (placed.count(v) || indeg[v] != 0) continue;
      order.push_back(v);
      placed.insert(v);
      for (const auto& w : succ[v]) --indeg[w];
      progress = true;
      break;
    }
    if (!progress) {
      throw RuleError(r.pos, "no variable order is compatible with the column order of every atom");
    }
  }
  plan.vars = order;
  plan.levels = static_cast<int>(order.size());

  // computed variables and the level at which each slot becomes available
  std::map<std::string, int> avail;
  for (int i = 0; i < plan.levels; ++i) avail[order[static_cast<std::size_t>(i)]] = i;
  std::set<std::string> known(order.begin(), order.end());
  auto term_level = [&](const Term& t) { return t.is_var ? avail.at(t.var) : -1; };
  std::vector<bool> scheduled(r.prims.size(), false);
  std::vector<std::pair<int, Action>> sched;  // (level, action) in dependency order
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t i = 0; i < r.prims.size(); ++i) {
      if (scheduled[i]) continue;
      const PrimAtom& p = r.prims[i];
      std::optional<Term> out = p.out;
      const Term* a = &p.a;
      const Term* b = &p.b;
      int eq_target = 0;
      if (!out && p.op == PrimAtom::Op::Eq) {
        // x = e binds x when e is known and x is not
        if (p.a.is_var && !known.count(p.a.var) && (!p.b.is_var || known.count(p.b.var))) {
          out = p.a;
          a = &p.b;
          b = &p.b;
          eq_target = 1;
        } else if (p.b.is_var && !known.count(p.b.var) && (!p.a.is_var || known.count(p.a.var))) {
          out = p.b;
          a = &p.a;
          b = &p.a;
          eq_target = 2;
        }
      }
      auto ok = [&](const Term* t) { return !t->is_var || known.count(t->var); };
      if (!ok(a) || !ok(b)) continue;
      int lvl = std::max(term_level(*a), term_level(*b));
      scheduled[i] = true;
      progress = true;
      if (out && out->is_var && !known.count(out->var)) {
        known.insert(out->var);
        avail[out->var] = lvl;
        plan.vars.push_back(out->var);
        sched.push_back({lvl, {Action::Kind::Compute, static_cast<int>(i), eq_target}});
      } else {
        if (out) lvl = std::max(lvl, term_level(*out));
        sched.push_back({lvl, {Action::Kind::Filter, static_cast<int>(i)}});
      }
    }
  }
  for (std::size_t i = 0; i < r.prims.size(); ++i) {
    if (scheduled[i]) continue;
    const PrimAtom& p = r.prims[i];
    for (const Term* t : {&p.a, &p.b}) {
      if (t->is_var && !known.count(t->var)) {
        throw RuleError(p.pos, "variable '" + t->var + "' is not bound by a positive atom");
      }
    }
    throw RuleError(p.pos, "variable '" + p.out->var + "' is computed from unbound inputs");
  }
  for (std::size_t i = 0; i < r.atoms.size(); ++i) {
    const PredAtom& a = r.atoms[i];
    if (!a.negated) continue;
    int lvl = -1;
    for (const auto& t : a.args) {
      if (!t.is_var || (t.wildcard && !known.count(t.var))) continue;
      if (!known.count(t.var)) {
        throw RuleError(a.pos, "variable '" + t.var + "' occurs only under negation");
      }
      lvl = std::max(lvl, avail[t.var]);
    }
    sched.push_back({lvl, {Action::Kind::Negation, static_cast<int>(i)}});
  }
  for (const auto& h : r.heads) {
    for (const auto& t : h.args) {
      if (t.is_var && !known.count(t.var)) {
        throw RuleError(h.pos, "head variable '" + t.var + "' is not bound in the body");
      }
    }
  }

  plan.actions.assign(static_cast<std::size_t>(plan.levels) + 1, {});
  for (auto& [lvl, act] : sched) plan.actions[static_cast<std::size_t>(lvl + 1)].push_back(act);

  // positive atom plans
  plan.participants.assign(static_cast<std::size_t>(plan.levels), {});
  plan.atom_for.assign(r.atoms.size(), -1);
  for (std::size_t i = 0; i < r.atoms.size(); ++i) {
    const PredAtom& a = r.atoms[i];
    if (a.negated) continue;
    AtomPlan ap;
    ap.atom = static_cast<int>(i);
    std::set<std::string> seen;
    for (const auto& t : a.args) {
      ColSpec c;
      if (!t.is_var) {
        c.is_const = true;
        c.constant = t.value;
      } else if (seen.count(t.var)) {
        c.slot = plan.slot(t.var);
      } else {
        seen.insert(t.var);
        c.join = true;
        c.level = avail.at(t.var);
        c.slot = c.level;
      }
      ap.cols.push_back(std::move(c));
    }
    plan.atom_for[i] = static_cast<int>(plan.atoms.size());
    for (const auto& c : ap.cols) {
      if (c.join) plan.participants[static_cast<std::size_t>(c.level)].push_back(static_cast<int>(plan.atoms.size()));
    }
    plan.atoms.push_back(std::move(ap));
  }

  plan.types.resize(plan.vars.size());
  for (std::size_t i = 0; i < plan.vars.size(); ++i) {
    auto it = types.find(plan.vars[i]);
    if (it != types.end()) plan.types[i] = it->second;
  }
  return plan;
}

/// True when `order` lets every positive atom be read as a trie: each atom's
/// first-occurring variables appear in `order` in column order.
inline bool trie_compatible(const FlatRule& r, const std::vector<std::string>& order) {
  auto pos = [&](const std::string& v) {
    auto it = std::find(order.begin(), order.end(), v);
    return it == order.end() ? -1 : static_cast<int>(it - order.begin());
  };
  for (const auto& a : r.atoms) {
    if (a.negated) continue;
    int last = -1;
    std::set<std::string> seen;
    for (const auto& t : a.args) {
      if (!t.is_var || !seen.insert(t.var).second) continue;
      int p = pos(t.var);
      if (p < 0 || p < last) return false;
      last = p;
    }
  }
  return true;
}

}  // namespace trepair
