#pragma once

// Serial transaction execution over plain maps, using the nested-loop rule
// evaluator. Only the parsed rules and their dependency order are shared with
// the engine.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "trepair/txn.hpp"

namespace serial {

using trepair::PointKey;
using trepair::PredId;
using trepair::Tuple;

/// Stored contents: pred -> key -> value.
using Db = std::map<PredId, std::map<Tuple, Tuple>>;

struct Outcome {
  bool failed = false;
  std::map<std::pair<PredId, Tuple>, std::optional<Tuple>> delta;  // nullopt = retraction
};

inline Db from_version(const trepair::DbVersion& v) {
  Db db;
  for (const auto& sig : v.schema().predicates()) {
    auto& m = db[sig.id];
    v.relation(sig.id).for_each([&](const Tuple& k, const Tuple& val) { m[k] = val; });
  }
  return db;
}

inline oracle::TupleSet full_tuples(const std::map<Tuple, Tuple>& m) {
  oracle::TupleSet s;
  for (const auto& [k, v] : m) s.insert(trepair::concat(k, v));
  return s;
}

inline Tuple head_tuple(const trepair::FlatHead& h, const oracle::Binding& b) {
  Tuple t;
  for (const auto& a : h.args) t.push_back(a.is_var ? b.at(a.var) : a.value);
  return t;
}

/// Runs one transaction against `db`; on success the delta is applied.
inline Outcome run(const trepair::Program& prog, Db& db) {
  Outcome out;
  std::map<std::pair<PredId, Tuple>, std::set<std::optional<Tuple>>> writes;
  std::map<std::string, oracle::TupleSet> temps;
  auto end_view = [&](PredId p) {
    auto m = db[p];
    for (const auto& [k, vs] : writes) {
      if (k.first != p || vs.size() != 1) continue;
      const auto& v = *vs.begin();
      if (v) m[k.second] = *v;
      else m.erase(k.second);
    }
    return m;
  };
  for (const auto& rule : prog.rules()) {
    std::vector<oracle::TupleSet> rels;
    for (const auto& s : rule.sources) {
      switch (s.kind) {
        case trepair::AtomSource::Kind::DbStart: rels.push_back(full_tuples(db[s.db])); break;
        case trepair::AtomSource::Kind::DbEnd: rels.push_back(full_tuples(end_view(s.db))); break;
        case trepair::AtomSource::Kind::Temp: rels.push_back(temps[s.pred]); break;
        case trepair::AtomSource::Kind::Param: {
          const auto& rows = prog.params().at(s.pred).rows;
          rels.emplace_back(rows.begin(), rows.end());
          break;
        }
      }
    }
    auto bindings = oracle::eval(rule.flat, rels);
    if (rule.flat.constraint && !bindings.empty()) out.failed = true;
    for (const auto& b : bindings) {
      for (const auto& h : rule.flat.heads) {
        Tuple t = head_tuple(h, b);
        if (const auto* sig = prog.schema().find(h.pred)) {
          const auto ka = static_cast<std::ptrdiff_t>(sig->key_arity());
          Tuple key(t.begin(), t.begin() + ka);
          std::optional<Tuple> val;
          if (h.mode != trepair::HeadAtom::Mode::Retract) val = Tuple(t.begin() + ka, t.end());
          writes[{sig->id, key}].insert(val);
        } else {
          temps[h.pred].insert(t);
        }
      }
    }
  }
  for (const auto& [name, set] : temps) {
    const auto& src = prog.temps().at(name);
    if (src.key_arity == src.arity) continue;
    std::set<Tuple> keys;
    for (const auto& t : set) {
      Tuple k(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(src.key_arity));
      if (!keys.insert(k).second) out.failed = true;
    }
  }
  for (const auto& [k, vs] : writes) {
    if (vs.size() > 1) out.failed = true;
  }
  if (out.failed) return out;
  for (const auto& [k, vs] : writes) {
    out.delta[k] = *vs.begin();
    if (*vs.begin()) db[k.first][k.second] = **vs.begin();
    else db[k.first].erase(k.second);
  }
  return out;
}

}  // namespace serial
