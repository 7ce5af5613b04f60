#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trepair/inclftj.hpp"
#include "trepair/plan.hpp"
#include "trepair/pstore.hpp"

namespace trepair {

/// A transaction parameter: a relation supplied with the submission.
struct Param {
  std::size_t arity = 0;
  std::vector<Tuple> rows;
};
using Params = std::map<std::string, Param>;

/// Where a flat atom reads from.
struct AtomSource {
  enum class Kind : std::uint8_t { DbStart, DbEnd, Temp, Param };
  Kind kind = Kind::Temp;
  PredId db = -1;
  std::string pred;
  std::size_t key_arity = 0;
  std::size_t arity = 0;

  bool is_db() const { return kind == Kind::DbStart || kind == Kind::DbEnd; }
  /// Vertex name in the execution graph.
  std::string name() const {
    switch (kind) {
      case Kind::DbStart: return pred + "@start";
      case Kind::DbEnd: return pred + "@end";
      default: return pred;
    }
  }
};

/// A transaction's rules, checked and planned, in execution-graph order.
/// Upserts and retractions of a stored predicate P feed the vertex dP; reads
/// of P@end see P@start overlaid by dP, so they come after every rule that
/// writes P.
class Program {
 public:
  struct Rule {
    FlatRule flat;
    RulePlan plan;
    std::vector<AtomSource> sources;  // per flat atom
  };

  static std::shared_ptr<const Program> compile(SchemaPtr schema, const std::string& text, Params params = {}) {
    auto p = std::shared_ptr<Program>(new Program());
    p->schema_ = schema;
    p->text_ = text;
    Catalog cat(schema);
    for (const auto& [name, prm] : params) {
      std::vector<std::optional<Type>> types(prm.arity);
      if (!prm.rows.empty()) {
        for (std::size_t i = 0; i < prm.arity && i < prm.rows[0].size(); ++i) types[i] = prm.rows[0][i].type();
      }
      for (const auto& row : prm.rows) {
        if (row.size() != prm.arity) throw RuleError(SourcePos{}, "parameter '" + name + "' row has wrong arity");
      }
      cat.add_param(name, prm.arity, types);
      p->params_[name] = tuple_set_view(prm.rows, prm.arity);
    }
    p->param_rows_ = params;
    auto surface = parse_surface(text);
    declare_temporaries(surface, cat);
    auto flat = lower_rules(surface, cat);

    std::vector<Rule> rules;
    for (auto& f : flat) {
      Rule r;
      r.plan = plan_rule(f, cat);
      for (const auto& a : f.atoms) {
        const PredInfo* info = cat.find(a.pred);
        AtomSource s;
        s.pred = a.pred;
        s.key_arity = info->key_arity;
        s.arity = info->key_arity + info->value_arity;
        switch (info->kind) {
          case PredInfo::Kind::Db:
            s.kind = a.stage == Stage::Start ? AtomSource::Kind::DbStart : AtomSource::Kind::DbEnd;
            s.db = info->db_id;
            p->reads_.insert(info->db_id);
            break;
          case PredInfo::Kind::Param:
            s.kind = AtomSource::Kind::Param;
            break;
          case PredInfo::Kind::Temp:
            if (a.stage != Stage::Default) throw RuleError(a.pos, "'" + a.pred + "' is not stored; @start/@end do not apply");
            s.kind = AtomSource::Kind::Temp;
            p->temps_[a.pred] = s;
            break;
        }
        r.sources.push_back(std::move(s));
      }
      for (const auto& h : f.heads) {
        const PredInfo* info = cat.find(h.pred);
        if (info->kind == PredInfo::Kind::Db) {
          p->writes_.insert(info->db_id);
        } else {
          AtomSource s;
          s.pred = h.pred;
          s.key_arity = info->key_arity;
          s.arity = info->key_arity + info->value_arity;
          p->temps_[h.pred] = s;
        }
      }
      r.flat = std::move(f);
      rules.push_back(std::move(r));
    }
    p->rules_ = order(std::move(rules), *schema);
    return p;
  }

  const Schema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  const std::string& text() const { return text_; }
  const std::vector<Rule>& rules() const { return rules_; }
  const View& param(const std::string& name) const { return params_.at(name); }
  const Params& params() const { return param_rows_; }
  const std::map<std::string, AtomSource>& temps() const { return temps_; }
  const std::set<PredId>& reads() const { return reads_; }
  const std::set<PredId>& writes() const { return writes_; }
  bool read_only() const { return writes_.empty(); }

  /// Execution graph: rule vertices r<i>, predicate vertices by name, dP for
  /// the delta of stored predicate P.
  std::string to_dot() const {
    std::ostringstream os;
    os << "digraph txn {\n";
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const auto& r = rules_[i];
      os << "  r" << i << " [shape=box,label=\"" << escape(to_string(r.flat)) << "\"];\n";
      std::set<std::string> ins;
      for (const auto& s : r.sources) ins.insert(s.name());
      for (const auto& n : ins) os << "  \"" << n << "\" -> r" << i << ";\n";
      for (const auto& h : r.flat.heads) {
        const bool db = schema_->find(h.pred) != nullptr;
        os << "  r" << i << " -> \"" << (db ? "d" : "") << h.pred << "\";\n";
        if (db) os << "  \"d" << h.pred << "\" -> \"" << h.pred << "@end\";\n";
      }
    }
    os << "}\n";
    return os.str();
  }

 private:
  Program() = default;

  static std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '"' || c == '\\') o.push_back('\\');
      o.push_back(c);
    }
    return o;
  }

  /// Topological order of rules; ties keep source order.
  static std::vector<Rule> order(std::vector<Rule> rules, const Schema& schema) {
    const std::size_t n = rules.size();
    std::vector<std::set<std::size_t>> succ(n);
    std::vector<int> indeg(n, 0);
    for (std::size_t w = 0; w < n; ++w) {
      for (const auto& h : rules[w].flat.heads) {
        const bool db = schema.find(h.pred) != nullptr;
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t a = 0; a < rules[r].sources.size(); ++a) {
            const auto& s = rules[r].sources[a];
            bool reads = db ? (s.kind == AtomSource::Kind::DbEnd && s.pred == h.pred)
                            : (s.kind == AtomSource::Kind::Temp && s.pred == h.pred);
            if (!reads) continue;
            if (r == w) {
              throw RuleError(rules[r].flat.atoms[a].pos,
                              db ? "rule reads '" + h.pred + "' at the end of the transaction and also changes it; read " +
                                       h.pred + "@start instead"
                                 : "rule derives '" + h.pred + "' from itself; recursion is not supported");
            }
            if (succ[w].insert(r).second) ++indeg[r];
          }
        }
      }
    }
    std::vector<Rule> out;
    std::vector<bool> done(n, false);
    for (std::size_t round = 0; round < n; ++round) {
      std::size_t pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (!done[i] && indeg[i] == 0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        for (std::size_t i = 0; i < n; ++i) {
          if (!done[i]) throw RuleError(rules[i].flat.pos, "rules depend on each other cyclically; recursion is not supported");
        }
      }
      done[pick] = true;
      for (auto s : succ[pick]) --indeg[s];
      out.push_back(std::move(rules[pick]));
    }
    return out;
  }

  SchemaPtr schema_;
  std::string text_;
  std::vector<Rule> rules_;
  std::map<std::string, View> params_;
  Params param_rows_;
  std::map<std::string, AtomSource> temps_;
  std::set<PredId> reads_, writes_;
};

/// Protocol between the execution graph and one of its rules. Between
/// begin_maintenance and end_maintenance every input of the unit is reported
/// exactly once, as changed (with the changed tuples) or unchanged.
class ExecutionUnit {
 public:
  virtual ~ExecutionUnit() = default;
  virtual void begin_maintenance(const std::set<std::string>& changed) = 0;
  virtual void input_changed(const std::string& name, const View& view, const TupleChanges& ch) = 0;
  virtual void input_not_changed(const std::string& name, const View& view) = 0;
  virtual HeadDelta end_maintenance() = 0;
};

/// A rule maintained incrementally; the first maintenance evaluates it.
class RuleUnit : public ExecutionUnit {
 public:
  explicit RuleUnit(const Program::Rule& r) : rule_(&r), m_(r.flat, r.plan) {}

  void begin_maintenance(const std::set<std::string>&) override {
    views_.assign(rule_->sources.size(), View());
    changes_.assign(rule_->sources.size(), TupleChanges());
    any_ = false;
  }
  void input_changed(const std::string& name, const View& view, const TupleChanges& ch) override {
    for (std::size_t i = 0; i < rule_->sources.size(); ++i) {
      if (rule_->sources[i].name() != name) continue;
      views_[i] = view;
      changes_[i] = ch;
    }
    any_ = any_ || !ch.empty();
  }
  void input_not_changed(const std::string& name, const View& view) override {
    for (std::size_t i = 0; i < rule_->sources.size(); ++i) {
      if (rule_->sources[i].name() == name) views_[i] = view;
    }
  }
  HeadDelta end_maintenance() override {
    if (!started_) {
      started_ = true;
      return m_.init(std::move(views_));
    }
    return m_.update(std::move(views_), any_ ? changes_ : std::vector<TupleChanges>{});
  }

  RuleMaintainer& maintainer() { return m_; }
  const RuleMaintainer& maintainer() const { return m_; }

 private:
  const Program::Rule* rule_;
  RuleMaintainer m_;
  std::vector<View> views_;
  std::vector<TupleChanges> changes_;
  bool any_ = false;
  bool started_ = false;
};

enum class TxnStatus : std::uint8_t { Unevaluated, Evaluated, Failed };

inline const char* status_name(TxnStatus s) {
  switch (s) {
    case TxnStatus::Unevaluated: return "unevaluated";
    case TxnStatus::Evaluated: return "evaluated";
    case TxnStatus::Failed: return "failed";
  }
  return "?";
}

/// Widens a full-tuple bound to the key columns of a stored predicate.
inline Bound truncate_bound(const Bound& b, std::size_t key_arity, bool lower) {
  if (b.prefix.size() <= key_arity) return b;
  Tuple k(b.prefix.begin(), b.prefix.begin() + static_cast<std::ptrdiff_t>(key_arity));
  return lower ? Bound::below(k) : Bound::above(k);
}

/// One transaction's state: its rules evaluated over base (+) corrections,
/// maintained as either changes. Output delta is the net effect on stored
/// predicates; sensitivities only grow.
class Transaction {
 public:
  explicit Transaction(std::shared_ptr<const Program> prog) : prog_(std::move(prog)) {
    for (const auto& r : prog_->rules()) units_.push_back(std::make_unique<RuleUnit>(r));
    for (const auto& [name, s] : prog_->temps()) temps_[name];
  }

  const Program& program() const { return *prog_; }
  TxnStatus status() const { return status_; }
  bool failed() const { return status_ == TxnStatus::Failed; }
  const std::string& failure() const { return failure_; }

  /// Published delta: empty while failed.
  DeltaMap delta() const { return failed() ? DeltaMap() : delta_; }
  /// Accumulated sensitivities (never shrink).
  const SensSet& sens() const { return sens_; }
  /// Sensitivity records added since the previous call.
  std::vector<SensRecord> take_new_sens() { return std::exchange(new_sens_, {}); }

  std::vector<Tuple> temp(const std::string& name) const {
    std::vector<Tuple> out;
    temps_.at(name).rel.for_each([&](const Tuple& t, const Tuple&) { out.push_back(t); });
    return out;
  }

  std::uint64_t join_ops() const {
    std::uint64_t n = 0;
    for (const auto& u : units_) n += u->maintainer().ops();
    return n;
  }

  /// Full evaluation over base (+) corr.
  void evaluate(const DbVersion& base, const DeltaMap& corr) {
    if (status_ != TxnStatus::Unevaluated) throw std::logic_error("transaction already evaluated");
    round(base, corr, nullptr);
  }

  /// Repair after base and/or corrections changed; `changed` lists every
  /// stored key whose base value or correction may differ from last time.
  void repair(const DbVersion& base, const DeltaMap& corr, const std::vector<PointKey>& changed) {
    if (status_ == TxnStatus::Unevaluated) throw std::logic_error("repair before evaluation");
    round(base, corr, &changed);
  }

 private:
  struct TempState {
    std::map<Tuple, int, TupleLess> count;
    Relation rel;
    std::set<Tuple, TupleLess> fd_conflicts;  // keys of a function temp with two values
  };

  struct PatchLess {
    bool operator()(const Patch& a, const Patch& b) const {
      if (a.upsert != b.upsert) return a.upsert < b.upsert;
      return a.upsert && cmp(a.value, b.value) < 0;
    }
  };

  View start_view(const DbVersion& base, const DeltaMap& corr, PredId p) const {
    return View(base.relation(p), prog_->schema().at(p).key_arity()).with_patch(corr, p);
  }

  View current_view(const AtomSource& s) const {
    switch (s.kind) {
      case AtomSource::Kind::DbStart: return start_.at(s.db);
      case AtomSource::Kind::DbEnd: return start_.at(s.db).with_patch(delta_, s.db);
      case AtomSource::Kind::Temp: return View(temps_.at(s.pred).rel, s.arity);
      case AtomSource::Kind::Param: return prog_->param(s.pred);
    }
    return View();
  }

  std::vector<Tuple> candidates(const AtomSource& s) const {
    std::set<Tuple, TupleLess> keys;
    auto add = [&](const std::map<PredId, std::set<Tuple, TupleLess>>& m, PredId p) {
      auto it = m.find(p);
      if (it != m.end()) keys.insert(it->second.begin(), it->second.end());
    };
    switch (s.kind) {
      case AtomSource::Kind::DbStart: add(start_keys_, s.db); break;
      case AtomSource::Kind::DbEnd:
        add(start_keys_, s.db);
        add(delta_keys_, s.db);
        break;
      case AtomSource::Kind::Temp: {
        auto it = temp_touched_.find(s.pred);
        if (it != temp_touched_.end()) keys.insert(it->second.begin(), it->second.end());
        break;
      }
      case AtomSource::Kind::Param: break;
    }
    return {keys.begin(), keys.end()};
  }

  void round(const DbVersion& base, const DeltaMap& corr, const std::vector<PointKey>* changed) {
    const bool first = changed == nullptr;
    for (PredId p : prog_->reads()) start_[p] = start_view(base, corr, p);
    start_keys_.clear();
    delta_keys_.clear();
    temp_touched_.clear();
    if (changed) {
      for (const auto& k : *changed) {
        if (prog_->reads().count(k.pred)) start_keys_[k.pred].insert(k.key);
      }
    }
    std::map<std::string, std::pair<View, TupleChanges>> seen;  // per vertex, fixed once first read
    for (std::size_t i = 0; i < units_.size(); ++i) {
      const auto& rule = prog_->rules()[i];
      auto& unit = *units_[i];
      std::set<std::string> names, changed_names;
      for (const auto& s : rule.sources) {
        if (!names.insert(s.name()).second) continue;
        auto it = seen.find(s.name());
        if (it == seen.end()) {
          View now = current_view(s);
          TupleChanges ch;
          auto old = last_.find(s.name());
          if (!first && old != last_.end()) ch = view_changes(old->second, now, candidates(s));
          it = seen.emplace(s.name(), std::make_pair(std::move(now), std::move(ch))).first;
        }
        if (!it->second.second.empty()) changed_names.insert(s.name());
      }
      unit.begin_maintenance(changed_names);
      for (const auto& n : names) {
        const auto& [view, ch] = seen.at(n);
        if (ch.empty()) unit.input_not_changed(n, view);
        else unit.input_changed(n, view, ch);
      }
      apply(rule, unit.end_maintenance());
    }
    for (auto& [n, vc] : seen) last_[n] = std::move(vc.first);
    export_sens();
    refresh_status();
  }

  void apply(const Program::Rule& rule, const HeadDelta& d) {
    auto one = [&](const Derivation& der, int n) {
      if (der.head < 0) return;  // constraint rules: support is read from the unit
      const FlatHead& h = rule.flat.heads[static_cast<std::size_t>(der.head)];
      if (const auto* sig = prog_->schema().find(h.pred)) {
        const auto ka = static_cast<std::ptrdiff_t>(sig->key_arity());
        PointKey k{sig->id, Tuple(der.tuple.begin(), der.tuple.begin() + ka)};
        Patch p = h.mode == HeadAtom::Mode::Retract ? Patch::retraction()
                                                    : Patch::put(Tuple(der.tuple.begin() + ka, der.tuple.end()));
        bump_delta(k, p, n);
      } else {
        bump_temp(h.pred, der.tuple, n);
      }
    };
    for (const auto& r : d.removed) one(r, -1);
    for (const auto& a : d.added) one(a, +1);
  }

  void bump_delta(const PointKey& k, const Patch& p, int n) {
    auto& counts = delta_counts_[k];
    counts[p] += n;
    if (counts[p] == 0) counts.erase(p);
    if (counts.empty()) {
      delta_counts_.erase(k);
      delta_conflicts_.erase(k);
      if (delta_.contains(k)) {
        delta_ = delta_.erase(k);
        delta_keys_[k.pred].insert(k.key);
      }
      return;
    }
    if (counts.size() > 1) delta_conflicts_.insert(k);
    else delta_conflicts_.erase(k);
    const Patch& eff = counts.begin()->first;
    const Patch* cur = delta_.find(k);
    if (!cur || !(*cur == eff)) {
      delta_ = delta_.insert(k, eff);
      delta_keys_[k.pred].insert(k.key);
    }
  }

  void bump_temp(const std::string& name, const Tuple& t, int n) {
    TempState& st = temps_.at(name);
    int& c = st.count[t];
    const int was = c;
    c += n;
    if (was == 0 && c > 0) st.rel = st.rel.insert(t, Tuple{});
    if (was > 0 && c == 0) st.rel = st.rel.erase(t);
    if (c == 0) st.count.erase(t);
    temp_touched_[name].insert(t);
    const AtomSource& s = prog_->temps().at(name);
    if (s.key_arity < s.arity) {
      Tuple key(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(s.key_arity));
      int values = 0;
      st.rel.scan_from([&](const Tuple& x) { return cmp(x, Bound::below(key)) < 0; },
                       [&](const Tuple& x, const Tuple&) {
                         if (!starts_with(x, key)) return false;
                         ++values;
                         return true;
                       });
      if (values > 1) st.fd_conflicts.insert(key);
      else st.fd_conflicts.erase(key);
    }
  }

  void export_sens() {
    std::vector<SensRecord> fresh;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      const auto& rule = prog_->rules()[i];
      for (const auto& e : units_[i]->maintainer().take_added()) {
        const AtomSource& s = rule.sources[static_cast<std::size_t>(e.pred)];
        if (!s.is_db()) continue;
        SensRecord r{s.db, truncate_bound(e.lo, s.key_arity, true), truncate_bound(e.hi, s.key_arity, false)};
        if (!sens_.contains(r)) fresh.push_back(std::move(r));
      }
    }
    std::sort(fresh.begin(), fresh.end(), SensLess{});
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    if (fresh.size() > 8 && fresh.size() * 4 > sens_.size()) {
      // bulk rebuild: merge the sorted runs
      std::vector<std::pair<SensRecord, Unit>> all;
      all.reserve(sens_.size() + fresh.size());
      auto it = fresh.begin();
      sens_.for_each([&](const SensRecord& r, const Unit&) {
        for (; it != fresh.end() && SensLess{}(*it, r); ++it) all.emplace_back(*it, Unit{});
        all.emplace_back(r, Unit{});
      });
      for (; it != fresh.end(); ++it) all.emplace_back(*it, Unit{});
      sens_ = SensSet::from_sorted(std::move(all));
    } else {
      for (const auto& r : fresh) sens_ = sens_.insert(r, Unit{});
    }
    new_sens_.insert(new_sens_.end(), fresh.begin(), fresh.end());
  }

  void refresh_status() {
    failure_.clear();
    for (std::size_t i = 0; i < units_.size() && failure_.empty(); ++i) {
      const auto& rule = prog_->rules()[i];
      if (rule.flat.constraint && units_[i]->maintainer().fires()) failure_ = "constraint violated: " + to_string(rule.flat);
    }
    if (failure_.empty() && !delta_conflicts_.empty()) {
      const auto& k = *delta_conflicts_.begin();
      failure_ = "conflicting changes to " + prog_->schema().at(k.pred).name + to_string(k.key);
    }
    for (const auto& [name, st] : temps_) {
      if (failure_.empty() && !st.fd_conflicts.empty()) {
        failure_ = "function '" + name + "' derives two values for key " + to_string(*st.fd_conflicts.begin());
      }
    }
    status_ = failure_.empty() ? TxnStatus::Evaluated : TxnStatus::Failed;
  }

  std::shared_ptr<const Program> prog_;
  std::vector<std::unique_ptr<RuleUnit>> units_;
  TxnStatus status_ = TxnStatus::Unevaluated;
  std::string failure_;

  std::map<PredId, View> start_;
  std::map<std::string, View> last_;
  std::map<PredId, std::set<Tuple, TupleLess>> start_keys_, delta_keys_;
  std::map<std::string, std::set<Tuple, TupleLess>> temp_touched_;

  std::map<PointKey, std::map<Patch, int, PatchLess>, PointKeyLess> delta_counts_;
  std::set<PointKey, PointKeyLess> delta_conflicts_;
  DeltaMap delta_;
  std::map<std::string, TempState> temps_;

  SensSet sens_;
  std::vector<SensRecord> new_sens_;
};

}  // namespace trepair
