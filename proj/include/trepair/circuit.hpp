#pragma once

#include <array>
#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "trepair/domain.hpp"
#include "trepair/signal.hpp"
#include "trepair/txn.hpp"

namespace trepair {

enum class OpKind : std::uint8_t { Txn, MergeDelta, MergeSens, Corr };

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::Txn: return "txn";
    case OpKind::MergeDelta: return "merge_delta";
    case OpKind::MergeSens: return "merge_sens";
    case OpKind::Corr: return "corr";
  }
  return "?";
}

/// Scheduling rank; smaller runs first.
using Rank = std::array<std::int64_t, 3>;

using SignalPtr = const void*;

/// Base of the circuit's operators. An operator reads the latest versions of
/// its inputs and publishes to its outputs; refresh() returns the outputs
/// that changed.
class Operator {
 public:
  virtual ~Operator() = default;
  virtual OpKind kind() const = 0;
  virtual std::vector<SignalPtr> refresh() = 0;
  virtual std::vector<SignalPtr> inputs() const = 0;

  Rank rank{};
  std::string label;
  std::vector<SignalPtr> outputs;
  std::atomic<bool> dead{false};
  // scheduler state, guarded by the engine lock
  bool queued = false;
  bool running = false;
  bool again = false;
  std::uint64_t seq = 0;
};

/// Splits a sensitivity record at domain point p: side 0 holds keys < p,
/// side 1 keys >= p.
inline std::vector<std::pair<int, SensRecord>> split_sens(const SensRecord& r, const DomainPoint& p) {
  if (p.kind == DomainPoint::Kind::NegInf) return {{1, r}};
  if (p.kind == DomainPoint::Kind::PosInf) return {{0, r}};
  if (r.pred != p.pred) return {{r.pred < p.pred ? 0 : 1, r}};
  Bound b = Bound::below(p.key);
  if (cmp(r.hi, b) <= 0) return {{0, r}};
  if (cmp(r.lo, b) >= 0) return {{1, r}};
  return {{0, SensRecord{r.pred, r.lo, b}}, {1, SensRecord{r.pred, b, r.hi}}};
}

/// Calls f(key, patch) for the records of `m` inside sensitivity record r.
template <class F>
void scan_interval(const DeltaMap& m, const SensRecord& r, F&& f) {
  m.scan_from([&](const PointKey& x) { return x.pred < r.pred || (x.pred == r.pred && cmp(x.key, r.lo) < 0); },
              [&](const PointKey& x, const Patch& p) {
                if (x.pred != r.pred || cmp(x.key, r.hi) > 0) return false;
                f(x, p);
                return true;
              });
}

/// Merges two children's deltas for one subdomain; the later (right) child
/// wins per key. Output is split into the two halves of the subdomain.
class MergeDeltaOp : public Operator {
 public:
  MergeDeltaOp(DomainPoint split, std::shared_ptr<DeltaSignal> in0, std::shared_ptr<DeltaSignal> in1,
               std::shared_ptr<DeltaSignal> out0, std::shared_ptr<DeltaSignal> out1)
      : split_(std::move(split)), in_{std::move(in0), std::move(in1)}, out_{std::move(out0), std::move(out1)} {}

  OpKind kind() const override { return OpKind::MergeDelta; }
  std::vector<SignalPtr> inputs() const override { return {in_[0].get(), in_[1].get()}; }

  std::vector<SignalPtr> refresh() override {
    std::set<PointKey, PointKeyLess> keys;
    DeltaMap snap[2];
    for (int i = 0; i < 2; ++i) {
      auto [v, m] = in_[i]->latest_snapshot();
      for (const auto& c : in_[i]->changes(seen_[i], v)) keys.insert(c.key);
      seen_[i] = v;
      snap[i] = std::move(m);
    }
    std::vector<std::pair<PointKey, Patch>> ins[2];
    std::vector<PointKey> rem[2];
    for (const auto& k : keys) {
      const Patch* p = snap[1].find(k);
      if (!p) p = snap[0].find(k);
      const int side = cmp(k, split_) < 0 ? 0 : 1;
      if (p) ins[side].emplace_back(k, *p);
      else rem[side].push_back(k);
    }
    std::vector<SignalPtr> changed;
    for (int s = 0; s < 2; ++s) {
      if (ins[s].empty() && rem[s].empty()) continue;
      if (out_[s]->publish(ins[s], rem[s]).changed) changed.push_back(out_[s].get());
    }
    return changed;
  }

 private:
  DomainPoint split_;
  std::shared_ptr<DeltaSignal> in_[2], out_[2];
  VersionId seen_[2] = {0, 0};
};

/// Union of two children's sensitivities, split at the subdomain's split
/// point. Pieces are reference counted so withdrawn inputs retract exactly
/// the pieces no other input record still produces.
class MergeSensOp : public Operator {
 public:
  MergeSensOp(DomainPoint split, std::shared_ptr<SensSignal> in0, std::shared_ptr<SensSignal> in1,
              std::shared_ptr<SensSignal> out0, std::shared_ptr<SensSignal> out1)
      : split_(std::move(split)), in_{std::move(in0), std::move(in1)}, out_{std::move(out0), std::move(out1)} {}

  OpKind kind() const override { return OpKind::MergeSens; }
  std::vector<SignalPtr> inputs() const override { return {in_[0].get(), in_[1].get()}; }

  std::vector<SignalPtr> refresh() override {
    std::vector<std::pair<SensRecord, Unit>> ins[2];
    std::vector<SensRecord> rem[2];
    for (int i = 0; i < 2; ++i) {
      const VersionId v = in_[i]->latest();
      for (const auto& c : in_[i]->changes(seen_[i], v)) {
        const int delta = c.after ? 1 : -1;
        for (auto& [side, piece] : split_sens(c.key, split_)) {
          int& n = count_[side][piece];
          n += delta;
          if (n == 1 && delta > 0) ins[side].emplace_back(piece, Unit{});
          if (n == 0) {
            rem[side].push_back(piece);
            count_[side].erase(piece);
          }
        }
      }
      seen_[i] = v;
    }
    std::vector<SignalPtr> changed;
    for (int s = 0; s < 2; ++s) {
      if (ins[s].empty() && rem[s].empty()) continue;
      auto r = rem[s].empty() ? out_[s]->publish(ins[s], {}) : out_[s]->withdraw(ins[s], rem[s]);
      if (r.changed) changed.push_back(out_[s].get());
    }
    return changed;
  }

 private:
  DomainPoint split_;
  std::shared_ptr<SensSignal> in_[2], out_[2];
  VersionId seen_[2] = {0, 0};
  std::map<SensRecord, int, SensLess> count_[2];
};

/// Corrections for one child subtree and subdomain: the records of the
/// parent's corrections (and, for a right child, the left sibling's delta,
/// which supersedes them) that fall inside the child's sensitivities.
class CorrOp : public Operator {
 public:
  CorrOp(std::shared_ptr<SensSignal> sens, std::shared_ptr<DeltaSignal> c0, std::shared_ptr<DeltaSignal> c1,
         std::shared_ptr<DeltaSignal> left_delta, std::shared_ptr<DeltaSignal> out)
      : sens_(std::move(sens)), c_{std::move(c0), std::move(c1)}, left_(std::move(left_delta)), out_(std::move(out)) {}

  OpKind kind() const override { return OpKind::Corr; }
  std::vector<SignalPtr> inputs() const override {
    std::vector<SignalPtr> v{sens_.get(), c_[0].get(), c_[1].get()};
    if (left_) v.push_back(left_.get());
    return v;
  }

  std::vector<SignalPtr> refresh() override {
    auto [sv, s] = sens_->latest_snapshot();
    const DeltaMap out = out_->snapshot();
    DeltaMap maps[3];
    std::set<PointKey, PointKeyLess> keys;
    const bool full = !started_;
    started_ = true;
    for (int i = 0; i < 3; ++i) {
      const DeltaSignal* sig = i < 2 ? c_[i].get() : left_.get();
      if (!sig) continue;
      auto [v, m] = sig->latest_snapshot();
      if (!full) {
        for (const auto& c : sig->changes(seen_[i], v)) {
          if (stab_exists(s, c.key.pred, c.key.key)) keys.insert(c.key);
          else if (out.contains(c.key)) keys.insert(c.key);
        }
      }
      seen_[i] = v;
      maps[i] = std::move(m);
    }
    if (full) {
      std::size_t records = 0;
      for (const auto& m : maps) records += m.size();
      if (s.size() <= records) {
        s.for_each([&](const SensRecord& r, const Unit&) {
          for (const auto& m : maps) scan_interval(m, r, [&](const PointKey& k, const Patch&) { keys.insert(k); });
        });
      } else {
        for (const auto& m : maps) {
          m.for_each([&](const PointKey& k, const Patch&) {
            if (stab_exists(s, k.pred, k.key)) keys.insert(k);
          });
        }
      }
    } else {
      for (const auto& c : sens_->changes(seen_s_, sv)) {
        if (c.after) {
          for (const auto& m : maps) scan_interval(m, c.key, [&](const PointKey& k, const Patch&) { keys.insert(k); });
        } else {
          scan_interval(out, c.key, [&](const PointKey& k, const Patch&) { keys.insert(k); });
        }
      }
    }
    seen_s_ = sv;

    std::vector<std::pair<PointKey, Patch>> ins;
    std::vector<PointKey> rem;
    for (const auto& k : keys) {
      const Patch* want = nullptr;
      if (stab_exists(s, k.pred, k.key)) {
        want = maps[2].find(k);
        if (!want) want = maps[0].find(k);
        if (!want) want = maps[1].find(k);
      }
      const Patch* have = out.find(k);
      if (want && (!have || !(*have == *want))) ins.emplace_back(k, *want);
      if (!want && have) rem.push_back(k);
    }
    if (ins.empty() && rem.empty()) return {};
    if (out_->publish(ins, rem).changed) return {out_.get()};
    return {};
  }

 private:
  std::shared_ptr<SensSignal> sens_;
  std::shared_ptr<DeltaSignal> c_[2], left_, out_;
  VersionId seen_[3] = {0, 0, 0};
  VersionId seen_s_ = 0;
  bool started_ = false;
};

/// What the engine hands a transaction operator for one refresh.
struct TxnContext {
  DbVersion base;
  std::vector<PointKey> base_changes;  // keys the base changed at since the last refresh
};

/// Leaf operator. Holds a transaction, or nothing (a null transaction, which
/// publishes empty outputs).
class TxnOp : public Operator {
 public:
  TxnOp(std::shared_ptr<DeltaSignal> corr, std::shared_ptr<DeltaSignal> delta, std::shared_ptr<SensSignal> sens)
      : corr_(std::move(corr)), delta_(std::move(delta)), sens_(std::move(sens)) {}

  OpKind kind() const override { return OpKind::Txn; }
  std::vector<SignalPtr> inputs() const override { return {corr_.get()}; }

  bool is_null() const { return txn_ == nullptr; }
  Transaction* txn() { return txn_.get(); }
  const Transaction* txn() const { return txn_.get(); }
  std::uint64_t id() const { return id_; }
  std::uint64_t refreshes() const { return refreshes_; }

  void assign(std::uint64_t id, std::shared_ptr<const Program> prog) {
    id_ = id;
    txn_ = std::make_unique<Transaction>(std::move(prog));
    seen_ = 0;
  }

  /// Turns into a null transaction; withdraws its outputs.
  std::vector<SignalPtr> clear() {
    txn_.reset();
    id_ = 0;
    pending_.clear();
    std::vector<SignalPtr> changed;
    if (delta_->publish_contents(DeltaMap(), true).changed) changed.push_back(delta_.get());
    if (sens_->publish_contents(SensSet(), true).changed) changed.push_back(sens_.get());
    return changed;
  }

  /// Base moved under the transaction; `keys` changed between versions.
  void rebase(DbVersion base, const std::vector<PointKey>& keys) {
    base_ = std::move(base);
    pending_.insert(pending_.end(), keys.begin(), keys.end());
  }
  void set_base(DbVersion base) { base_ = std::move(base); }

  std::vector<SignalPtr> refresh() override {
    if (!txn_) return {};
    auto [v, corr] = corr_->latest_snapshot();
    ++refreshes_;
    if (txn_->status() == TxnStatus::Unevaluated) {
      txn_->evaluate(base_, corr);
    } else {
      std::vector<PointKey> keys = std::move(pending_);
      for (const auto& c : corr_->changes(seen_, v)) keys.push_back(c.key);
      txn_->repair(base_, corr, keys);
    }
    pending_.clear();
    seen_ = v;
    std::vector<SignalPtr> changed;
    if (delta_->publish_contents(txn_->delta(), true).changed) changed.push_back(delta_.get());
    std::vector<std::pair<SensRecord, Unit>> fresh;
    for (auto& r : txn_->take_new_sens()) fresh.emplace_back(std::move(r), Unit{});
    if (!fresh.empty() && sens_->publish(fresh, {}).changed) changed.push_back(sens_.get());
    return changed;
  }

 private:
  std::shared_ptr<DeltaSignal> corr_, delta_;
  std::shared_ptr<SensSignal> sens_;
  std::unique_ptr<Transaction> txn_;
  std::uint64_t id_ = 0;
  DbVersion base_;
  std::vector<PointKey> pending_;
  VersionId seen_ = 0;
  std::uint64_t refreshes_ = 0;
};

/// Transaction tree node. A node of height h carries 2^h delta, sensitivity
/// and correction signals, one per depth-h subdomain (index = label read as
/// a binary number). Leaves cover one position; positions increase left to
/// right and fix serialization order.
struct Node {
  int height = 0;
  std::int64_t first = 0, last = 0;  // leaf positions covered
  std::unique_ptr<Node> left, right;
  std::shared_ptr<TxnOp> txn;  // leaves
  bool occupied = false;       // leaves: a transaction was placed here (possibly since nulled)
  bool finalized = false;      // leaves: set by the scheduler
  std::vector<std::shared_ptr<DeltaSignal>> delta, corr;
  std::vector<std::shared_ptr<SensSignal>> sens;
  // group nodes, one per child subdomain (2^(h-1))
  std::vector<std::shared_ptr<Operator>> merge_delta, merge_sens, corr_left, corr_right;

  bool leaf() const { return height == 0; }
  std::size_t width() const { return std::size_t{1} << height; }
};

inline std::string label_of(std::size_t index, int len) {
  std::string s;
  for (int i = len - 1; i >= 0; --i) s.push_back((index >> i) & 1 ? '1' : '0');
  return s;
}

/// The repair circuit over the transaction tree. Structure changes go
/// through here; scheduling lives in the engine.
class Circuit {
 public:
  Circuit(DomainDecomposition dec, bool inverted = false)
      : dec_(std::move(dec)), inverted_(inverted), limit_(dec_.height()) {}

  const DomainDecomposition& decomposition() const { return dec_; }
  Node* root() { return root_.get(); }
  const Node* root() const { return root_.get(); }
  int max_height() const { return limit_; }
  /// Caps tree growth below the decomposition height.
  void limit_height(int h) { limit_ = std::min(h, dec_.height()); }

  /// Operators reading signal s.
  const std::vector<std::shared_ptr<Operator>>& readers(SignalPtr s) const {
    static const std::vector<std::shared_ptr<Operator>> none;
    auto it = readers_.find(s);
    return it == readers_.end() ? none : it->second;
  }

  /// Next free leaf, growing the tree when needed; nullptr when full.
  Node* free_leaf(std::vector<std::shared_ptr<Operator>>* created) {
    if (!root_) {
      root_ = make_subtree(0, next_pos_, created);
      return leaf_at(next_pos_);
    }
    while (next_pos_ > root_->last) {
      if (root_->height + 1 > limit_) return nullptr;
      grow(created);
    }
    return leaf_at(next_pos_);
  }

  /// Places a transaction at the next free leaf.
  Node* place(std::uint64_t id, std::shared_ptr<const Program> prog, const DbVersion& base,
              std::vector<std::shared_ptr<Operator>>* created) {
    Node* n = free_leaf(created);
    if (!n) return nullptr;
    n->txn->assign(id, std::move(prog));
    n->txn->set_base(base);
    n->occupied = true;
    ++next_pos_;
    return n;
  }

  Node* leaf_at(std::int64_t pos) {
    Node* n = root_.get();
    if (!n || pos < n->first || pos > n->last) return nullptr;
    while (!n->leaf()) n = pos <= n->left->last ? n->left.get() : n->right.get();
    return n;
  }

  /// Occupied leaves in serialization order.
  std::vector<Node*> occupied_leaves() {
    std::vector<Node*> out;
    visit(root_.get(), [&](Node* n) {
      if (n->leaf() && n->occupied) out.push_back(n);
    });
    return out;
  }

  /// Every live operator.
  std::vector<std::shared_ptr<Operator>> operators() {
    std::vector<std::shared_ptr<Operator>> out;
    visit(root_.get(), [&](Node* n) { append_ops(n, out); });
    return out;
  }

  /// Commit of the root's left subtree: returns its delta records (per
  /// subdomain, in order), kills the root and the left subtree, and makes
  /// the right child the root. The new root's corrections are cleared;
  /// signals that changed go to `changed`.
  std::vector<DeltaMap> detach_left(std::vector<SignalPtr>* changed) {
    std::vector<DeltaMap> out;
    for (const auto& d : root_->left->delta) out.push_back(d->snapshot());
    kill_node_ops(root_.get());
    kill_subtree(root_->left.get());
    std::unique_ptr<Node> r = std::move(root_->right);
    root_ = std::move(r);
    reset_root_corr(changed);
    return out;
  }

  /// Commit of the whole tree.
  std::vector<DeltaMap> detach_all() {
    std::vector<DeltaMap> out;
    for (const auto& d : root_->delta) out.push_back(d->snapshot());
    kill_subtree(root_.get());
    root_.reset();
    return out;
  }

  /// Replaces a leaf's transaction by a null one.
  std::vector<SignalPtr> nullify(Node* leaf) { return leaf->txn->clear(); }

  /// Shrinks the tree to the smallest subtree containing every leaf that
  /// `keep` selects; with none selected the tree is dropped.
  void shrink_to(const std::function<bool(Node*)>& keep, std::vector<SignalPtr>* changed) {
    if (!root_) return;
    std::int64_t lo = -1, hi = -1;
    visit(root_.get(), [&](Node* n) {
      if (!n->leaf() || !keep(n)) return;
      if (lo < 0) lo = n->first;
      hi = n->first;
    });
    if (lo < 0) {
      kill_subtree(root_.get());
      root_.reset();
      return;
    }
    bool moved = false;
    while (!root_->leaf()) {
      Node* r = root_.get();
      std::unique_ptr<Node> next;
      if (lo > r->left->last) {
        kill_subtree(r->left.get());
        next = std::move(r->right);
      } else if (hi <= r->left->last) {
        kill_subtree(r->right.get());
        next = std::move(r->left);
      } else {
        break;
      }
      kill_node_ops(r);
      root_ = std::move(next);
      moved = true;
    }
    if (next_pos_ > root_->last + 1) next_pos_ = root_->last + 1;
    if (moved) reset_root_corr(changed);
  }

  /// Ops whose pending work could still change the corrections reaching
  /// `leaf`: correction and sensitivity-merge operators on its root path,
  /// delta merges and transactions of every subtree to its left, and its
  /// own transaction.
  bool blocked(const Node* leaf, const std::function<bool(const Operator&)>& busy) const {
    const Node* n = root_.get();
    while (n && !n->leaf()) {
      const bool right = leaf->first > n->left->last;
      for (const auto& op : right ? n->corr_right : n->corr_left) {
        if (busy(*op)) return true;
      }
      for (const auto& op : n->merge_sens) {
        if (busy(*op)) return true;
      }
      if (right && subtree_busy(n->left.get(), busy)) return true;
      n = right ? n->right.get() : n->left.get();
    }
    return busy(*leaf->txn);
  }

  struct Edge {
    const Operator* writer;
    const Operator* reader;
    SignalPtr signal;
  };

  /// Edges whose reader does not outrank its writer. With normal priorities
  /// only sensitivity edges (which feed corrections back down) appear here.
  std::vector<Edge> priority_violations() const {
    std::vector<Edge> out;
    for (const auto& [sig, ops] : readers_) {
      auto w = writer_.find(sig);
      if (w == writer_.end()) continue;
      for (const auto& op : ops) {
        if (!(w->second->rank < op->rank)) out.push_back({w->second, op.get(), sig});
      }
    }
    return out;
  }

  const Operator* writer(SignalPtr s) const {
    auto it = writer_.find(s);
    return it == writer_.end() ? nullptr : it->second;
  }

  /// Some delta merge or transaction inside n is busy.
  bool subtree_busy(const Node* n, const std::function<bool(const Operator&)>& busy) const {
    if (n->leaf()) return busy(*n->txn);
    for (const auto& op : n->merge_delta) {
      if (busy(*op)) return true;
    }
    return subtree_busy(n->left.get(), busy) || subtree_busy(n->right.get(), busy);
  }

  /// Graphviz rendering of nodes, signals and operators.
  std::string to_dot() const {
    std::ostringstream os;
    os << "digraph circuit {\n  rankdir=BT;\n";
    std::map<SignalPtr, std::string> names;
    auto sig = [&](SignalPtr p, const std::string& name) {
      names[p] = name;
      os << "  \"" << name << "\" [shape=ellipse];\n";
    };
    std::function<void(const Node*, const std::string&)> rec = [&](const Node* n, const std::string& t) {
      if (!n) return;
      const std::string tl = t.empty() ? "root" : t;
      for (std::size_t i = 0; i < n->width(); ++i) {
        const std::string d = label_of(i, n->height);
        sig(n->delta[i].get(), "delta_" + tl + "^" + d);
        sig(n->sens[i].get(), "s_" + tl + "^" + d);
        sig(n->corr[i].get(), "c_" + tl + "^" + d);
      }
      rec(n->left.get(), t + "0");
      rec(n->right.get(), t + "1");
    };
    rec(root_.get(), "");
    std::size_t k = 0;
    std::function<void(const Node*)> ops = [&](const Node* n) {
      if (!n) return;
      std::vector<std::shared_ptr<Operator>> list;
      append_ops(const_cast<Node*>(n), list);
      for (const auto& op : list) {
        const std::string id = "op" + std::to_string(k++);
        os << "  " << id << " [shape=box,label=\"" << op->label << "\"];\n";
        for (auto in : op->inputs()) {
          if (names.count(in)) os << "  \"" << names[in] << "\" -> " << id << ";\n";
        }
        for (auto o : op->outputs) {
          if (names.count(o)) os << "  " << id << " -> \"" << names[o] << "\";\n";
        }
      }
      ops(n->left.get());
      ops(n->right.get());
    };
    ops(root_.get());
    os << "}\n";
    return os.str();
  }

 private:
  template <class F>
  static void visit(Node* n, F&& f) {
    if (!n) return;
    visit(n->left.get(), f);
    f(n);
    visit(n->right.get(), f);
  }

  static void append_ops(Node* n, std::vector<std::shared_ptr<Operator>>& out) {
    if (n->leaf()) {
      out.push_back(n->txn);
      return;
    }
    for (auto* v : {&n->merge_delta, &n->merge_sens, &n->corr_left, &n->corr_right}) out.insert(out.end(), v->begin(), v->end());
  }

  Rank rank(std::int64_t pos, int kind, std::int64_t h) const { return {inverted_ ? -pos : pos, kind, h}; }

  void track(const std::shared_ptr<Operator>& op, std::vector<std::shared_ptr<Operator>>* created,
             const std::vector<SignalPtr>& outs) {
    for (auto in : op->inputs()) readers_[in].push_back(op);
    for (auto o : outs) writer_[o] = op.get();
    op->outputs = outs;
    if (created) created->push_back(op);
  }

  std::unique_ptr<Node> make_subtree(int h, std::int64_t first, std::vector<std::shared_ptr<Operator>>* created) {
    auto n = std::make_unique<Node>();
    n->height = h;
    n->first = first;
    n->last = first + (std::int64_t{1} << h) - 1;
    for (std::size_t i = 0; i < n->width(); ++i) {
      n->delta.push_back(std::make_shared<DeltaSignal>(SignalKind::Delta, "delta"));
      n->sens.push_back(std::make_shared<SensSignal>(SignalKind::Sens, "sens"));
      n->corr.push_back(std::make_shared<DeltaSignal>(SignalKind::Corr, "corr"));
    }
    if (h == 0) {
      n->txn = std::make_shared<TxnOp>(n->corr[0], n->delta[0], n->sens[0]);
      n->txn->rank = rank(first, 1, 0);
      n->txn->label = "txn@" + std::to_string(first);
      track(n->txn, created, {n->delta[0].get(), n->sens[0].get()});
      return n;
    }
    n->left = make_subtree(h - 1, first, created);
    n->right = make_subtree(h - 1, first + (std::int64_t{1} << (h - 1)), created);
    wire(n.get(), created);
    return n;
  }

  void wire(Node* n, std::vector<std::shared_ptr<Operator>>* created) {
    const int h = n->height;
    Node* l = n->left.get();
    Node* r = n->right.get();
    for (std::size_t i = 0; i < l->width(); ++i) {
      const std::string e = label_of(i, h - 1);
      const DomainPoint& split = dec_.split(e);
      auto md = std::make_shared<MergeDeltaOp>(split, l->delta[i], r->delta[i], n->delta[2 * i], n->delta[2 * i + 1]);
      md->rank = rank(n->last, 3, h);
      md->label = "merge_delta^" + e;
      track(md, created, {n->delta[2 * i].get(), n->delta[2 * i + 1].get()});
      n->merge_delta.push_back(md);

      auto ms = std::make_shared<MergeSensOp>(split, l->sens[i], r->sens[i], n->sens[2 * i], n->sens[2 * i + 1]);
      ms->rank = rank(n->first, 2, h);
      ms->label = "merge_sens^" + e;
      track(ms, created, {n->sens[2 * i].get(), n->sens[2 * i + 1].get()});
      n->merge_sens.push_back(ms);

      auto cl = std::make_shared<CorrOp>(l->sens[i], n->corr[2 * i], n->corr[2 * i + 1], nullptr, l->corr[i]);
      cl->rank = rank(l->first, 0, -(h - 1));
      cl->label = "corr_left^" + e;
      track(cl, created, {l->corr[i].get()});
      n->corr_left.push_back(cl);

      auto cr = std::make_shared<CorrOp>(r->sens[i], n->corr[2 * i], n->corr[2 * i + 1], l->delta[i], r->corr[i]);
      cr->rank = rank(r->first, 0, -(h - 1));
      cr->label = "corr_right^" + e;
      track(cr, created, {r->corr[i].get()});
      n->corr_right.push_back(cr);
    }
  }

  void grow(std::vector<std::shared_ptr<Operator>>* created) {
    const int h = root_->height;
    auto n = std::make_unique<Node>();
    n->height = h + 1;
    n->first = root_->first;
    n->last = root_->last + (std::int64_t{1} << h);
    for (std::size_t i = 0; i < n->width(); ++i) {
      n->delta.push_back(std::make_shared<DeltaSignal>(SignalKind::Delta, "delta"));
      n->sens.push_back(std::make_shared<SensSignal>(SignalKind::Sens, "sens"));
      n->corr.push_back(std::make_shared<DeltaSignal>(SignalKind::Corr, "corr"));
    }
    n->right = make_subtree(h, root_->last + 1, created);
    n->left = std::move(root_);
    wire(n.get(), created);
    root_ = std::move(n);
  }

  void kill_node_ops(Node* n) {
    std::vector<std::shared_ptr<Operator>> ops;
    append_ops(n, ops);
    for (auto& op : ops) forget(op);
  }

  void kill_subtree(Node* n) {
    visit(n, [&](Node* x) { kill_node_ops(x); });
  }

  void forget(const std::shared_ptr<Operator>& op) {
    op->dead = true;
    for (auto in : op->inputs()) {
      auto it = readers_.find(in);
      if (it == readers_.end()) continue;
      auto& v = it->second;
      v.erase(std::remove(v.begin(), v.end(), op), v.end());
      if (v.empty()) readers_.erase(it);
    }
    for (auto o : op->outputs) {
      auto it = writer_.find(o);
      if (it != writer_.end() && it->second == op.get()) writer_.erase(it);
    }
  }

  void reset_root_corr(std::vector<SignalPtr>* changed) {
    for (auto& c : root_->corr) {
      if (c->publish_contents(DeltaMap(), true).changed && changed) changed->push_back(c.get());
    }
  }

  DomainDecomposition dec_;
  bool inverted_ = false;
  int limit_ = 0;
  std::unique_ptr<Node> root_;
  std::int64_t next_pos_ = 0;
  std::unordered_map<SignalPtr, std::vector<std::shared_ptr<Operator>>> readers_;
  std::unordered_map<SignalPtr, Operator*> writer_;
};

}  // namespace trepair
