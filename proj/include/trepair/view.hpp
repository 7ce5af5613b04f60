#pragma once

#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "trepair/pstore.hpp"
#include "trepair/signal.hpp"

namespace trepair {

/// Read-only view of one predicate as a stack of layers: a base map
/// (key -> value) overlaid by zero or more patch layers (one predicate's
/// slice of a delta map). Higher layers win per key; retractions hide the
/// key. Tuples are exposed as key ++ value, so a function reads as a trie
/// whose last levels are its value columns.
class View {
 public:
  View() = default;
  View(Relation base, std::size_t key_arity) : base_(std::move(base)), key_arity_(key_arity) {}

  [[nodiscard]] View with_patch(DeltaMap patch, PredId pred) const {
    View v = *this;
    v.patches_.push_back({std::move(patch), pred});
    return v;
  }

  std::size_t key_arity() const { return key_arity_; }
  const Relation& base() const { return base_; }

  /// Effective value of `key`, or nullopt when absent.
  std::optional<Tuple> find(const Tuple& key) const {
    for (auto it = patches_.rbegin(); it != patches_.rend(); ++it) {
      if (const Patch* p = it->map.find(PointKey{it->pred, key})) {
        if (!p->upsert) return std::nullopt;
        return p->value;
      }
    }
    if (const Tuple* v = base_.find(key)) return *v;
    return std::nullopt;
  }

  /// True when the full tuple key ++ value is present.
  bool contains_tuple(const Tuple& full) const {
    if (full.size() < key_arity_) return false;
    Tuple key(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(key_arity_));
    auto v = find(key);
    if (!v) return false;
    return std::equal(v->begin(), v->end(), full.begin() + static_cast<std::ptrdiff_t>(key_arity_), full.end());
  }

  /// Forward-only cursor over effective tuples in order.
  class Cursor {
   public:
    explicit Cursor(const View& v) : view_(&v), base_(v.base_) {
      for (const auto& p : v.patches_) patches_.emplace_back(p.map);
    }

    bool at_end() const { return at_end_; }
    const Tuple& tuple() const { return full_; }

    /// Moves to the least effective tuple strictly greater than `b`. Bounds
    /// must not decrease across calls.
    void seek(Bound b) {
      const std::size_t ka = view_->key_arity_;
      for (;;) {
        Bound bk = b.prefix.size() <= ka ? b : Bound::below(Tuple(b.prefix.begin(), b.prefix.begin() + static_cast<std::ptrdiff_t>(ka)));
        base_.seek([&](const Tuple& x) { return cmp(x, bk) < 0; });
        const Tuple* best = base_.at_end() ? nullptr : &base_.key();
        for (std::size_t i = 0; i < patches_.size(); ++i) {
          PredId p = view_->patches_[i].pred;
          auto& c = patches_[i];
          c.seek([&](const PointKey& x) { return x.pred < p || (x.pred == p && cmp(x.key, bk) < 0); });
          if (c.at_end() || c.key().pred != p) continue;
          if (!best || cmp(c.key().key, *best) < 0) best = &c.key().key;
        }
        if (!best) {
          at_end_ = true;
          return;
        }
        Tuple key = *best;
        const Tuple* value = nullptr;
        bool retracted = false;
        for (std::size_t i = patches_.size(); i-- > 0;) {
          auto& c = patches_[i];
          if (c.at_end() || c.key().pred != view_->patches_[i].pred || cmp(c.key().key, key) != 0) continue;
          if (c.value().upsert) value = &c.value().value;
          else retracted = true;
          break;
        }
        if (!value && !retracted) value = &base_.value();
        if (!retracted) {
          full_ = concat(key, *value);
          if (cmp(full_, b) > 0) {
            at_end_ = false;
            return;
          }
        }
        b = Bound::above(std::move(key));
      }
    }

   private:
    const View* view_;
    Relation::Cursor base_;
    std::vector<DeltaMap::Cursor> patches_;
    Tuple full_;
    bool at_end_ = true;
  };

 private:
  struct PatchLayer {
    DeltaMap map;
    PredId pred;
  };
  Relation base_;
  std::vector<PatchLayer> patches_;
  std::size_t key_arity_ = 0;
};

/// Builds a set-valued view (every column a key) from full tuples.
inline View tuple_set_view(const std::vector<Tuple>& tuples, std::size_t arity) {
  Relation r;
  for (const auto& t : tuples) r = r.insert(t, Tuple{});
  return View(r, arity);
}

/// Trie access to a view: one level per column, with open/up/next/seek at
/// the current level. After each positioning operation the interval it
/// depended on is available from last_lo()/last_hi(): the open interval is
/// [start of the prefix, found], seek(k) gives [k, found], next gives
/// [current, found]; found is the end of the prefix when exhausted.
class TrieIterator {
 public:
  explicit TrieIterator(const View& v) : view_(&v), cur_(v) {}

  int column() const { return col_; }
  bool at_end() const { return at_end_; }
  const Value& key() const { return key_; }
  const Tuple& prefix() const { return prefix_; }
  const Bound& last_lo() const { return lo_; }
  const Bound& last_hi() const { return hi_; }
  /// open/next/seek calls so far.
  std::uint64_t ops() const { return ops_; }
  /// Cursor repositionings so far (ops answered in place are not counted).
  std::uint64_t seeks() const { return seeks_; }

  void open() {
    ++ops_;
    if (col_ >= 0) {
      prefix_.push_back(key_);
    } else if (!started_) {
      position(Bound::neg_inf());
      started_ = true;
    }
    ++col_;
    lo_ = Bound::below(prefix_);
    settle();
    const auto c = static_cast<std::size_t>(col_);
    if (marks_.size() <= c) marks_.push_back(cur_);
    else marks_[c] = cur_;
  }

  // The cursor goes back to where this column was opened: the first tuple
  // of the parent key, which is where every later operation starts from.
  void up() {
    cur_ = marks_[static_cast<std::size_t>(col_)];
    --col_;
    if (col_ >= 0) {
      key_ = prefix_.back();
      prefix_.pop_back();
    }
    at_end_ = false;
  }

  void next() {
    ++ops_;
    Tuple p = prefix_;
    p.push_back(key_);
    lo_ = Bound::below(p);
    position(Bound::above(std::move(p)));
    settle();
  }

  void seek(const Value& v) {
    ++ops_;
    Tuple p = prefix_;
    p.push_back(v);
    lo_ = Bound::below(p);
    if (!at_end_ && cmp(key_, v) >= 0) {
      Tuple h = prefix_;
      h.push_back(key_);
      hi_ = Bound::above(std::move(h));
      return;
    }
    position(Bound::below(std::move(p)));
    settle();
  }

 private:
  void position(Bound b) {
    ++seeks_;
    cur_.seek(std::move(b));
  }
  // derives key_/at_end_/hi_ from the cursor for the current prefix
  void settle() {
    const auto c = static_cast<std::size_t>(col_);
    if (!cur_.at_end() && cur_.tuple().size() > c && starts_with(cur_.tuple(), prefix_)) {
      key_ = cur_.tuple()[c];
      at_end_ = false;
      Tuple h = prefix_;
      h.push_back(key_);
      hi_ = Bound::above(std::move(h));
    } else {
      at_end_ = true;
      hi_ = Bound::above(prefix_);
    }
  }

  const View* view_;
  View::Cursor cur_;
  Tuple prefix_;
  Value key_;
  int col_ = -1;
  bool at_end_ = true;
  bool started_ = false;
  std::vector<View::Cursor> marks_;
  Bound lo_, hi_;
  std::uint64_t seeks_ = 0;
  std::uint64_t ops_ = 0;
};

}  // namespace trepair
