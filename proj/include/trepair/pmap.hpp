#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace trepair {

struct NoAugment {
  struct value_type {};
  template <class K, class V>
  static value_type make(const K&, const V&, const value_type*, const value_type*) {
    return {};
  }
};

/// Persistent (path-copying) AVL map. Every mutating operation returns a new
/// map and leaves the receiver untouched; copies share structure and are O(1).
///
/// `Aug` decorates every node with a summary of its subtree, recomputed on
/// the copied path (used for interval stabbing via subtree maxima).
template <class K, class V, class Less, class Aug = NoAugment>
class PMap {
 public:
  using key_type = K;
  using mapped_type = V;
  using AugValue = typename Aug::value_type;

  struct Node {
    K key;
    V val;
    std::shared_ptr<const Node> left, right;
    int height = 1;
    std::size_t size = 1;
    AugValue aug;
  };
  using NodePtr = std::shared_ptr<const Node>;

  PMap() = default;

  std::size_t size() const { return root_ ? root_->size : 0; }
  bool empty() const { return !root_; }
  const Node* root() const { return root_.get(); }
  const NodePtr& root_ptr() const { return root_; }

  const V* find(const K& k) const {
    const Node* n = root_.get();
    while (n) {
      if (less_(k, n->key)) n = n->left.get();
      else if (less_(n->key, k)) n = n->right.get();
      else return &n->val;
    }
    return nullptr;
  }
  bool contains(const K& k) const { return find(k) != nullptr; }

  [[nodiscard]] PMap insert(const K& k, V v) const {
    PMap r;
    r.root_ = insert_(root_, k, std::move(v));
    return r;
  }
  [[nodiscard]] PMap erase(const K& k) const {
    if (!contains(k)) return *this;
    PMap r;
    r.root_ = erase_(root_, k);
    return r;
  }

  /// Balanced map from items with strictly increasing keys, in O(n).
  static PMap from_sorted(std::vector<std::pair<K, V>> items) {
    PMap r;
    r.root_ = build_(items, 0, items.size());
    return r;
  }

  /// Least node whose key is not below the target, where `below(key)` answers
  /// "key < target". Supports heterogeneous targets (bounds, prefixes).
  template <class Below>
  const Node* first_not_below(Below below) const {
    const Node* n = root_.get();
    const Node* best = nullptr;
    while (n) {
      if (below(n->key)) {
        n = n->right.get();
      } else {
        best = n;
        n = n->left.get();
      }
    }
    return best;
  }
  const Node* lower_bound(const K& k) const {
    return first_not_below([&](const K& x) { return less_(x, k); });
  }
  const Node* first() const {
    const Node* n = root_.get();
    while (n && n->left) n = n->left.get();
    return n;
  }

  /// Least node strictly greater than `k`.
  const Node* successor(const K& k) const {
    return first_not_below([&](const K& x) { return !less_(k, x); });
  }
  /// Greatest node strictly below `k`.
  const Node* predecessor(const K& k) const {
    const Node* n = root_.get();
    const Node* best = nullptr;
    while (n) {
      if (less_(n->key, k)) {
        best = n;
        n = n->right.get();
      } else {
        n = n->left.get();
      }
    }
    return best;
  }

  template <class F>
  void for_each(F&& f) const {
    for_each_(root_.get(), f);
  }

  /// Visits nodes with key in [first_not_below(below), ...) until `f` returns false.
  template <class Below, class F>
  void scan_from(Below below, F&& f) const {
    Cursor c(*this);
    c.seek(below);
    while (!c.at_end()) {
      if (!f(c.key(), c.value())) return;
      c.next();
    }
  }

  std::vector<std::pair<K, V>> items() const {
    std::vector<std::pair<K, V>> out;
    out.reserve(size());
    for_each([&](const K& k, const V& v) { out.emplace_back(k, v); });
    return out;
  }

  bool same_root(const PMap& o) const { return root_ == o.root_; }

  /// Ordered cursor. Forward seeks start from the current position (finger
  /// search), so visiting m of n keys in order costs O(m log(n/m)) node
  /// touches. `touches()` counts nodes entered or left.
  class Cursor {
   public:
    explicit Cursor(const PMap& m) : root_(m.root_) {}

    bool at_end() const { return stack_.empty(); }
    const K& key() const { return stack_.back().node->key; }
    const V& value() const { return stack_.back().node->val; }
    std::uint64_t touches() const { return touches_; }

    void seek_first() {
      started_ = true;
      stack_.clear();
      if (!root_) return;
      push(root_.get(), -1);
      descend_leftmost();
    }

    template <class Below>
    void seek(Below below) {
      if (stack_.empty()) {
        if (started_ || !root_) {
          started_ = true;
          return;
        }
        started_ = true;
        push(root_.get(), -1);
        if (!descend_in(below)) clear();
        return;
      }
      if (!below(key())) return;
      // ascend while the top's subtree and its successor bound are all below
      while (stack_.size() > 1) {
        int up = stack_.back().upper;
        if (up < 0 || !below(stack_[static_cast<std::size_t>(up)].node->key)) break;
        stack_.pop_back();
        ++touches_;
      }
      int fallback = stack_.back().upper;
      if (descend_in(below)) return;
      if (fallback >= 0 && !below(stack_[static_cast<std::size_t>(fallback)].node->key)) {
        truncate(fallback);
      } else {
        clear();
      }
    }

    void next() {
      if (stack_.empty()) return;
      const Node* n = stack_.back().node;
      if (n->right) {
        push(n->right.get(), stack_.back().upper);
        descend_leftmost();
        return;
      }
      int up = stack_.back().upper;
      if (up < 0) clear();
      else truncate(up);
    }

   private:
    struct Entry {
      const Node* node;
      int upper;  // index of nearest ancestor reached by a left turn, or -1
    };

    void push(const Node* n, int upper) {
      stack_.push_back({n, upper});
      ++touches_;
    }
    // upper index for child `c` of stack_[parent]
    int upper_for(int parent, const Node* c) const {
      const Entry& p = stack_[static_cast<std::size_t>(parent)];
      return p.node->left.get() == c ? parent : p.upper;
    }
    void descend_leftmost() {
      while (stack_.back().node->left) {
        int parent = static_cast<int>(stack_.size()) - 1;
        push(stack_.back().node->left.get(), parent);
      }
    }
    void truncate(int idx) {
      std::size_t keep = static_cast<std::size_t>(idx) + 1;
      touches_ += stack_.size() - keep;
      stack_.resize(keep);
    }
    void clear() {
      touches_ += stack_.size();
      stack_.clear();
    }
    // least key >= target inside the subtree of the top entry; on failure the
    // stack is restored to its previous height
    template <class Below>
    bool descend_in(Below& below) {
      const std::size_t base = stack_.size() - 1;
      int cand = -1;
      int cur = static_cast<int>(base);
      for (;;) {
        const Node* n = stack_[static_cast<std::size_t>(cur)].node;
        const Node* child;
        if (below(n->key)) {
          child = n->right.get();
        } else {
          cand = cur;
          child = n->left.get();
        }
        if (!child) break;
        push(child, upper_for(cur, child));
        cur = static_cast<int>(stack_.size()) - 1;
      }
      if (cand < 0) {
        truncate(static_cast<int>(base));
        return false;
      }
      truncate(cand);
      return true;
    }

    NodePtr root_;
    std::vector<Entry> stack_;
    std::uint64_t touches_ = 0;
    bool started_ = false;
  };

 private:
  static int h(const NodePtr& n) { return n ? n->height : 0; }
  static std::size_t sz(const NodePtr& n) { return n ? n->size : 0; }

  static NodePtr build_(std::vector<std::pair<K, V>>& items, std::size_t lo, std::size_t hi) {
    if (lo >= hi) return nullptr;
    const std::size_t mid = lo + (hi - lo) / 2;
    NodePtr l = build_(items, lo, mid);
    NodePtr r = build_(items, mid + 1, hi);
    return make(items[mid].first, std::move(items[mid].second), std::move(l), std::move(r));
  }

  static NodePtr make(const K& k, V v, NodePtr l, NodePtr r) {
    auto n = std::make_shared<Node>();
    n->key = k;
    n->val = std::move(v);
    n->left = std::move(l);
    n->right = std::move(r);
    n->height = 1 + std::max(h(n->left), h(n->right));
    n->size = 1 + sz(n->left) + sz(n->right);
    n->aug = Aug::make(n->key, n->val, n->left ? &n->left->aug : nullptr,
                       n->right ? &n->right->aug : nullptr);
    return n;
  }

  static NodePtr rotate_right(const K& k, const V& v, const NodePtr& l, const NodePtr& r) {
    // l becomes root
    return make(l->key, l->val, l->left, make(k, v, l->right, r));
  }
  static NodePtr rotate_left(const K& k, const V& v, const NodePtr& l, const NodePtr& r) {
    return make(r->key, r->val, make(k, v, l, r->left), r->right);
  }

  static NodePtr balance(const K& k, const V& v, const NodePtr& l, const NodePtr& r) {
    int bf = h(l) - h(r);
    if (bf > 1) {
      if (h(l->left) >= h(l->right)) return rotate_right(k, v, l, r);
      NodePtr nl = rotate_left(l->key, l->val, l->left, l->right);
      return rotate_right(k, v, nl, r);
    }
    if (bf < -1) {
      if (h(r->right) >= h(r->left)) return rotate_left(k, v, l, r);
      NodePtr nr = rotate_right(r->key, r->val, r->left, r->right);
      return rotate_left(k, v, l, nr);
    }
    return make(k, v, l, r);
  }

  NodePtr insert_(const NodePtr& n, const K& k, V v) const {
    if (!n) return make(k, std::move(v), nullptr, nullptr);
    if (less_(k, n->key)) return balance(n->key, n->val, insert_(n->left, k, std::move(v)), n->right);
    if (less_(n->key, k)) return balance(n->key, n->val, n->left, insert_(n->right, k, std::move(v)));
    return make(k, std::move(v), n->left, n->right);
  }

  static NodePtr remove_min(const NodePtr& n, const Node** min_out) {
    if (!n->left) {
      *min_out = n.get();
      return n->right;
    }
    return balance(n->key, n->val, remove_min(n->left, min_out), n->right);
  }

  NodePtr erase_(const NodePtr& n, const K& k) const {
    if (!n) return nullptr;
    if (less_(k, n->key)) return balance(n->key, n->val, erase_(n->left, k), n->right);
    if (less_(n->key, k)) return balance(n->key, n->val, n->left, erase_(n->right, k));
    if (!n->left) return n->right;
    if (!n->right) return n->left;
    const Node* m = nullptr;
    NodePtr r = remove_min(n->right, &m);
    return balance(m->key, m->val, n->left, r);
  }

  template <class F>
  static void for_each_(const Node* n, F& f) {
    while (n) {
      for_each_(n->left.get(), f);
      f(n->key, n->val);
      n = n->right.get();
    }
  }

  NodePtr root_;
  Less less_{};
};

}  // namespace trepair
