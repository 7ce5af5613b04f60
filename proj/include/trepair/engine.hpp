#pragma once

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "trepair/circuit.hpp"

namespace trepair {

enum class CommitStrategy : std::uint8_t { Simple, Padded };

struct EngineConfig {
  std::size_t workers = 1;
  int max_height = 4;  // tree capacity 2^max_height
  std::optional<DomainDecomposition> decomposition;  // default: sample medians of the initial database
  CommitStrategy commit = CommitStrategy::Simple;
  std::size_t admit_batch = 1;  // transactions admitted each time the queue runs dry
  bool read_only_first = false;
  bool inverted_priority = false;  // latest transaction first (for comparison only)
  bool random_ties = false;
  bool commit_while_busy = true;  // false: commit only once the queue has drained
  std::uint64_t seed = 1;
};

enum class Outcome : std::uint8_t { Pending, Accepted, Aborted };

inline const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Pending: return "pending";
    case Outcome::Accepted: return "accepted";
    case Outcome::Aborted: return "aborted";
  }
  return "?";
}

using TxnId = std::uint64_t;

struct TxnRecord {
  TxnId id = 0;
  std::shared_ptr<const Program> program;
  Outcome outcome = Outcome::Pending;
  std::string failure;
  bool committed = false;
  Node* leaf = nullptr;  // while in the tree
};

/// Samples every stored key (thinned to at most `limit`) for a decomposition.
inline DomainDecomposition decomposition_from(const DbVersion& db, int height, std::size_t limit = 1 << 16) {
  std::vector<DomainPoint> pts;
  const std::size_t total = db.record_count();
  const std::size_t stride = total > limit ? total / limit + 1 : 1;
  std::size_t i = 0;
  for (const auto& sig : db.schema().predicates()) {
    db.relation(sig.id).for_each([&](const Tuple& k, const Tuple&) {
      if (i++ % stride == 0) pts.push_back(DomainPoint::at(sig.id, k));
    });
  }
  return DomainDecomposition::build(std::move(pts), height);
}

/// Runs transactions through the repair circuit: workers refresh queued
/// operators highest rank first; finalized transactions are committed to the
/// tip; new transactions wait in a holding queue until the queue runs dry.
class Engine {
 public:
  Engine(DbVersion initial, EngineConfig cfg)
      : cfg_(std::move(cfg)),
        tip_(std::move(initial)),
        circuit_(cfg_.decomposition ? *cfg_.decomposition : decomposition_from(tip_, cfg_.max_height),
                 cfg_.inverted_priority),
        rng_(cfg_.seed) {
    if (circuit_.max_height() < cfg_.max_height) {
      throw std::invalid_argument("decomposition height is below the maximum tree height");
    }
    circuit_.limit_height(cfg_.max_height);
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Optional callback on each acceptance/abort (called under the engine lock).
  std::function<void(const TxnRecord&)> on_outcome;

  TxnId submit(std::shared_ptr<const Program> prog) {
    std::lock_guard<std::mutex> g(m_);
    TxnId id = ++next_id_;
    TxnRecord& rec = records_[id];
    rec.id = id;
    rec.program = std::move(prog);
    holding_.push_back(id);
    cv_.notify_all();
    return id;
  }

  /// Processes until every submitted transaction is committed or aborted.
  void run() {
    {
      std::lock_guard<std::mutex> g(m_);
      done_ = false;
    }
    std::vector<std::thread> extra;
    for (std::size_t i = 1; i < cfg_.workers; ++i) extra.emplace_back([this] { worker(); });
    worker();
    for (auto& t : extra) t.join();
    if (error_) std::rethrow_exception(error_);
  }

  /// One unit of work on the calling thread: an operator refresh, a commit,
  /// or an admission. False when there is nothing left to do.
  bool step() {
    std::unique_lock<std::mutex> lk(m_);
    const bool r = work_once(lk);
    if (error_) std::rethrow_exception(error_);
    return r;
  }

  /// Moves a transaction back to the holding queue; its leaf becomes null.
  bool bump(TxnId id) {
    std::lock_guard<std::mutex> g(m_);
    auto it = records_.find(id);
    if (it == records_.end() || !it->second.leaf) return false;
    Node* leaf = it->second.leaf;
    if (leaf->txn->running) return false;
    auto changed = circuit_.nullify(leaf);
    leaf->finalized = true;  // a null leaf never changes again
    it->second.leaf = nullptr;
    it->second.outcome = Outcome::Pending;
    holding_.push_back(id);
    ++metrics_.bumps;
    for (auto s : changed) enqueue_readers(s);
    advance_finalized();
    cv_.notify_all();
    return true;
  }

  /// Commits the finalized prefix now, leaving the rest in a shrunken tree
  /// with nulls in place of the committed transactions. False when nothing
  /// is committable or a refresh is in flight.
  bool commit_finalized() {
    std::lock_guard<std::mutex> g(m_);
    if (running_ > 0 || !finalized_prefix_has_txn()) return false;
    commit(queue_.empty() && all_finalized(circuit_.root()) ? CommitKind::All : CommitKind::Prefix);
    return true;
  }

  DbVersion tip() const {
    std::lock_guard<std::mutex> g(m_);
    return tip_;
  }
  Outcome outcome(TxnId id) const {
    std::lock_guard<std::mutex> g(m_);
    return records_.at(id).outcome;
  }
  std::string failure(TxnId id) const {
    std::lock_guard<std::mutex> g(m_);
    return records_.at(id).failure;
  }
  /// Committed transactions (accepted and aborted) in serialization order.
  std::vector<TxnId> serial_order() const {
    std::lock_guard<std::mutex> g(m_);
    return order_;
  }
  const Circuit& circuit() const { return circuit_; }
  std::string dot() const {
    std::lock_guard<std::mutex> g(m_);
    return circuit_.to_dot();
  }

  struct Metrics {
    std::uint64_t txn_refreshes = 0;
    std::map<OpKind, std::uint64_t> refreshes;
    std::size_t max_queue = 0;
    std::uint64_t commits = 0;
    std::uint64_t admitted = 0;
    std::uint64_t accepted = 0;
    std::uint64_t aborted = 0;
    std::uint64_t bumps = 0;
  };

  Metrics metrics() const {
    std::lock_guard<std::mutex> g(m_);
    return metrics_;
  }

  nlohmann::json metrics_json() const {
    Metrics m = metrics();
    nlohmann::json by_kind = nlohmann::json::object();
    for (const auto& [k, n] : m.refreshes) by_kind[op_kind_name(k)] = n;
    return {{"txn_refreshes", m.txn_refreshes}, {"operator_refreshes", by_kind}, {"max_queue_depth", m.max_queue},
            {"commits", m.commits},            {"admitted", m.admitted},      {"accepted", m.accepted},
            {"aborted", m.aborted},            {"bumps", m.bumps}};
  }

 private:
  using QueueKey = std::tuple<Rank, std::uint64_t, Operator*>;

  void worker() {
    std::unique_lock<std::mutex> lk(m_);
    while (!done_ && !error_) {
      if (work_once(lk)) continue;
      if (running_ == 0 && queue_.empty() && holding_.empty() && !circuit_.root()) {
        done_ = true;
        cv_.notify_all();
        break;
      }
      cv_.wait(lk);
    }
  }

  // Called with the lock held; may release it around a refresh.
  bool work_once(std::unique_lock<std::mutex>& lk) {
    if (error_) return false;
    while (!queue_.empty() && queue_.begin()->second->dead) {
      queue_.begin()->second->queued = false;
      queue_.erase(queue_.begin());
    }
    if (const CommitKind due = commit_due(); due != CommitKind::None) {
      if (running_ > 0) return false;  // wait for in-flight refreshes
      commit(due);
      cv_.notify_all();
      return true;
    }
    if (auto op = pop()) {
      op->queued = false;
      op->running = true;
      ++running_;
      lk.unlock();
      std::vector<SignalPtr> changed;
      try {
        changed = op->refresh();
      } catch (...) {
        lk.lock();
        error_ = std::current_exception();
        --running_;
        op->running = false;
        cv_.notify_all();
        return false;
      }
      lk.lock();
      --running_;
      op->running = false;
      ++metrics_.refreshes[op->kind()];
      if (op->kind() == OpKind::Txn && !static_cast<TxnOp&>(*op).is_null()) ++metrics_.txn_refreshes;
      if (!op->dead) {
        for (auto s : changed) enqueue_readers(s);
        if (op->again) {
          op->again = false;
          enqueue(op);
        }
      }
      advance_finalized();
      cv_.notify_all();
      return true;
    }
    if (queue_.empty() && admit()) {
      cv_.notify_all();
      return true;
    }
    return false;
  }

  std::shared_ptr<Operator> pop() {
    while (!queue_.empty()) {
      auto it = queue_.begin();
      auto op = it->second;
      queue_.erase(it);
      if (op->dead) {
        op->queued = false;
        continue;
      }
      return op;
    }
    return nullptr;
  }

  void enqueue(const std::shared_ptr<Operator>& op) {
    if (op->dead) return;
    if (op->running) {
      op->again = true;
      return;
    }
    if (op->queued) return;
    op->queued = true;
    const std::uint64_t tie = cfg_.random_ties ? rng_() : ++seq_;
    queue_.emplace(QueueKey{op->rank, tie, op.get()}, op);
    metrics_.max_queue = std::max(metrics_.max_queue, queue_.size());
  }

  void enqueue_readers(SignalPtr s) {
    for (const auto& op : circuit_.readers(s)) enqueue(op);
  }

  bool admit() {
    std::size_t n = 0;
    while (n < cfg_.admit_batch && !holding_.empty()) {
      auto pick = holding_.begin();
      if (cfg_.read_only_first) {
        auto ro = std::find_if(holding_.begin(), holding_.end(),
                               [&](TxnId id) { return records_.at(id).program->read_only(); });
        if (ro != holding_.end()) pick = ro;
      }
      std::vector<std::shared_ptr<Operator>> created;
      Node* leaf = circuit_.free_leaf(&created);
      for (auto& op : created) enqueue(op);
      if (!leaf || leaf->txn->running) break;
      TxnRecord& rec = records_.at(*pick);
      leaf = circuit_.place(rec.id, rec.program, tip_, nullptr);
      leaf->finalized = false;
      rec.leaf = leaf;
      holding_.erase(pick);
      ++metrics_.admitted;
      enqueue(leaf->txn);
      ++n;
    }
    return n > 0;
  }

  bool busy(const Operator& op) const { return op.queued || op.running; }

  void advance_finalized() {
    Node* root = circuit_.root();
    if (!root) return;
    auto busy_fn = [this](const Operator& op) { return busy(op); };
    for (std::int64_t pos = std::max(first_open_, root->first); pos <= root->last; ++pos) {
      Node* leaf = circuit_.leaf_at(pos);
      first_open_ = pos;
      if (!leaf->occupied) return;
      if (leaf->finalized) continue;
      if (!leaf->txn->is_null()) {
        if (circuit_.blocked(leaf, busy_fn)) return;
        TxnRecord& rec = records_.at(leaf->txn->id());
        const Transaction* t = leaf->txn->txn();
        rec.outcome = t->failed() ? Outcome::Aborted : Outcome::Accepted;
        rec.failure = t->failure();
        if (t->failed()) ++metrics_.aborted;
        else ++metrics_.accepted;
        if (on_outcome) on_outcome(rec);
      }
      leaf->finalized = true;
    }
    first_open_ = root->last + 1;
  }

  bool all_finalized(const Node* n) const {
    if (!n) return true;
    if (n->leaf()) return !n->occupied || n->finalized;
    return all_finalized(n->left.get()) && all_finalized(n->right.get());
  }

  enum class CommitKind : std::uint8_t { None, All, Left, Prefix };

  CommitKind commit_due() const {
    const Node* root = circuit_.root();
    if (!root) return CommitKind::None;
    if (!cfg_.commit_while_busy && !queue_.empty()) return CommitKind::None;
    if (queue_.empty() && holding_.empty() && all_finalized(root)) return CommitKind::All;
    if (cfg_.commit == CommitStrategy::Simple) {
      if (root->leaf()) return CommitKind::None;
      if (first_open_ <= root->left->last || !leaf_full(root->left.get())) return CommitKind::None;
      const bool settling = circuit_.subtree_busy(root->left.get(), [this](const Operator& op) { return busy(op); });
      return settling ? CommitKind::None : CommitKind::Left;
    }
    // padded: when a full tree holds back admissions
    if (holding_.empty() || root->height < circuit_.max_height() || !leaf_full(root)) return CommitKind::None;
    return finalized_prefix_has_txn() || all_finalized(root) ? CommitKind::Prefix : CommitKind::None;
  }

  bool finalized_prefix_has_txn() const {
    const Node* root = circuit_.root();
    if (!root) return false;
    for (std::int64_t pos = root->first; pos < first_open_ && pos <= root->last; ++pos) {
      const Node* leaf = const_cast<Circuit&>(circuit_).leaf_at(pos);
      if (leaf->occupied && !leaf->txn->is_null()) return true;
    }
    return false;
  }

  static bool leaf_full(const Node* n) {
    if (n->leaf()) return n->occupied;
    return leaf_full(n->right.get()) && leaf_full(n->left.get());
  }

  DbVersion apply(DbVersion db, const DeltaMap& d, std::vector<PointKey>& keys) const {
    d.for_each([&](const PointKey& k, const Patch& p) {
      db = p.upsert ? db.upsert(k.pred, k.key, p.value) : db.retract(k.pred, k.key);
      keys.push_back(k);
    });
    return db;
  }

  void mark_committed(Node* leaf) {
    if (!leaf->occupied || leaf->txn->is_null()) return;
    TxnRecord& rec = records_.at(leaf->txn->id());
    rec.committed = true;
    rec.leaf = nullptr;
    order_.push_back(rec.id);
  }

  void commit(CommitKind kind) {
    Node* root = circuit_.root();
    std::vector<PointKey> keys;
    std::vector<SignalPtr> changed;
    if (kind == CommitKind::All) {
      for (auto* leaf : circuit_.occupied_leaves()) mark_committed(leaf);
      for (const auto& d : circuit_.detach_all()) tip_ = apply(tip_, d, keys);
    } else if (kind == CommitKind::Left) {
      std::vector<Node*> leaves;
      for (auto* leaf : circuit_.occupied_leaves()) {
        if (leaf->first <= root->left->last) leaves.push_back(leaf);
      }
      for (auto* leaf : leaves) mark_committed(leaf);
      for (const auto& d : circuit_.detach_left(&changed)) tip_ = apply(tip_, d, keys);
    } else {
      std::vector<Node*> prefix;
      for (auto* leaf : circuit_.occupied_leaves()) {
        if (!leaf->finalized) break;
        prefix.push_back(leaf);
      }
      for (auto* leaf : prefix) {
        if (leaf->txn->is_null()) continue;
        tip_ = apply(tip_, leaf->txn->txn()->delta(), keys);
        mark_committed(leaf);
        auto c = circuit_.nullify(leaf);
        changed.insert(changed.end(), c.begin(), c.end());
      }
      circuit_.shrink_to([](Node* n) { return n->occupied && !n->finalized; }, &changed);
    }
    ++metrics_.commits;
    if (Node* r = circuit_.root()) {
      first_open_ = r->first;
      for (auto* leaf : circuit_.occupied_leaves()) {
        if (leaf->txn->is_null()) continue;
        leaf->txn->rebase(tip_, keys);
        enqueue(leaf->txn);
      }
    } else {
      first_open_ = 0;
    }
    for (auto s : changed) enqueue_readers(s);
    advance_finalized();
  }

  EngineConfig cfg_;
  mutable std::mutex m_;
  std::condition_variable cv_;
  DbVersion tip_;
  Circuit circuit_;
  std::mt19937_64 rng_;
  std::map<QueueKey, std::shared_ptr<Operator>> queue_;
  std::uint64_t seq_ = 0;
  std::size_t running_ = 0;
  bool done_ = false;
  std::exception_ptr error_;
  std::deque<TxnId> holding_;
  std::map<TxnId, TxnRecord> records_;
  std::vector<TxnId> order_;
  TxnId next_id_ = 0;
  std::int64_t first_open_ = 0;  // first leaf position not yet finalized
  Metrics metrics_;
};

}  // namespace trepair
