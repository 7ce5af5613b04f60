#pragma once

#include <atomic>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trepair/pmap.hpp"
#include "trepair/schema.hpp"

namespace trepair {

struct TupleLess {
  bool operator()(const Tuple& a, const Tuple& b) const { return cmp(a, b) < 0; }
};

/// Stored contents of one predicate: key tuple -> value tuple (empty for
/// relations).
using Relation = PMap<Tuple, Tuple, TupleLess>;

namespace detail {
inline std::uint64_t next_db_version() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

/// Immutable database version. Branching is a copy; writes return a new
/// version and never touch the receiver.
class DbVersion {
 public:
  DbVersion() = default;
  explicit DbVersion(SchemaPtr schema)
      : schema_(std::move(schema)), preds_(schema_->size()), version_id_(detail::next_db_version()) {}

  const Schema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  std::uint64_t version_id() const { return version_id_; }

  const Relation& relation(PredId p) const { return preds_.at(static_cast<std::size_t>(p)); }

  [[nodiscard]] DbVersion upsert(PredId p, const Tuple& key, const Tuple& value) const {
    const auto& sig = schema_->at(p);
    check_tuple(sig, key, sig.key_types, "key");
    check_tuple(sig, value, sig.value_types, "value");
    DbVersion r = branch();
    auto& rel = r.preds_[static_cast<std::size_t>(p)];
    rel = rel.insert(key, value);
    return r;
  }

  [[nodiscard]] DbVersion retract(PredId p, const Tuple& key) const {
    const auto& sig = schema_->at(p);
    if (key.size() != sig.key_arity()) {
      throw SchemaError(sig.name + ": key arity " + std::to_string(key.size()) + ", expected " +
                        std::to_string(sig.key_arity()));
    }
    const auto& rel = relation(p);
    if (!rel.contains(key)) return *this;
    DbVersion r = branch();
    r.preds_[static_cast<std::size_t>(p)] = rel.erase(key);
    return r;
  }

  /// Replaces a predicate's contents wholesale (used by apply-deltas).
  [[nodiscard]] DbVersion with_relation(PredId p, Relation rel) const {
    DbVersion r = branch();
    r.preds_[static_cast<std::size_t>(p)] = std::move(rel);
    return r;
  }

  std::optional<Tuple> lookup(PredId p, const Tuple& key) const {
    const Tuple* v = relation(p).find(key);
    if (!v) return std::nullopt;
    return *v;
  }

  std::size_t record_count() const {
    std::size_t n = 0;
    for (const auto& r : preds_) n += r.size();
    return n;
  }

  bool same_contents(const DbVersion& o) const {
    if (preds_.size() != o.preds_.size()) return false;
    for (std::size_t i = 0; i < preds_.size(); ++i) {
      if (preds_[i].same_root(o.preds_[i])) continue;
      if (preds_[i].size() != o.preds_[i].size()) return false;
      if (preds_[i].items() != o.preds_[i].items()) return false;
    }
    return true;
  }

  /// Line-delimited snapshot: `pred_name<TAB>key_json<TAB>value_json`, in
  /// (pred_id, key) order.
  void export_snapshot(std::ostream& os) const {
    for (std::size_t i = 0; i < preds_.size(); ++i) {
      const auto& name = schema_->at(static_cast<PredId>(i)).name;
      preds_[i].for_each([&](const Tuple& k, const Tuple& v) {
        os << name << '\t' << tuple_to_json(k).dump() << '\t' << tuple_to_json(v).dump() << '\n';
      });
    }
  }

  std::string snapshot_text() const {
    std::ostringstream os;
    export_snapshot(os);
    return os.str();
  }

  static DbVersion import_snapshot(SchemaPtr schema, std::istream& is) {
    DbVersion db(std::move(schema));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto t1 = line.find('\t');
      auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) {
        throw SchemaError("snapshot line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
      }
      const auto& sig = db.schema().at(line.substr(0, t1));
      Tuple key = tuple_from_json(nlohmann::json::parse(line.substr(t1 + 1, t2 - t1 - 1)));
      Tuple val = tuple_from_json(nlohmann::json::parse(line.substr(t2 + 1)));
      db = db.upsert(sig.id, key, val);
    }
    return db;
  }

  /// FNV-1a over the snapshot text; stable across runs and platforms.
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : snapshot_text()) h = (h ^ c) * 0x100000001b3ULL;
    return h;
  }

 private:
  DbVersion branch() const {
    DbVersion r = *this;
    r.version_id_ = detail::next_db_version();
    return r;
  }

  SchemaPtr schema_;
  std::vector<Relation> preds_;
  std::uint64_t version_id_ = 0;
};

/// Ordered iterator over one predicate, positioned at keys >= a bound, with
/// forward seeks.
class StoreIterator {
 public:
  StoreIterator(const DbVersion& db, PredId p, const Bound& from)
      : rel_(db.relation(p)), cur_(rel_) {
    seek(from);
  }

  bool at_end() const { return cur_.at_end(); }
  const Tuple& key() const { return cur_.key(); }
  const Tuple& value() const { return cur_.value(); }
  void next() { cur_.next(); }
  /// Advances to the least key >= k.
  void seek(const Bound& k) {
    cur_.seek([&](const Tuple& x) { return cmp(x, k) < 0; });
  }
  void seek(const Tuple& k) {
    cur_.seek([&](const Tuple& x) { return cmp(x, k) < 0; });
  }
  std::uint64_t touches() const { return cur_.touches(); }

 private:
  Relation rel_;
  Relation::Cursor cur_;
};

inline DbVersion store_upsert(const DbVersion& db, const PredicateSig& pred, const Tuple& key,
                              const Tuple& value) {
  return db.upsert(pred.id, key, value);
}
inline DbVersion store_retract(const DbVersion& db, const PredicateSig& pred, const Tuple& key) {
  return db.retract(pred.id, key);
}
inline StoreIterator store_iter(const DbVersion& db, const PredicateSig& pred, const Bound& from) {
  return StoreIterator(db, pred.id, from);
}

}  // namespace trepair
