#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "trepair/engine.hpp"

namespace trepair::bench {

enum class WorkloadKind : std::uint8_t { Sku, CounterChain, Counter, RandomRules };

inline WorkloadKind parse_workload(const std::string& s) {
  if (s == "sku") return WorkloadKind::Sku;
  if (s == "counter_chain" || s == "chain") return WorkloadKind::CounterChain;
  if (s == "counter") return WorkloadKind::Counter;
  if (s == "random_rules" || s == "random") return WorkloadKind::RandomRules;
  throw std::invalid_argument("unknown workload '" + s + "'");
}

inline const char* workload_name(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::Sku: return "sku";
    case WorkloadKind::CounterChain: return "counter_chain";
    case WorkloadKind::Counter: return "counter";
    case WorkloadKind::RandomRules: return "random_rules";
  }
  return "?";
}

struct WorkloadConfig {
  WorkloadKind kind = WorkloadKind::Sku;
  std::size_t n = 10000;  // skus, chain records, or keys per relation
  double alpha = 1.0;
  std::size_t txns = 1000;
  std::uint64_t seed = 1;
};

struct SkuAdjustment {
  std::int64_t sku;
  std::int64_t delta;
};

struct TxnSpec {
  std::shared_ptr<const Program> program;
  std::vector<SkuAdjustment> adjustments;  // sku workload only; what the lock baseline executes
};

struct Workload {
  WorkloadConfig cfg;
  DbVersion db;
  std::vector<TxnSpec> txns;
};

constexpr const char* kSkuRule = "^inventory[s] = w <- adj(s, d), inventory@start[s] = v, w = v + d.";

/// Skus each transaction touches: every sku independently with probability
/// alpha / sqrt(n).
inline std::vector<std::vector<std::int64_t>> sku_selections(const WorkloadConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const double p = std::min(1.0, cfg.alpha / std::sqrt(static_cast<double>(cfg.n)));
  std::vector<std::vector<std::int64_t>> out(cfg.txns);
  if (p <= 0) return out;
  // geometric skips instead of n Bernoulli draws per transaction
  std::geometric_distribution<std::int64_t> skip(p);
  const auto n = static_cast<std::int64_t>(cfg.n);
  for (auto& sel : out) {
    for (std::int64_t s = p >= 1.0 ? 0 : skip(rng); s < n; s += 1 + (p >= 1.0 ? 0 : skip(rng))) sel.push_back(s);
  }
  return out;
}

/// Mean number of skus shared by `pairs` random transaction pairs.
inline double mean_pairwise_common(const std::vector<std::vector<std::int64_t>>& sel, std::size_t pairs,
                                   std::uint64_t seed) {
  if (sel.size() < 2 || pairs == 0) return 0;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sel.size() - 1);
  double total = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    std::size_t a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    std::vector<std::int64_t> common;
    std::set_intersection(sel[a].begin(), sel[a].end(), sel[b].begin(), sel[b].end(), std::back_inserter(common));
    total += static_cast<double>(common.size());
  }
  return total / static_cast<double>(pairs);
}

inline Workload sku_workload(const WorkloadConfig& cfg) {
  auto s = std::make_shared<Schema>();
  const PredId inv = s->add("inventory", {Type::Int}, {Type::Int});
  SchemaPtr schema = s;
  Workload w{cfg, DbVersion(schema), {}};
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(cfg.n); ++k) w.db = w.db.upsert(inv, {k}, {100});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::int64_t> d(-3, 3);
  for (const auto& sel : sku_selections(cfg)) {
    TxnSpec t;
    Param adj{2, {}};
    for (auto sku : sel) {
      t.adjustments.push_back({sku, d(rng)});
      adj.rows.push_back({sku, t.adjustments.back().delta});
    }
    t.program = Program::compile(schema, kSkuRule, Params{{"adj", std::move(adj)}});
    w.txns.push_back(std::move(t));
  }
  return w;
}

/// Transaction i reads r[i mod n] and writes r[(i+1) mod n].
inline Workload chain_workload(const WorkloadConfig& cfg) {
  auto s = std::make_shared<Schema>();
  const PredId r = s->add("r", {Type::Int}, {Type::Int});
  SchemaPtr schema = s;
  const std::size_t n = std::max<std::size_t>(cfg.n, 2);
  Workload w{cfg, DbVersion(schema), {}};
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(n); ++k) w.db = w.db.upsert(r, {k}, {0});
  for (std::size_t i = 0; i < cfg.txns; ++i) {
    const std::string from = std::to_string(i % n), to = std::to_string((i + 1) % n);
    w.txns.push_back({Program::compile(schema, "^r[" + to + "] = w <- r@start[" + from + "] = v, w = v + 1."), {}});
  }
  return w;
}

/// Every transaction increments one shared counter.
inline Workload counter_workload(const WorkloadConfig& cfg) {
  auto s = std::make_shared<Schema>();
  const PredId c = s->add("ctr", {Type::Int}, {Type::Int});
  SchemaPtr schema = s;
  Workload w{cfg, DbVersion(schema).upsert(c, {0}, {0}), {}};
  auto inc = Program::compile(schema, "^ctr[0] = w <- ctr@start[0] = v, w = v + 1.");
  for (std::size_t i = 0; i < cfg.txns; ++i) w.txns.push_back({inc, {}});
  return w;
}

/// Four-relation bank schema used by the random rule workload.
inline SchemaPtr bank_schema() {
  auto s = std::make_shared<Schema>();
  s->add("acct", {Type::Int}, {Type::Int});
  s->add("flag", {Type::Int});
  s->add("owner", {Type::Int}, {Type::Int});
  s->add("limit", {Type::Int}, {Type::Int});
  return s;
}

inline DbVersion random_bank(std::mt19937_64& rng, const SchemaPtr& schema, std::int64_t keys) {
  DbVersion db(schema);
  const PredId acct = schema->at("acct").id, flag = schema->at("flag").id, owner = schema->at("owner").id,
               limit = schema->at("limit").id;
  for (std::int64_t k = 0; k < keys; ++k) {
    if (rng() % 5) db = db.upsert(acct, {k}, {static_cast<std::int64_t>(rng() % 120) - 10});
    if (rng() % 2) db = db.upsert(flag, {k}, {});
    if (rng() % 2) db = db.upsert(owner, {k}, {static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(keys))});
    if (rng() % 3 == 0) db = db.upsert(limit, {k}, {static_cast<std::int64_t>(rng() % 200)});
  }
  return db;
}

/// One random transaction body: transfers with overdraft checks, deposits
/// under limits, flag maintenance, derived ownership, and read-only queries.
inline std::string random_rule_text(std::mt19937_64& rng, std::int64_t keys) {
  auto k = [&] { return std::to_string(rng() % static_cast<std::uint64_t>(keys)); };
  auto c = [&] { return std::to_string(static_cast<int>(rng() % 120) - 10); };
  std::string a = k(), b = k();
  while (keys > 1 && b == a) b = k();
  switch (rng() % 9) {
    case 0:
      return "^acct[" + a + "] = x2, ^acct[" + b + "] = y2 <- acct@start[" + a + "] = x, acct@start[" + b +
             "] = y, x2 = x - " + c() + ", y2 = y + 7.\nfalse <- acct[" + a + "] = v, v < 0.";
    case 1: return "Rich(k) <- acct[k] = v, v > " + c() + ".";
    case 2: return "^flag(k) <- acct@start[k] = v, v > " + c() + ".";
    case 3: return "-flag(k) <- flag@start(k), acct@start[k] = v, v < " + c() + ".";
    case 4: return "T(k, v) <- acct[k] = v, v > " + c() + ".\n^owner[k] = v <- T(k, v).";
    case 5:
      return "^acct[" + a + "] = w <- acct@start[" + a + "] = v, w = v + " + c() +
             ".\nfalse <- acct[k] = v, limit[k] = m, v > m.";
    case 6: return "^acct[k] = w <- owner@start[k] = v, w = v * 2, v < " + c() + ".";
    case 7: return "Seen(k, o) <- owner[k] = o, flag(o), !limit[o] = _.";
    default: return "^acct[k] = 0 <- acct@start[k] = v, !flag(k), v > " + c() + ".";
  }
}

/// Random multi-rule transactions; fragment combinations that do not
/// compile together are redrawn.
inline std::shared_ptr<const Program> random_rules_program(std::mt19937_64& rng, const SchemaPtr& schema,
                                                           std::int64_t keys) {
  for (;;) {
    std::string text;
    const int parts = 1 + static_cast<int>(rng() % 2);
    for (int i = 0; i < parts; ++i) text += random_rule_text(rng, keys) + "\n";
    try {
      return Program::compile(schema, text);
    } catch (const RuleError&) {
    }
  }
}

inline Workload random_rules_workload(const WorkloadConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  SchemaPtr schema = bank_schema();
  const auto keys = static_cast<std::int64_t>(std::max<std::size_t>(cfg.n, 2));
  Workload w{cfg, random_bank(rng, schema, keys), {}};
  for (std::size_t i = 0; i < cfg.txns; ++i) w.txns.push_back({random_rules_program(rng, schema, keys), {}});
  return w;
}

/// Workload from a JSON script:
/// `{"schema": {...}, "data": {"pred": [[key, value], ...]}, "transactions": [text | {"file": path}]}`;
/// file paths are relative to `base_dir`.
inline Workload script_workload(const nlohmann::json& j, const std::string& base_dir) {
  auto schema = std::make_shared<const Schema>(Schema::from_json(j.at("schema")));
  Workload w{WorkloadConfig{}, DbVersion(schema), {}};
  if (j.contains("data")) {
    for (const auto& [name, rows] : j.at("data").items()) {
      const PredId p = schema->at(name).id;
      for (const auto& row : rows) {
        w.db = w.db.upsert(p, tuple_from_json(row.at(0)), row.size() > 1 ? tuple_from_json(row.at(1)) : Tuple{});
      }
    }
  }
  for (const auto& t : j.at("transactions")) {
    std::string text;
    if (t.is_string()) {
      text = t.get<std::string>();
    } else {
      std::ifstream in(base_dir + "/" + t.at("file").get<std::string>());
      if (!in) throw std::runtime_error("cannot read " + t.at("file").get<std::string>());
      text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    w.txns.push_back({Program::compile(schema, text), {}});
  }
  w.cfg.txns = w.txns.size();
  return w;
}

inline Workload gen_workload(const WorkloadConfig& cfg) {
  switch (cfg.kind) {
    case WorkloadKind::Sku: return sku_workload(cfg);
    case WorkloadKind::CounterChain: return chain_workload(cfg);
    case WorkloadKind::Counter: return counter_workload(cfg);
    case WorkloadKind::RandomRules: return random_rules_workload(cfg);
  }
  throw std::logic_error("unreachable");
}

struct RunReport {
  std::string executor;
  std::size_t workers = 1;
  std::size_t txns = 0;
  double seconds = 0;
  double throughput = 0;
  double speedup = 1;  // filled in by the caller against a one-worker run
  std::uint64_t txn_refreshes = 0;
  std::uint64_t op_refreshes = 0;
  std::uint64_t accepted = 0, aborted = 0;
  std::uint64_t state_hash = 0;
  std::uint64_t outcome_hash = 0;
  nlohmann::json metrics;
  DbVersion state;
  std::vector<bool> failed;  // per transaction, submission order
};

inline std::uint64_t hash_outcomes(const std::vector<bool>& failed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (bool f : failed) h = (h ^ (f ? 'a' : 'c')) * 0x100000001b3ULL;
  return h;
}

namespace detail {
inline void finish(RunReport& r, std::chrono::steady_clock::time_point t0) {
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.throughput = r.seconds > 0 ? static_cast<double>(r.txns) / r.seconds : 0;
  r.state_hash = r.state.content_hash();
  r.outcome_hash = hash_outcomes(r.failed);
  for (bool f : r.failed) ++(f ? r.aborted : r.accepted);
}
}  // namespace detail

/// One transaction at a time against the evolving database.
inline RunReport run_serial_oracle(const Workload& w) {
  RunReport r;
  r.executor = "serial";
  r.txns = w.txns.size();
  const auto t0 = std::chrono::steady_clock::now();
  DbVersion db = w.db;
  for (const auto& t : w.txns) {
    Transaction x(t.program);
    x.evaluate(db, DeltaMap());
    r.failed.push_back(x.failed());
    ++r.txn_refreshes;
    x.delta().for_each([&](const PointKey& k, const Patch& p) {
      db = p.upsert ? db.upsert(k.pred, k.key, p.value) : db.retract(k.pred, k.key);
    });
  }
  r.state = db;
  detail::finish(r, t0);
  return r;
}

/// Row-level locking for the sku workload: each transaction takes exclusive
/// locks on its skus in ascending order (no deadlock), applies its
/// adjustments, and releases them.
inline RunReport run_lock_baseline(const Workload& w, std::size_t workers) {
  if (w.cfg.kind != WorkloadKind::Sku) throw std::invalid_argument("the lock baseline runs the sku workload only");
  RunReport r;
  r.executor = "lock";
  r.workers = workers;
  r.txns = w.txns.size();
  const PredId inv = w.db.schema().at("inventory").id;
  std::vector<std::int64_t> qty(w.cfg.n, 0);
  w.db.relation(inv).for_each([&](const Tuple& k, const Tuple& v) { qty[static_cast<std::size_t>(k[0].as_int())] = v[0].as_int(); });
  std::vector<std::mutex> locks(w.cfg.n);
  std::atomic<std::size_t> next{0};
  const auto t0 = std::chrono::steady_clock::now();
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < w.txns.size();) {
      const auto& adj = w.txns[i].adjustments;  // sku order is ascending
      for (const auto& a : adj) locks[static_cast<std::size_t>(a.sku)].lock();
      for (const auto& a : adj) qty[static_cast<std::size_t>(a.sku)] += a.delta;
      for (auto it = adj.rbegin(); it != adj.rend(); ++it) locks[static_cast<std::size_t>(it->sku)].unlock();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < workers; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  DbVersion db = w.db;
  for (std::size_t k = 0; k < qty.size(); ++k) db = db.upsert(inv, {static_cast<std::int64_t>(k)}, {qty[k]});
  r.state = db;
  r.failed.assign(w.txns.size(), false);
  detail::finish(r, t0);
  return r;
}

struct RepairOptions {
  std::size_t workers = 1;
  int height = 6;
  CommitStrategy commit = CommitStrategy::Simple;
  std::size_t admit_batch = 0;  // 0: one per worker
  bool inverted_priority = false;
  bool commit_while_busy = true;
};

/// Drives the engine end to end.
inline RunReport run_repair(const Workload& w, const RepairOptions& opt) {
  RunReport r;
  r.executor = "repair";
  r.workers = opt.workers;
  r.txns = w.txns.size();
  EngineConfig cfg;
  cfg.workers = opt.workers;
  cfg.max_height = opt.height;
  cfg.commit = opt.commit;
  cfg.admit_batch = opt.admit_batch ? opt.admit_batch : opt.workers;
  cfg.inverted_priority = opt.inverted_priority;
  cfg.commit_while_busy = opt.commit_while_busy;
  const auto t0 = std::chrono::steady_clock::now();
  Engine e(w.db, cfg);
  std::vector<TxnId> ids;
  for (const auto& t : w.txns) ids.push_back(e.submit(t.program));
  e.run();
  r.state = e.tip();
  for (auto id : ids) r.failed.push_back(e.outcome(id) == Outcome::Aborted);
  const auto m = e.metrics();
  r.txn_refreshes = m.txn_refreshes;
  for (const auto& [kind, n] : m.refreshes) r.op_refreshes += n;
  r.metrics = e.metrics_json();
  detail::finish(r, t0);
  return r;
}

inline std::string csv_header() { return "workload,alpha,workers,txns,seconds,throughput,speedup,txn_refreshes,op_refreshes"; }

inline std::string csv_row(const std::string& workload, double alpha, const RunReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%g,%zu,%zu,%.6f,%.2f,%.3f,%llu,%llu", workload.c_str(), alpha, r.workers, r.txns,
                r.seconds, r.throughput, r.speedup, static_cast<unsigned long long>(r.txn_refreshes),
                static_cast<unsigned long long>(r.op_refreshes));
  return buf;
}

}  // namespace trepair::bench
