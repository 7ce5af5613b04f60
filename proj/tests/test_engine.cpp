#include <optional>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "serial_oracle.hpp"
#include "trepair/engine.hpp"
#include "txn_gen.hpp"

using namespace trepair;

namespace {

struct Counter {
  SchemaPtr schema;
  PredId ctr;
  DbVersion db;
  std::shared_ptr<const Program> inc;

  Counter() {
    auto s = std::make_shared<Schema>();
    ctr = s->add("ctr", {Type::Int}, {Type::Int});
    schema = s;
    db = DbVersion(schema).upsert(ctr, {0}, {0});
    inc = Program::compile(schema, "^ctr[0] = w <- ctr@start[0] = v, w = v + 1.");
  }

  std::int64_t value(const DbVersion& v) const { return v.relation(ctr).find({0})->at(0).as_int(); }
};

EngineConfig chain_config(std::size_t k, bool inverted) {
  EngineConfig cfg;
  cfg.max_height = 0;
  while ((std::size_t{1} << cfg.max_height) < k) ++cfg.max_height;
  cfg.admit_batch = k;
  cfg.inverted_priority = inverted;
  cfg.commit_while_busy = false;
  return cfg;
}

// Schedule model of a counter chain: a transaction's first evaluation sees
// only the base (its sensitivities are not published yet); later refreshes
// see the output of the nearest earlier transaction that has published.
std::uint64_t simulated_chain_refreshes(std::size_t k, bool inverted) {
  std::vector<std::optional<std::int64_t>> out(k);
  std::set<std::size_t> queue;
  for (std::size_t i = 0; i < k; ++i) queue.insert(i);
  auto visible = [&](std::size_t i) {
    for (std::size_t j = i; j-- > 0;) {
      if (out[j]) return *out[j];
    }
    return std::int64_t{0};
  };
  std::uint64_t n = 0;
  while (!queue.empty()) {
    auto it = inverted ? std::prev(queue.end()) : queue.begin();
    const std::size_t i = *it;
    queue.erase(it);
    ++n;
    out[i] = (out[i] ? visible(i) : 0) + 1;
    for (std::size_t m = i; m < k; ++m) {
      if (out[m] && *out[m] != visible(m) + 1) queue.insert(m);
    }
  }
  return n;
}

std::uint64_t chain_refreshes(std::size_t k, bool inverted) {
  Counter c;
  Engine e(c.db, chain_config(k, inverted));
  for (std::size_t i = 0; i < k; ++i) e.submit(c.inc);
  e.run();
  EXPECT_EQ(c.value(e.tip()), static_cast<std::int64_t>(k));
  return e.metrics().txn_refreshes;
}

struct Workload {
  DbVersion db;
  std::vector<std::shared_ptr<const Program>> txns;
};

Workload random_workload(std::mt19937& rng, const gen::Small& s, std::size_t n) {
  Workload w{gen::random_db(rng, s), {}};
  while (w.txns.size() < n) {
    if (auto p = gen::random_program(rng, s)) w.txns.push_back(p);
  }
  return w;
}

struct Result {
  serial::Db state;
  std::vector<bool> failed;  // by submission index
  std::vector<TxnId> order;
};

Result run_engine(const Workload& w, EngineConfig cfg) {
  Engine e(w.db, std::move(cfg));
  std::vector<TxnId> ids;
  for (const auto& p : w.txns) ids.push_back(e.submit(p));
  e.run();
  Result r{serial::from_version(e.tip()), {}, e.serial_order()};
  for (auto id : ids) {
    EXPECT_NE(e.outcome(id), Outcome::Pending);
    r.failed.push_back(e.outcome(id) == Outcome::Aborted);
  }
  return r;
}

Result run_serial(const Workload& w) {
  Result r{serial::from_version(w.db), {}, {}};
  for (const auto& p : w.txns) r.failed.push_back(serial::run(*p, r.state).failed);
  return r;
}

}  // namespace

TEST(Engine, SingleTransactionEvaluatedOnce) {
  Counter c;
  Engine e(c.db, EngineConfig{});
  auto id = e.submit(c.inc);
  e.run();
  EXPECT_EQ(e.outcome(id), Outcome::Accepted);
  EXPECT_EQ(e.metrics().txn_refreshes, 1u);
  EXPECT_EQ(c.value(e.tip()), 1);
  EXPECT_EQ(e.metrics().commits, 1u);
}

TEST(Engine, ConflictChainRefreshCounts) {
  EXPECT_EQ(simulated_chain_refreshes(4, false), 7u);
  EXPECT_EQ(simulated_chain_refreshes(4, true), 10u);
  for (std::size_t k : {1u, 2u, 3u, 4u, 8u, 16u}) {
    EXPECT_EQ(chain_refreshes(k, false), simulated_chain_refreshes(k, false)) << k;
    EXPECT_EQ(chain_refreshes(k, true), simulated_chain_refreshes(k, true)) << k;
  }
}

TEST(Engine, EagerCommitsShortenChains) {
  Counter c;
  EngineConfig cfg = chain_config(8, false);
  cfg.commit_while_busy = true;
  Engine e(c.db, cfg);
  for (int i = 0; i < 8; ++i) e.submit(c.inc);
  e.run();
  EXPECT_EQ(c.value(e.tip()), 8);
  EXPECT_LE(e.metrics().txn_refreshes, 15u);
}

TEST(Engine, ChainOfSixtyFour) {
  EXPECT_LE(chain_refreshes(64, false), 128u);
  EXPECT_GE(chain_refreshes(64, true), 64u * 64u / 4u);
}

TEST(Engine, WhenIdleIntakeNeedsNoRepair) {
  Counter c;
  EngineConfig cfg;
  cfg.max_height = 2;
  Engine e(c.db, cfg);
  for (int i = 0; i < 9; ++i) e.submit(c.inc);
  e.run();
  EXPECT_EQ(c.value(e.tip()), 9);
  EXPECT_EQ(e.metrics().txn_refreshes, 9u);
  EXPECT_EQ(e.metrics().admitted, 9u);
}

TEST(Engine, FinalizationWaitsForEarlierTransactions) {
  Counter c;
  EngineConfig cfg = chain_config(2, false);
  Engine e(c.db, cfg);
  auto a = e.submit(c.inc);
  auto b = e.submit(c.inc);
  std::uint64_t steps = 0;
  while (e.outcome(a) == Outcome::Pending) {
    ASSERT_TRUE(e.step());
    ++steps;
  }
  EXPECT_GT(steps, 2u);  // the sensitivity merge on its cycle has to settle first
  EXPECT_EQ(e.outcome(b), Outcome::Pending);
  while (e.step()) {
  }
  EXPECT_EQ(e.outcome(b), Outcome::Accepted);
  EXPECT_EQ(c.value(e.tip()), 2);
}

TEST(Engine, FailedTransactionIsAborted) {
  gen::Small s;
  DbVersion db = DbVersion(s.schema).upsert(s.bal, {1}, {10});
  auto drain = Program::compile(s.schema, "^bal[1] = w <- bal@start[1] = v, w = v - 8.\nfalse <- bal[1] = v, v < 0.");
  Engine e(db, chain_config(2, false));
  auto a = e.submit(drain);
  auto b = e.submit(drain);
  e.run();
  EXPECT_EQ(e.outcome(a), Outcome::Accepted);
  EXPECT_EQ(e.outcome(b), Outcome::Aborted);
  EXPECT_NE(e.failure(b).find("constraint"), std::string::npos);
  EXPECT_EQ(e.tip().relation(s.bal).find({1})->at(0).as_int(), 2);
}

TEST(Engine, MatchesSerialExecution) {
  std::mt19937 rng(5);
  gen::Small s;
  int checked = 0;
  for (int round = 0; round < 60; ++round) {
    Workload w = random_workload(rng, s, 1 + rng() % 12);
    EngineConfig cfg;
    cfg.max_height = 1 + static_cast<int>(rng() % 3);
    cfg.admit_batch = 1 + rng() % 8;
    cfg.commit = rng() % 2 ? CommitStrategy::Padded : CommitStrategy::Simple;
    cfg.random_ties = rng() % 2;
    cfg.seed = rng();
    SCOPED_TRACE(round);
    Result want = run_serial(w);
    Result got = run_engine(w, cfg);
    EXPECT_EQ(got.state, want.state);
    EXPECT_EQ(got.failed, want.failed);
    ASSERT_EQ(got.order.size(), w.txns.size());
    for (std::size_t i = 0; i < got.order.size(); ++i) EXPECT_EQ(got.order[i], i + 1);
    ++checked;
  }
  EXPECT_EQ(checked, 60);
}

TEST(Engine, WorkerCountsAgree) {
  std::mt19937 rng(9);
  gen::Small s;
  for (int round = 0; round < 6; ++round) {
    Workload w = random_workload(rng, s, 10);
    EngineConfig base;
    base.max_height = 3;
    base.admit_batch = 8;
    Result first = run_engine(w, base);
    for (std::size_t workers : {1u, 2u, 4u, 8u}) {
      EngineConfig cfg = base;
      cfg.workers = workers;
      cfg.random_ties = true;
      cfg.seed = rng();
      Result r = run_engine(w, cfg);
      EXPECT_EQ(r.state, first.state) << workers;
      EXPECT_EQ(r.failed, first.failed) << workers;
    }
  }
}

TEST(Engine, PaddedCommitOfFinalizedPrefix) {
  gen::Small s;
  DbVersion db(s.schema);
  for (std::int64_t k = 0; k < 4; ++k) db = db.upsert(s.bal, {k}, {0});
  std::vector<std::shared_ptr<const Program>> progs;
  for (int k = 0; k < 4; ++k) {
    const std::string key = std::to_string(k);
    progs.push_back(Program::compile(s.schema, "^bal[" + key + "] = w <- bal@start[" + key + "] = v, w = v + 1."));
  }
  EngineConfig cfg = chain_config(4, false);
  cfg.commit = CommitStrategy::Padded;
  Engine e(db, cfg);
  std::vector<TxnId> ids;
  for (const auto& p : progs) ids.push_back(e.submit(p));
  while (e.outcome(ids[2]) == Outcome::Pending) ASSERT_TRUE(e.step());
  ASSERT_EQ(e.outcome(ids[3]), Outcome::Pending);
  ASSERT_TRUE(e.commit_finalized());
  EXPECT_EQ(e.serial_order(), (std::vector<TxnId>{ids[0], ids[1], ids[2]}));
  // the live tree is the leaf of the remaining transaction
  EXPECT_TRUE(e.circuit().root()->leaf());
  EXPECT_EQ(e.circuit().root()->first, 3);
  for (std::int64_t k = 0; k < 3; ++k) EXPECT_EQ(e.tip().relation(s.bal).find({k})->at(0).as_int(), 1);
  e.run();
  EXPECT_EQ(e.serial_order().size(), 4u);
  EXPECT_EQ(e.tip().relation(s.bal).find({3})->at(0).as_int(), 1);
}

TEST(Engine, BumpMovesTransactionToTheEnd) {
  Counter c;
  auto dbl = Program::compile(c.schema, "^ctr[0] = w <- ctr@start[0] = v, w = v * 2.");
  Engine e(c.db, chain_config(4, false));
  auto a = e.submit(dbl);
  auto b = e.submit(c.inc);
  e.step();  // admits both
  EXPECT_TRUE(e.bump(a));
  EXPECT_FALSE(e.bump(a));  // no longer in the tree
  e.run();
  EXPECT_EQ(e.serial_order(), (std::vector<TxnId>{b, a}));
  EXPECT_EQ(c.value(e.tip()), 2);  // (0 + 1) * 2
  EXPECT_EQ(e.metrics().bumps, 1u);
}

TEST(Engine, ReadOnlyFirst) {
  Counter c;
  auto peek = Program::compile(c.schema, "Seen(v) <- ctr[0] = v.");
  EngineConfig cfg;
  cfg.read_only_first = true;
  Engine e(c.db, cfg);
  auto a = e.submit(c.inc);
  auto b = e.submit(peek);
  e.run();
  EXPECT_EQ(e.serial_order(), (std::vector<TxnId>{b, a}));
}

TEST(Engine, MetricsJson) {
  Counter c;
  Engine e(c.db, chain_config(4, false));
  for (int i = 0; i < 4; ++i) e.submit(c.inc);
  e.run();
  auto j = e.metrics_json();
  EXPECT_EQ(j.at("txn_refreshes").get<int>(), 7);
  EXPECT_EQ(j.at("accepted").get<int>(), 4);
  EXPECT_TRUE(j.at("operator_refreshes").contains("merge_delta"));
  EXPECT_GE(j.at("commits").get<int>(), 1);
}
