#include <random>

#include <gtest/gtest.h>

#include "serial_oracle.hpp"
#include "txn_gen.hpp"
#include "trepair/txn.hpp"

using namespace trepair;
using gen::Small;
using gen::fragment;
using gen::random_db;

namespace {

const char* kTransfer = R"(
^acct_balance[n1] = a, ^acct_balance[n2] = b <-
    account_by_name["Alice"] = n1,
    account_by_name["Bob"] = n2,
    a = acct_balance@start[n1] - 100,
    b = acct_balance@start[n2] + 100.
false <- account_by_name["Alice"] = n1, acct_balance[n1] < 0.
)";

struct Bank {
  SchemaPtr schema;
  PredId names, balance;
  DbVersion db;

  explicit Bank(std::int64_t alice) {
    auto s = std::make_shared<Schema>();
    names = s->add("account_by_name", {Type::String}, {Type::Int});
    balance = s->add("acct_balance", {Type::Int}, {Type::Int});
    schema = s;
    db = DbVersion(schema)
             .upsert(names, {"Alice"}, {1})
             .upsert(names, {"Bob"}, {2})
             .upsert(balance, {1}, {alice})
             .upsert(balance, {2}, {100});
  }
};

std::map<PointKey, Patch, PointKeyLess> items(const DeltaMap& m) {
  std::map<PointKey, Patch, PointKeyLess> out;
  m.for_each([&](const PointKey& k, const Patch& p) { out.emplace(k, p); });
  return out;
}

DeltaMap balance_correction(const Bank& b, std::int64_t v) {
  return DeltaMap().insert(PointKey{b.balance, {1}}, Patch::put({v}));
}

}  // namespace

TEST(Txn, TransferDelta) {
  Bank b(250);
  Transaction t(Program::compile(b.schema, kTransfer));
  t.evaluate(b.db, {});
  EXPECT_EQ(t.status(), TxnStatus::Evaluated);
  auto d = items(t.delta());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.at(PointKey{b.balance, {1}}), Patch::put({150}));
  EXPECT_EQ(d.at(PointKey{b.balance, {2}}), Patch::put({200}));
  for (const auto& k : {PointKey{b.names, {"Alice"}}, PointKey{b.names, {"Bob"}}, PointKey{b.balance, {1}},
                        PointKey{b.balance, {2}}}) {
    EXPECT_TRUE(stab_exists(t.sens(), k.pred, k.key)) << to_string(k);
  }
  EXPECT_FALSE(stab_exists(t.sens(), b.names, {"Carol"}));
}

TEST(Txn, OverdraftFails) {
  Bank b(50);
  Transaction t(Program::compile(b.schema, kTransfer));
  t.evaluate(b.db, {});
  EXPECT_EQ(t.status(), TxnStatus::Failed);
  EXPECT_NE(t.failure().find("constraint"), std::string::npos);
  EXPECT_TRUE(t.delta().empty());
  // sensitivities stay published so later corrections still reach the transaction
  EXPECT_TRUE(stab_exists(t.sens(), b.balance, {1}));
}

TEST(Txn, CorrectionRevisesDelta) {
  Bank b(250);
  Transaction t(Program::compile(b.schema, kTransfer));
  t.evaluate(b.db, {});
  t.repair(b.db, balance_correction(b, 300), {PointKey{b.balance, {1}}});
  auto d = items(t.delta());
  EXPECT_EQ(d.at(PointKey{b.balance, {1}}), Patch::put({200}));
  EXPECT_EQ(d.at(PointKey{b.balance, {2}}), Patch::put({200}));
}

TEST(Txn, FailedTransactionRecovers) {
  Bank b(50);
  Transaction t(Program::compile(b.schema, kTransfer));
  t.evaluate(b.db, {});
  ASSERT_TRUE(t.failed());
  t.repair(b.db, balance_correction(b, 500), {PointKey{b.balance, {1}}});
  EXPECT_EQ(t.status(), TxnStatus::Evaluated);
  EXPECT_EQ(items(t.delta()).at(PointKey{b.balance, {1}}), Patch::put({400}));
}

TEST(Txn, IrrelevantCorrectionIsQuiet) {
  Bank b(250);
  Transaction t(Program::compile(b.schema, kTransfer));
  t.evaluate(b.db, {});
  const auto before = t.delta();
  const auto ops = t.join_ops();
  t.take_new_sens();
  DeltaMap c = DeltaMap().insert(PointKey{b.balance, {7}}, Patch::put({1}));
  t.repair(b.db, c, {PointKey{b.balance, {7}}});
  EXPECT_EQ(items(t.delta()), items(before));
  EXPECT_EQ(t.join_ops(), ops);
  EXPECT_TRUE(t.take_new_sens().empty());
}

TEST(Txn, ReadOnlyTransaction) {
  Bank b(250);
  auto p = Program::compile(b.schema, "Rich(n) <- account_by_name[n] = i, acct_balance[i] = v, v > 200.");
  EXPECT_TRUE(p->read_only());
  Transaction t(p);
  t.evaluate(b.db, {});
  EXPECT_TRUE(t.delta().empty());
  EXPECT_EQ(t.temp("Rich"), (std::vector<Tuple>{{"Alice"}}));
  EXPECT_TRUE(stab_exists(t.sens(), b.balance, {1}));
}

TEST(Txn, ExecutionGraphOrder) {
  Bank b(250);
  // constraint listed first still runs after the upsert it reads through
  auto p = Program::compile(b.schema, R"(
false <- acct_balance[1] = v, v < 0.
^acct_balance[1] = w <- acct_balance@start[1] = v, w = v - 300.
)");
  ASSERT_EQ(p->rules().size(), 2u);
  EXPECT_FALSE(p->rules()[0].flat.constraint);
  EXPECT_TRUE(p->rules()[1].flat.constraint);
  EXPECT_NE(p->to_dot().find("\"dacct_balance\" -> \"acct_balance@end\""), std::string::npos);
  Transaction t(p);
  t.evaluate(b.db, {});
  EXPECT_TRUE(t.failed());

  auto q = Program::compile(b.schema, "Hi(n) <- acct_balance[n] = v, v > 0.");
  EXPECT_EQ(q->to_dot().find("dacct_balance"), std::string::npos);
}

TEST(Txn, RejectsCycles) {
  Bank b(250);
  EXPECT_THROW(Program::compile(b.schema, "^acct_balance[n] = w <- acct_balance[n] = v, w = v + 1."), RuleError);
  EXPECT_THROW(Program::compile(b.schema, "T(n) <- S(n).\nS(n) <- T(n)."), RuleError);
}

TEST(Txn, UpsertUnionAndConflict) {
  Bank b(250);
  Transaction ok(Program::compile(b.schema, R"(
^acct_balance[1] = 7 <- acct_balance@start[1] = _.
^acct_balance[2] = 8 <- acct_balance@start[2] = _.
^acct_balance[2] = 8 <- account_by_name["Bob"] = _.
)"));
  ok.evaluate(b.db, {});
  EXPECT_EQ(items(ok.delta()).size(), 2u);

  Transaction bad(Program::compile(b.schema, R"(
^acct_balance[1] = 7 <- acct_balance@start[1] = _.
-acct_balance[1] <- account_by_name["Alice"] = _.
)"));
  bad.evaluate(b.db, {});
  EXPECT_TRUE(bad.failed());
  EXPECT_NE(bad.failure().find("conflicting"), std::string::npos);
}

TEST(Txn, Parameters) {
  Bank b(250);
  Params prm{{"amount", {1, {{Value(std::int64_t{30})}}}}};
  Transaction t(Program::compile(b.schema, "^acct_balance[1] = w <- amount(x), acct_balance@start[1] = v, w = v + x.", prm));
  t.evaluate(b.db, {});
  EXPECT_EQ(items(t.delta()).at(PointKey{b.balance, {1}}), Patch::put({280}));
}

namespace {

std::pair<PointKey, Patch> random_patch(std::mt19937& rng, const Small& s) {
  const auto k = static_cast<std::int64_t>(rng() % 7);
  switch (rng() % 3) {
    case 0:
      return {PointKey{s.bal, {k}}, rng() % 4 ? Patch::put({static_cast<std::int64_t>(rng() % 120) - 10}) : Patch::retraction()};
    case 1: return {PointKey{s.flag, {k}}, rng() % 2 ? Patch::put({}) : Patch::retraction()};
    default: return {PointKey{s.own, {k}}, rng() % 3 ? Patch::put({static_cast<std::int64_t>(rng() % 6)}) : Patch::retraction()};
  }
}

serial::Db corrected(const DbVersion& base, const DeltaMap& corr) {
  auto db = serial::from_version(base);
  corr.for_each([&](const PointKey& k, const Patch& p) {
    if (p.upsert) db[k.pred][k.key] = p.value;
    else db[k.pred].erase(k.key);
  });
  return db;
}

void expect_matches(const Transaction& t, const serial::Outcome& want, const std::string& where) {
  ASSERT_EQ(t.failed(), want.failed) << where << " " << t.failure();
  if (want.failed) return;
  std::map<std::pair<PredId, Tuple>, std::optional<Tuple>> got;
  t.delta().for_each([&](const PointKey& k, const Patch& p) {
    got[{k.pred, k.key}] = p.upsert ? std::optional<Tuple>(p.value) : std::nullopt;
  });
  ASSERT_EQ(got, want.delta) << where;
}

}  // namespace

TEST(Txn, RandomRepairsMatchSerialExecution) {
  std::mt19937 rng(41);
  Small s;
  int checked = 0;
  for (int round = 0; round < 250; ++round) {
    std::string text;
    const int parts = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < parts; ++i) text += fragment(rng) + "\n";
    SCOPED_TRACE(text);
    std::shared_ptr<const Program> prog;
    try {
      prog = Program::compile(s.schema, text);
    } catch (const RuleError&) {
      continue;  // e.g. duplicate temporaries with clashing shapes
    }
    DbVersion base = random_db(rng, s);
    DeltaMap corr;
    Transaction t(prog);
    t.evaluate(base, corr);
    {
      auto db = corrected(base, corr);
      expect_matches(t, serial::run(*prog, db), "eval");
    }
    SensSet prev = t.sens();
    for (int step = 0; step < 5; ++step) {
      std::vector<PointKey> changed;
      const int n = 1 + static_cast<int>(rng() % 3);
      for (int i = 0; i < n; ++i) {
        auto [k, p] = random_patch(rng, s);
        changed.push_back(k);
        if (rng() % 3 == 0) {
          // base change instead of a correction
          base = p.upsert ? base.upsert(k.pred, k.key, p.value) : base.retract(k.pred, k.key);
        } else if (rng() % 4 == 0) {
          corr = corr.erase(k);
        } else {
          corr = corr.insert(k, p);
        }
      }
      t.repair(base, corr, changed);
      auto db = corrected(base, corr);
      expect_matches(t, serial::run(*prog, db), "step " + std::to_string(step));
      Transaction fresh(prog);
      fresh.evaluate(base, corr);
      for (const auto& [name, src] : prog->temps()) ASSERT_EQ(t.temp(name), fresh.temp(name)) << name;
      prev.for_each([&](const SensRecord& r, const Unit&) { ASSERT_TRUE(t.sens().contains(r)); });
      prev = t.sens();
    }
    ++checked;
  }
  EXPECT_GE(checked, 200);
}
