#include <cctype>

#include <gtest/gtest.h>

#include "serial_oracle.hpp"
#include "trepair/bench.hpp"

using namespace trepair;
using namespace trepair::bench;

namespace {

WorkloadConfig config(WorkloadKind kind, std::size_t n, double alpha, std::size_t txns, std::uint64_t seed = 3) {
  WorkloadConfig c;
  c.kind = kind;
  c.n = n;
  c.alpha = alpha;
  c.txns = txns;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Bench, PairwiseOverlapFollowsAlphaSquared) {
  auto cfg = config(WorkloadKind::Sku, 10000, 10, 1000);
  const double expected = 10.0 * 10.0;  // n * (alpha / sqrt(n))^2
  const double mean = mean_pairwise_common(sku_selections(cfg), 1000, 17);
  EXPECT_NEAR(mean, expected, expected * 0.1);
}

TEST(Bench, ZeroAlphaTouchesNothing) {
  auto w = gen_workload(config(WorkloadKind::Sku, 100, 0, 20));
  for (const auto& t : w.txns) EXPECT_TRUE(t.adjustments.empty());
  EXPECT_EQ(run_serial_oracle(w).state_hash, w.db.content_hash());
}

TEST(Bench, SkuExecutorsAgree) {
  auto w = gen_workload(config(WorkloadKind::Sku, 400, 2, 60));
  const auto serial = run_serial_oracle(w);
  for (std::size_t workers : {1u, 4u}) {
    EXPECT_EQ(run_lock_baseline(w, workers).state_hash, serial.state_hash);
    RepairOptions opt;
    opt.workers = workers;
    opt.height = 4;
    auto r = run_repair(w, opt);
    EXPECT_EQ(r.state_hash, serial.state_hash);
    EXPECT_EQ(r.outcome_hash, serial.outcome_hash);
  }
}

TEST(Bench, ChainRefreshesStayLinear) {
  auto w = gen_workload(config(WorkloadKind::CounterChain, 65, 0, 64));
  RepairOptions opt;
  opt.height = 6;
  opt.admit_batch = 64;
  opt.commit_while_busy = false;
  auto r = run_repair(w, opt);
  EXPECT_LE(r.txn_refreshes, 2u * 64u);
  EXPECT_EQ(r.state_hash, run_serial_oracle(w).state_hash);
}

TEST(Bench, RandomRuleTemplatesCompile) {
  SchemaPtr schema = bank_schema();
  std::mt19937_64 rng(1);
  std::set<std::string> seen;
  for (int i = 0; i < 400; ++i) {
    const std::string text = random_rule_text(rng, 16);
    std::string shape = text;
    for (auto& ch : shape) {
      if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '-') ch = '#';
    }
    shape.erase(std::unique(shape.begin(), shape.end()), shape.end());
    seen.insert(shape);
    EXPECT_NO_THROW(Program::compile(schema, text)) << text;
  }
  EXPECT_EQ(seen.size(), 9u);
}

TEST(Bench, RandomRulesMatchNestedLoopOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto w = gen_workload(config(WorkloadKind::RandomRules, 16, 0, 16, seed));
    serial::Db db = serial::from_version(w.db);
    std::vector<bool> failed;
    for (const auto& t : w.txns) failed.push_back(serial::run(*t.program, db).failed);
    RepairOptions opt;
    opt.height = 3;
    opt.admit_batch = 4;
    auto r = run_repair(w, opt);
    EXPECT_EQ(serial::from_version(r.state), db) << seed;
    EXPECT_EQ(r.failed, failed) << seed;
    EXPECT_EQ(run_serial_oracle(w).state_hash, r.state_hash) << seed;
  }
}

TEST(Bench, WorkloadsAreDeterministic) {
  for (auto kind : {WorkloadKind::Sku, WorkloadKind::RandomRules, WorkloadKind::CounterChain}) {
    auto a = gen_workload(config(kind, 64, 3, 10, 9));
    auto b = gen_workload(config(kind, 64, 3, 10, 9));
    ASSERT_EQ(a.txns.size(), b.txns.size());
    EXPECT_EQ(a.db.content_hash(), b.db.content_hash());
    for (std::size_t i = 0; i < a.txns.size(); ++i) EXPECT_EQ(a.txns[i].program->text(), b.txns[i].program->text());
  }
}

TEST(Bench, TransferThenOverdraft) {
  auto s = std::make_shared<Schema>();
  const PredId names = s->add("account_by_name", {Type::String}, {Type::Int});
  const PredId bal = s->add("acct_balance", {Type::Int}, {Type::Int});
  SchemaPtr schema = s;
  const std::string transfer = R"(
^acct_balance[n1] = a, ^acct_balance[n2] = b <-
    account_by_name["Alice"] = n1, account_by_name["Bob"] = n2,
    a = acct_balance@start[n1] - 100, b = acct_balance@start[n2] + 100.
false <- account_by_name["Alice"] = n1, acct_balance[n1] < 0.
)";
  Workload w{config(WorkloadKind::RandomRules, 0, 0, 2),
             DbVersion(schema).upsert(names, {"Alice"}, {1}).upsert(names, {"Bob"}, {2}).upsert(bal, {1}, {150}).upsert(bal, {2}, {0}),
             {}};
  for (int i = 0; i < 2; ++i) w.txns.push_back({Program::compile(schema, transfer), {}});
  auto r = run_serial_oracle(w);
  EXPECT_EQ(r.failed, (std::vector<bool>{false, true}));
  EXPECT_EQ(r.state.relation(bal).find({1})->at(0).as_int(), 50);
  EXPECT_EQ(r.state.relation(bal).find({2})->at(0).as_int(), 100);
  EXPECT_EQ(run_repair(w, RepairOptions{}).state_hash, r.state_hash);
}

TEST(Bench, CsvRow) {
  RunReport r;
  r.workers = 4;
  r.txns = 100;
  r.seconds = 0.5;
  r.throughput = 200;
  r.speedup = 1.5;
  r.txn_refreshes = 120;
  r.op_refreshes = 900;
  EXPECT_EQ(csv_row("sku", 10, r), "sku,10,4,100,0.500000,200.00,1.500,120,900");
  EXPECT_EQ(csv_header(), "workload,alpha,workers,txns,seconds,throughput,speedup,txn_refreshes,op_refreshes");
}
