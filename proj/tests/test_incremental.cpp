#include <set>
#include <random>

#include <gtest/gtest.h>

#include "rule_gen.hpp"
#include "trepair/inclftj.hpp"

using namespace trepair;

namespace {

Catalog abc_catalog() {
  Catalog c;
  c.add_param("A", 1, {Type::Int});
  c.add_param("B", 2, {Type::Int, Type::Int});
  c.add_param("C", 1, {Type::Int});
  return c;
}

std::vector<Tuple> ints(std::initializer_list<std::int64_t> xs) {
  std::vector<Tuple> out;
  for (auto x : xs) out.push_back({Value(x)});
  return out;
}

struct Abc {
  std::vector<Tuple> a = ints({1, 3, 4, 5, 6, 7});
  std::vector<Tuple> b{{2, 100}, {5, 101}, {5, 102}, {5, 106}, {7, 108}, {7, 110}};
  std::vector<Tuple> c = ints({101, 104, 108});

  std::vector<View> views() const {
    return {tuple_set_view(a, 1), tuple_set_view(b, 2), tuple_set_view(c, 1)};
  }
};

RuleMaintainer abc_rule() {
  Catalog cat = abc_catalog();
  auto r = parse_rules("D(x,y) <- A(x), B(x,y), C(y).", cat)[0];
  auto p = plan_rule(r, cat);
  return RuleMaintainer(r, p);
}

bool indexed(const RuleMaintainer& m, int atom, std::int64_t lo, std::int64_t hi, Tuple ctx) {
  bool hit = false;
  m.index().for_each([&](const IndexEntry& e, const Unit&) {
    hit = hit || (e.pred == atom && e.lo == Bound::below({Value(lo)}) && e.hi == Bound::above({Value(hi)}) &&
                  e.region.prefix == ctx);
  });
  return hit;
}

}  // namespace

TEST(Incremental, InsertIntoSensitiveInterval) {
  Abc d;
  RuleMaintainer m = abc_rule();
  auto init = m.init(d.views());
  EXPECT_EQ(init.added.size(), 2u);
  EXPECT_TRUE(indexed(m, 2, 106, 108, {5}));
  EXPECT_TRUE(indexed(m, 2, 102, 104, {5}));

  auto stabbed = stab_all(m.index(), 2, Tuple{102});
  ASSERT_EQ(stabbed.size(), 1u);
  EXPECT_EQ(stabbed[0].region.prefix, (Tuple{5}));

  d.c.push_back({102});
  std::vector<TupleChanges> ch(3);
  ch[2].added.push_back({102});
  auto delta = m.update(d.views(), ch);
  ASSERT_EQ(delta.added.size(), 1u);
  EXPECT_EQ(delta.added[0].tuple, (Tuple{5, 102}));
  EXPECT_TRUE(delta.removed.empty());
  EXPECT_EQ(m.reruns(), 1u);
}

TEST(Incremental, InsertOutsideTraceIsEmpty) {
  Abc d;
  RuleMaintainer m = abc_rule();
  m.init(d.views());
  d.c.push_back({105});
  std::vector<TupleChanges> ch(3);
  ch[2].added.push_back({105});
  auto delta = m.update(d.views(), ch);
  EXPECT_TRUE(delta.empty());
}

TEST(Incremental, RemovalAndEmptyRelation) {
  Catalog cat = abc_catalog();
  auto r = parse_rules("R(x) <- A(x), C(x).", cat)[0];
  RuleMaintainer m(r, plan_rule(r, cat));
  EXPECT_TRUE(m.init({tuple_set_view({}, 1), tuple_set_view(ints({3}), 1)}).empty());
  std::vector<TupleChanges> ch(2);
  ch[0].added = ints({3});
  auto d1 = m.update({tuple_set_view(ints({3}), 1), tuple_set_view(ints({3}), 1)}, ch);
  ASSERT_EQ(d1.added.size(), 1u);
  ch[0] = {};
  ch[1].removed = ints({3});
  auto d2 = m.update({tuple_set_view(ints({3}), 1), tuple_set_view({}, 1)}, ch);
  ASSERT_EQ(d2.removed.size(), 1u);
  EXPECT_FALSE(m.fires());
}

TEST(Incremental, SupportCountsHideDuplicateDerivations) {
  Catalog cat = abc_catalog();
  auto r = parse_rules("R(x) <- B(x,y).", cat)[0];
  RuleMaintainer m(r, plan_rule(r, cat));
  std::vector<Tuple> b{{1, 1}, {1, 2}};
  m.init({tuple_set_view(b, 2)});
  std::vector<TupleChanges> ch(1);
  ch[0].removed.push_back({1, 2});
  EXPECT_TRUE(m.update({tuple_set_view({{1, 1}}, 2)}, ch).empty());
  ch[0].removed = {{1, 1}};
  EXPECT_EQ(m.update({tuple_set_view({}, 2)}, ch).removed.size(), 1u);
}

TEST(Incremental, FunctionalHeadConflict) {
  auto s = std::make_shared<Schema>();
  s->add("F", {Type::Int}, {Type::Int});
  Catalog cat(s);
  cat.add_param("B", 2, {Type::Int, Type::Int});
  auto r = parse_rules("^F[x] = y <- B(x,y).", cat)[0];
  RuleMaintainer m(r, plan_rule(r, cat));
  EXPECT_FALSE(m.init({tuple_set_view({{1, 2}}, 2)}).fd_error);
  std::vector<TupleChanges> ch(1);
  ch[0].added.push_back({1, 3});
  EXPECT_TRUE(m.update({tuple_set_view({{1, 2}, {1, 3}}, 2)}, ch).fd_error);
}

namespace {

void mutate(std::mt19937& rng, std::vector<Tuple>& rel, std::size_t arity, TupleChanges& ch) {
  const int n = static_cast<int>(rng() % 3);
  for (int i = 0; i < n; ++i) {
    if (!rel.empty() && rng() % 2) {
      std::size_t k = rng() % rel.size();
      ch.removed.push_back(rel[k]);
      rel.erase(rel.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      Tuple t;
      for (std::size_t j = 0; j < arity; ++j) t.push_back(Value(static_cast<std::int64_t>(rng() % 5)));
      if (std::find(rel.begin(), rel.end(), t) != rel.end()) continue;
      ch.added.push_back(t);
      rel.push_back(t);
    }
  }
}

}  // namespace

TEST(Incremental, RandomUpdatesMatchRecomputation) {
  std::mt19937 rng(23);
  Catalog cat = abc_catalog();
  int checked = 0;
  for (int round = 0; round < 400; ++round) {
    std::string text = gen::random_rule(rng);
    SCOPED_TRACE(text);
    auto rule = parse_rules(text, cat)[0];
    RulePlan plan;
    try {
      plan = plan_rule(rule, cat);
    } catch (const RuleError&) {
      continue;
    }
    std::map<std::string, std::vector<Tuple>> data{
        {"A", gen::random_set(rng, 1, 4)}, {"B", gen::random_set(rng, 2, 10)}, {"C", gen::random_set(rng, 1, 3)}};
    const std::map<std::string, std::size_t> arity{{"A", 1}, {"B", 2}, {"C", 1}};
    auto views = [&] {
      std::vector<View> v;
      for (const auto& a : rule.atoms) v.push_back(tuple_set_view(data[a.pred], arity.at(a.pred)));
      return v;
    };
    RuleMaintainer m(rule, plan);
    m.init(views());
    std::set<Derivation> have;
    for (auto& [k, n] : m.support()) have.insert(k);
    for (int step = 0; step < 6; ++step) {
      std::map<std::string, TupleChanges> per;
      for (auto& [name, rel] : data) mutate(rng, rel, arity.at(name), per[name]);
      std::vector<TupleChanges> ch;
      for (const auto& a : rule.atoms) ch.push_back(per[a.pred]);
      auto vs = views();
      auto delta = m.update(vs, ch);
      for (const auto& d : delta.removed) ASSERT_EQ(have.erase(d), 1u);
      for (const auto& d : delta.added) ASSERT_TRUE(have.insert(d).second);

      std::vector<const View*> ptrs;
      for (const auto& v : vs) ptrs.push_back(&v);
      auto want = eval_rule_full(rule, plan, ptrs);
      ASSERT_EQ(have, want) << "step " << step;
    }
    ++checked;
  }
  EXPECT_GE(checked, 200);
}

TEST(Incremental, OutermostMatchesPairwiseContainment) {
  std::mt19937 rng(41);
  auto val = [&] { return Value(static_cast<std::int64_t>(rng() % 5)); };
  auto bound = [&] {
    switch (rng() % 4) {
      case 0: return Bound::neg_inf();
      case 1: return Bound::pos_inf();
      case 2: return Bound::below({val()});
      default: return Bound::above({val()});
    }
  };
  for (int round = 0; round < 300; ++round) {
    std::set<Region, RegionLess> rs;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      Region r;
      for (std::size_t k = rng() % 3; k > 0; --k) r.prefix.push_back(val());
      r.lo = bound();
      r.hi = bound();
      rs.insert(r);
    }
    std::set<Region, RegionLess> want;
    for (const auto& r : rs) {
      bool nested = false;
      for (const auto& o : rs) nested = nested || (!(o == r) && region_within(r, o));
      if (!nested) want.insert(r);
    }
    const auto got = outermost(rs);
    EXPECT_EQ((std::set<Region, RegionLess>(got.begin(), got.end())), want) << round;
    EXPECT_EQ(got.size(), want.size());
  }
}
