#include <gtest/gtest.h>

#include "trepair/signal.hpp"

using namespace trepair;

TEST(Signal, PublishCreatesVersion) {
  DeltaSignal sig(SignalKind::Delta, "d");
  EXPECT_EQ(sig.latest(), 0u);
  auto r = sig.publish({{PointKey{0, {5}}, Patch::put({10})}}, {});
  EXPECT_TRUE(r.changed);
  EXPECT_EQ(r.version, 1u);
  EXPECT_EQ(*sig.at(1).find(PointKey{0, {5}}), Patch::put({10}));
  EXPECT_TRUE(sig.at(0).empty());
  auto again = sig.publish({{PointKey{0, {5}}, Patch::put({10})}}, {});
  EXPECT_FALSE(again.changed);
  EXPECT_EQ(again.version, 1u);
}

TEST(Signal, SensitivitySignalIsMonotone) {
  SensSignal sig(SignalKind::Sens, "s");
  auto rec = SensRecord{0, Bound::below({1}), Bound::above({4})};
  sig.publish({{rec, Unit{}}}, {});
  EXPECT_THROW(sig.publish({}, {rec}), ContractError);
  EXPECT_EQ(sig.snapshot().size(), 1u);
}

TEST(Signal, ChangesIdentityAndCancellation) {
  DeltaSignal sig(SignalKind::Delta, "d");
  PointKey k{0, {1}};
  auto v1 = sig.publish({{k, Patch::put({1})}}, {}).version;
  EXPECT_TRUE(sig.changes(v1, v1).empty());
  auto v2 = sig.publish({{PointKey{0, {2}}, Patch::put({2})}}, {}).version;
  auto v3 = sig.publish({}, {PointKey{0, {2}}}).version;
  EXPECT_TRUE(sig.changes(v1, v3).empty());
  EXPECT_EQ(sig.changes(v1, v2).size(), 1u);
  EXPECT_THROW(sig.changes(0, 99), std::out_of_range);
}

TEST(Signal, RetractionRecordRemovalIsAChange) {
  DeltaSignal sig(SignalKind::Delta, "d");
  PointKey k{0, {100}};
  auto v1 = sig.publish({{k, Patch::retraction()}}, {}).version;
  auto v2 = sig.publish({}, {k}).version;
  auto rc = sig.record_changes(v1, v2);
  ASSERT_EQ(rc.size(), 1u);
  EXPECT_FALSE(rc[0].inserted);
  EXPECT_FALSE(rc[0].value.upsert);
}

TEST(Signal, ValueReplacementIsRemoveAndInsert) {
  DeltaSignal sig(SignalKind::Delta, "d");
  PointKey k{0, {1}};
  sig.publish({{k, Patch::put({1})}}, {});
  sig.publish({{k, Patch::put({2})}}, {});
  auto rc = sig.record_changes(1, 2);
  ASSERT_EQ(rc.size(), 2u);
  EXPECT_FALSE(rc[0].inserted);
  EXPECT_TRUE(rc[1].inserted);
  EXPECT_EQ(rc[1].value.value, Tuple{2});
}

TEST(Signal, Coalesce) {
  auto iv = [](int a, int b) { return SensRecord{0, Bound::below({a}), Bound::above({b})}; };
  auto out = sens_coalesce({iv(102, 110), iv(100, 104)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], iv(100, 110));
  auto disjoint = sens_coalesce({iv(5, 6), iv(1, 2)});
  ASSERT_EQ(disjoint.size(), 2u);
  EXPECT_EQ(disjoint[0], iv(1, 2));
  EXPECT_EQ(disjoint[1], iv(5, 6));
}

TEST(Signal, StabbingFindsContainingIntervals) {
  SensSet s;
  auto iv = [](int a, int b) { return SensRecord{2, Bound::below({a}), Bound::above({b})}; };
  for (auto r : {iv(102, 104), iv(106, 108), iv(1, 1000)}) s = s.insert(r, Unit{});
  s = s.insert(SensRecord::whole(1), Unit{});
  EXPECT_EQ(stab_all(s, 2, {103}).size(), 2u);
  EXPECT_EQ(stab_all(s, 2, {105}).size(), 1u);
  EXPECT_EQ(stab_all(s, 2, {2000}).size(), 0u);
  EXPECT_TRUE(stab_exists(s, 1, {Value("anything")}));
  EXPECT_FALSE(stab_exists(s, 0, {1}));
}
