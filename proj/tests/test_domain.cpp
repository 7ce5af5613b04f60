#include <gtest/gtest.h>

#include "trepair/domain.hpp"

using namespace trepair;

TEST(Domain, Ordering) {
  EXPECT_LT(cmp_domain(DomainPoint::at(0, {1, 2}), DomainPoint::at(0, {1, 3})), 0);
  EXPECT_LT(cmp_domain(DomainPoint::neg_inf(), DomainPoint::at(0, {})), 0);
  EXPECT_LT(cmp_domain(DomainPoint::at(3, {}), DomainPoint::pos_inf()), 0);
  EXPECT_LT(cmp_domain(DomainPoint::at(0, {999}), DomainPoint::at(1, {-5})), 0);
  EXPECT_EQ(cmp_domain(DomainPoint::pos_inf(), DomainPoint::pos_inf()), 0);
}

TEST(Domain, RootAndDepthOneIntervals) {
  auto d0 = DomainDecomposition::build({}, 0);
  auto root = d0.subdomain_interval("");
  EXPECT_EQ(root.lo.kind, DomainPoint::Kind::NegInf);
  EXPECT_EQ(root.hi.kind, DomainPoint::Kind::PosInf);

  DomainPoint s = DomainPoint::at(0, {50});
  DomainPoint s1 = DomainPoint::at(0, {75});
  DomainDecomposition d(2, {DomainPoint::neg_inf(), s, DomainPoint::at(0, {25}), s1});
  auto left = d.subdomain_interval("0");
  EXPECT_EQ(left.lo.kind, DomainPoint::Kind::NegInf);
  EXPECT_EQ(left.hi, s);
  auto r0 = d.subdomain_interval("10");
  EXPECT_EQ(r0.lo, s);
  EXPECT_EQ(r0.hi, s1);
  EXPECT_THROW(d.subdomain_interval("2"), std::invalid_argument);
  EXPECT_THROW(d.subdomain_interval("000"), std::invalid_argument);
}

TEST(Domain, BuildUniformSamplesSplitsNearMedian) {
  std::vector<DomainPoint> samples;
  for (int i = 1; i <= 100; ++i) samples.push_back(DomainPoint::at(0, {i}));
  auto d = DomainDecomposition::build(samples, 1);
  const auto& s = d.split("");
  EXPECT_EQ(s.pred, 0);
  EXPECT_NEAR(static_cast<double>(s.key[0].as_int()), 50.0, 5.0);
}

TEST(Domain, IdenticalSamplesGiveEmptySubdomains) {
  std::vector<DomainPoint> samples(10, DomainPoint::at(1, {7}));
  auto d = DomainDecomposition::build(samples, 2);
  int empty = 0;
  for (const char* l : {"00", "01", "10", "11"}) empty += d.subdomain_interval(l).empty() ? 1 : 0;
  EXPECT_GT(empty, 0);
  EXPECT_TRUE(d.subdomain_interval(d.locate({1, {7}}, 2)).contains(PointKey{1, {7}}));
}

TEST(Domain, JsonRoundTrip) {
  std::vector<DomainPoint> samples;
  for (int i = 0; i < 40; ++i) samples.push_back(DomainPoint::at(i % 3, {i, Value("k")}));
  auto d = DomainDecomposition::build(samples, 3);
  auto back = DomainDecomposition::from_json(nlohmann::json::parse(d.to_json().dump()));
  for (const char* l : {"", "0", "1", "01", "110"}) {
    EXPECT_EQ(back.subdomain_interval(l).lo, d.subdomain_interval(l).lo);
    EXPECT_EQ(back.subdomain_interval(l).hi, d.subdomain_interval(l).hi);
  }
}
