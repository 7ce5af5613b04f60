#include <gtest/gtest.h>

#include "properties.hpp"

namespace {

constexpr int kCases = 250;

void expect_clean(const props::SuiteResult& r) {
  EXPECT_EQ(r.cases, kCases) << r.name;
  EXPECT_EQ(r.failures, 0) << r.name << ": " << r.first_failure;
}

}  // namespace

TEST(Properties, SignalVersionComposition) { expect_clean(props::signal_composition(101, kCases)); }
TEST(Properties, MergePartitionAndPrecedence) { expect_clean(props::merge_partition(102, kCases)); }
TEST(Properties, SensitivityMonotonicity) { expect_clean(props::sens_monotonicity(103, kCases)); }
TEST(Properties, CorrIdempotence) { expect_clean(props::corr_idempotence(104, kCases)); }
TEST(Properties, DomainPartition) { expect_clean(props::domain_partition(105, kCases)); }
