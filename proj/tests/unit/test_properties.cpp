#include <gtest/gtest.h>

#include "support/properties.hpp"

namespace {

constexpr std::size_t kCases = 10'000;

}  // namespace

TEST(Properties, MonotoneFilter) {
  auto out = testsupport::monotone_filter_property(kCases, 101);
  EXPECT_EQ(out.cases, kCases);
  EXPECT_EQ(out.failures, 0u) << out.first_failure;
}

TEST(Properties, NmsIdempotence) {
  auto out = testsupport::nms_idempotence_property(kCases, 102);
  EXPECT_EQ(out.cases, kCases);
  EXPECT_EQ(out.failures, 0u) << out.first_failure;
}

TEST(Properties, IouSymmetry) {
  auto out = testsupport::iou_symmetry_property(kCases, 103);
  EXPECT_EQ(out.cases, kCases);
  EXPECT_EQ(out.failures, 0u) << out.first_failure;
}
