#include <gtest/gtest.h>

#include "abmil/verify.hpp"

// Built against a copy of the library whose tanh backward is scaled by 1.01.
// The checks must notice.

namespace abmil::verify {
namespace {

TEST(FaultInjection, FiniteDifferencesCatchWrongBackward) {
  const CheckResult r = check_finite_differences(1);
  EXPECT_FALSE(r.passed) << format(r);
  EXPECT_GT(r.measured, 1e-4);
}

TEST(FaultInjection, SuiteFails) {
  bool all = true;
  for (const auto& r : run_suite(Scale::Smoke, 1)) all = all && r.passed;
  EXPECT_FALSE(all);
}

}  // namespace
}  // namespace abmil::verify
