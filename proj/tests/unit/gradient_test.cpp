#include <gtest/gtest.h>

#include "gradcheck.hpp"

namespace natmotion::testing {
namespace {

class PrimitiveGradient : public ::testing::TestWithParam<GradCase> {};
class LayerGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const GradCheckReport r = GetParam().run();
  EXPECT_LT(r.rel_error, 1e-4) << "worst input " << r.worst_input;
  EXPECT_GT(r.coords, 0u);
}

TEST_P(LayerGradient, MatchesCentralDifferences) {
  const GradCheckReport r = GetParam().run();
  EXPECT_LT(r.rel_error, 1e-4) << "worst input " << r.worst_input;
  EXPECT_GT(r.coords, 0u);
}

std::string case_name(const ::testing::TestParamInfo<GradCase>& info) { return info.param.name; }

INSTANTIATE_TEST_SUITE_P(Ops, PrimitiveGradient, ::testing::ValuesIn(primitive_cases()), case_name);
INSTANTIATE_TEST_SUITE_P(Model, LayerGradient, ::testing::ValuesIn(layer_cases()), case_name);

}  // namespace
}  // namespace natmotion::testing
