#include <doctest.h>

#include <random>
#include <utility>

#include "gradient_checks.hpp"

using namespace affdet;

// (classes, datasets): single-class BCE and multi-class focal, 32 outputs each.
constexpr std::pair<int, int> kShapes[] = {{1, 2}, {2, 1}};

TEST_SUITE("gradients") {

TEST_CASE("micro-model stays within the parameter budget") {
  std::mt19937_64 rng(1);
  for (auto [classes, datasets] : kShapes) {
    const auto m = checks::micro_case(rng, classes, datasets);
    const std::size_t params = m.out.obj.size() + m.out.cls.size() + m.out.box.size() + m.out.aff.size();
    CHECK(params <= 32);
  }
}

TEST_CASE("each loss component matches central differences") {
  const LossWeights one_hot[] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  const char* names[] = {"obj", "cls", "loc", "aff"};
  std::mt19937_64 rng(2);
  for (auto [classes, datasets] : kShapes) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto m = checks::micro_case(rng, classes, datasets, 1 + trial % 3);
      for (int k = 0; k < 4; ++k) {
        const auto gc = checks::check_head_gradients(m, one_hot[k]);
        INFO("component " << names[k] << " classes " << classes << " worst " << gc.worst);
        REQUIRE(gc.ok());
      }
    }
  }
}

TEST_CASE("total loss matches central differences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = checks::micro_case(rng, kShapes[trial % 2].first, kShapes[trial % 2].second, trial % 4);
    const auto gc = checks::check_head_gradients(m, LossWeights{});
    INFO("worst " << gc.worst);
    REQUIRE(gc.ok());
  }
}

TEST_CASE("backpropagation through the detector matches central differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto gc = checks::check_network_gradients(seed);
    INFO("seed " << seed << " worst " << gc.worst);
    CHECK(gc.ok());
  }
}

}
