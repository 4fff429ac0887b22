#include <random>

#include <catch2/catch_amalgamated.hpp>

#include "countgraph/oracle.hpp"
#include "countgraph/synth.hpp"

using namespace countgraph;

namespace {

Scene worked_scene() {
  Scene scene;
  scene.boxes = {Box{0.0, 0.0, 0.2, 0.2}, Box{0.0, 0.0, 0.2, 0.2},
                 Box{0.4, 0.4, 0.6, 0.6}, Box{0.7, 0.7, 0.9, 0.9}};
  scene.attention.resize(4);
  scene.attention << 1.0, 1.0, 1.0, 0.0;
  return scene;
}

}  // namespace

TEST_CASE("exact count groups duplicates and ignores distractors") {
  CHECK(exact_count(worked_scene()) == 2);
}

TEST_CASE("exact count of an all-zero attention scene is 0") {
  Scene scene = worked_scene();
  scene.attention.setZero();
  CHECK(exact_count(scene) == 0);
}

TEST_CASE("three copies of one box count once") {
  Scene scene;
  scene.boxes = {Box{0.1, 0.1, 0.3, 0.3}, Box{0.1, 0.1, 0.3, 0.3}, Box{0.1, 0.1, 0.3, 0.3}};
  scene.attention = Eigen::VectorXd::Ones(3);
  CHECK(exact_count(scene) == 1);
}

TEST_CASE("non-ideal scenes are rejected") {
  Scene fractional = worked_scene();
  fractional.attention[0] = 0.5;
  CHECK_THROWS_AS(exact_count(fractional), std::invalid_argument);

  Scene partial = worked_scene();
  partial.boxes[1] = Box{0.1, 0.0, 0.3, 0.2};  // overlaps box 0 partially
  CHECK_THROWS_AS(exact_count(partial), std::invalid_argument);
}

TEST_CASE("exact count is permutation invariant and duplicate insensitive") {
  Scene scene = worked_scene();
  std::reverse(scene.boxes.begin(), scene.boxes.end());
  scene.attention.reverseInPlace();
  CHECK(exact_count(scene) == 2);

  scene.boxes.push_back(scene.boxes[1]);  // copy of a relevant proposal
  Eigen::VectorXd extended(5);
  extended << scene.attention, 1.0;
  scene.attention = extended;
  CHECK(exact_count(scene) == 2);
}

TEST_CASE("a class with any relevant member counts once") {
  Scene scene;
  scene.boxes = {Box{0.1, 0.1, 0.3, 0.3}, Box{0.1, 0.1, 0.3, 0.3}, Box{0.6, 0.6, 0.8, 0.8}};
  scene.attention.resize(3);
  scene.attention << 1.0, 0.0, 0.0;  // mixed class: one relevant, one distractor
  CHECK(exact_count(scene) == 1);

  const ForwardTrace trace = forward(CountParams::identity(), scene);
  CHECK(trace.count == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("identity forward reproduces the oracle on random ideal scenes") {
  std::mt19937_64 rng(211);
  const CountParams params = CountParams::identity();
  for (int trial = 0; trial < 1000; ++trial) {
    SynthConfig cfg;
    cfg.n = 1 + static_cast<int>(uniform_below(rng, 10));
    cfg.max_objects = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(cfg.n) + 1));
    cfg.side = 0.05 + 0.19 * u01(rng);
    cfg.dup_prob = u01(rng);
    cfg.jitter = 0.0;
    cfg.attention_noise = 0.0;
    const Scene scene = generate_scene(cfg, rng);
    REQUIRE(is_ideal(scene));
    const int truth = exact_count(scene);
    CHECK(truth == *scene.true_count);
    const double estimate = forward(params, scene).count;
    REQUIRE(estimate == Catch::Approx(static_cast<double>(truth)).margin(1e-9));
  }
}
