#include <catch2/catch_amalgamated.hpp>

#include "isac/scene.hpp"

using namespace isac;

namespace {

BaseStation make_bs(double x, double y) {
  BaseStation bs;
  bs.position = {x, y};
  bs.tx_array = {8, 0.027, 0.0};
  bs.rx_array = {8, 0.027, 0.0};
  return bs;
}

}  // namespace

TEST_CASE("minimal scene: one BS, nothing else", "[scene]") {
  SceneConfig cfg;
  cfg.bs.push_back(make_bs(0.0, 0.0));
  Scene s = build_scene(cfg, 0);
  REQUIRE(s.bs_list.size() == 1);
  REQUIRE(s.ue_list.empty());
  REQUIRE(s.sesp_list.empty());
  REQUIRE(s.target_list.empty());
}

TEST_CASE("out-of-bounds UE is rejected with the entity named", "[scene]") {
  SceneConfig cfg;
  cfg.bs.push_back(make_bs(0.0, 0.0));
  cfg.bounds = {Vec2{-500.0, -500.0}, Vec2{500.0, 500.0}};  // 1 km^2
  cfg.ue.push_back({0, Vec2{1e9, 0.0}});
  REQUIRE_THROWS_MATCHES(build_scene(cfg, 0), validation_error,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("ue[0]")));
}

TEST_CASE("zero base stations is a validation error", "[scene]") {
  SceneConfig cfg;
  REQUIRE_THROWS_AS(build_scene(cfg, 0), validation_error);
}

TEST_CASE("seeded random scene builds identically twice", "[scene]") {
  SceneConfig cfg;
  cfg.bs.push_back(make_bs(0.0, 0.0));
  cfg.random.n_sesp = 25;
  cfg.random.n_ue = 10;
  cfg.random.n_targets = 5;

  Scene a = build_scene(cfg, 42);
  Scene b = build_scene(cfg, 42);
  REQUIRE(a.sesp_list.size() == 25);
  REQUIRE(a.ue_list.size() == 10);
  REQUIRE(a.target_list.size() == 5);
  for (std::size_t i = 0; i < a.sesp_list.size(); ++i) {
    REQUIRE(a.sesp_list[i].position == b.sesp_list[i].position);
    REQUIRE(a.sesp_list[i].reflectivity == b.sesp_list[i].reflectivity);
  }
  for (std::size_t i = 0; i < a.target_list.size(); ++i) {
    REQUIRE(a.target_list[i].position == b.target_list[i].position);
    REQUIRE(a.target_list[i].velocity == b.target_list[i].velocity);
    REQUIRE(a.target_list[i].rcs == b.target_list[i].rcs);
  }

  Scene c = build_scene(cfg, 43);
  REQUIRE(a.sesp_list[0].position != c.sesp_list[0].position);
}

TEST_CASE("propagate advances targets by velocity * dt", "[scene]") {
  SceneConfig cfg;
  cfg.bs.push_back(make_bs(0.0, 0.0));
  DynamicTarget t;
  t.position = {0.0, 0.0};
  t.velocity = {1.0, 0.0};
  cfg.targets.push_back(t);
  Scene s = build_scene(cfg, 0);

  Scene s1 = propagate(s, 1.0);
  REQUIRE(s1.target_list[0].position.x() == 1.0);
  REQUIRE(s1.target_list[0].position.y() == 0.0);

  Scene s0 = propagate(s, 0.0);
  REQUIRE(s0.target_list[0].position == s.target_list[0].position);

  REQUIRE_THROWS_AS(propagate(s, -0.5), std::invalid_argument);
}

TEST_CASE("propagate composes exactly for constant velocity", "[scene]") {
  SceneConfig cfg;
  cfg.bs.push_back(make_bs(0.0, 0.0));
  DynamicTarget t;
  t.position = {3.0, -2.0};
  t.velocity = {1.5, 0.25};
  cfg.targets.push_back(t);
  Scene s = build_scene(cfg, 0);

  Scene two_halves = propagate(propagate(s, 0.5), 0.5);
  Scene one_step = propagate(s, 1.0);
  REQUIRE(two_halves.target_list[0].position == one_step.target_list[0].position);

  // random split, tolerance covers the floating-point rounding of a+b
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    double a = rng.uniform(0.0, 2.0), b = rng.uniform(0.0, 2.0);
    Scene lhs = propagate(s, a + b);
    Scene rhs = propagate(propagate(s, a), b);
    REQUIRE((lhs.target_list[0].position - rhs.target_list[0].position).norm() < 1e-12);
  }

  // static entities untouched
  Scene moved = propagate(s, 5.0);
  REQUIRE(moved.bs_list[0].position == s.bs_list[0].position);
}
