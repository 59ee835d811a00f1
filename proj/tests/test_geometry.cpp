#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cal/geometry.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <random>

using namespace cal;

TEST_CASE("grid spec validation") {
  CHECK_NOTHROW(GridSpec(2, 2, 1.0));
  CHECK_THROWS_AS(GridSpec(1, 5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(GridSpec(5, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(GridSpec(5, 5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(GridSpec(5, 5, -2.0), std::invalid_argument);
  const GridSpec g(32, 24, 4.0);
  CHECK(g.input_extent() == Vec2(128, 96));
  CHECK(g.cells() == 768);
}

TEST_CASE("to_input_coords examples") {
  CHECK(to_input_coords(Vec2(0, 0), GridSpec(8, 8, 4)) == Vec2(0, 0));
  CHECK(to_input_coords(Vec2(3.25, 3.5), GridSpec(8, 8, 4)) == Vec2(13.0, 14.0));
  CHECK(to_input_coords(Vec2(1, 1), GridSpec(8, 8, 1)) == Vec2(1, 1));
}

TEST_CASE("coordinate conversions are inverse") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e3, 1e3), s(0.1, 16.0);
  for (int t = 0; t < 1000; ++t) {
    const GridSpec g(10, 10, s(rng));
    const Vec2 p(u(rng), u(rng));
    const Vec2 back = to_heatmap_coords(to_input_coords(p, g), g);
    CHECK((back - p).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, p.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("clip_disc examples") {
  const GridSpec g(11, 11, 1);
  CHECK(clip_disc({5, 5}, 1, g) == std::vector<Cell>{{5, 4}, {4, 5}, {5, 5}, {6, 5}, {5, 6}});
  CHECK(clip_disc({0, 0}, 1, g) == std::vector<Cell>{{0, 0}, {1, 0}, {0, 1}});
  CHECK(clip_disc({5.5, 5}, 1, g) == std::vector<Cell>{{5, 5}, {6, 5}});
  CHECK(clip_disc({100, 100}, 2, g).empty());
  CHECK(clip_disc({std::nan(""), 1}, 2, g).empty());
  CHECK_THROWS_AS(clip_disc({5, 5}, 0.0, g), std::invalid_argument);
}

TEST_CASE("clip_disc boundary ties are included") {
  const GridSpec g(11, 11, 1);
  // (8, 5) and (5, 1) sit exactly 3 and 4 away.
  const auto a = clip_disc({5, 5}, 3, g);
  CHECK(std::find(a.begin(), a.end(), Cell{8, 5}) != a.end());
  const auto b = clip_disc({5, 5}, 4, g);
  CHECK(std::find(b.begin(), b.end(), Cell{5, 1}) != b.end());
  // 3-4-5 triangle.
  const auto c = clip_disc({0, 0}, 5, g);
  CHECK(std::find(c.begin(), c.end(), Cell{3, 4}) != c.end());
}

TEST_CASE("clip_disc matches brute force and is row-major") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> cx(-6, 26), cy(-6, 20), rr(0.05, 7);
  for (int t = 0; t < 1000; ++t) {
    const GridSpec g(20, 14, 2);
    Vec2 c(cx(rng), cy(rng));
    // Every fourth trial uses a lattice center so boundary ties occur.
    if (t % 4 == 0) c = c.array().round();
    const double r = t % 8 == 0 ? std::round(rr(rng)) + 1 : rr(rng);
    const auto got = clip_disc(c, r, g);
    REQUIRE(got == oracle::brute_disc(c, r, g));
    CHECK(std::is_sorted(got.begin(), got.end()));
  }
}

TEST_CASE("clip_disc is monotone in the radius") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> cx(-3, 18), r(0.1, 6);
  const GridSpec g(16, 12, 1);
  for (int t = 0; t < 500; ++t) {
    const Vec2 c(cx(rng), cx(rng));
    double r1 = r(rng), r2 = r(rng);
    if (r1 > r2) std::swap(r1, r2);
    const auto small = clip_disc(c, r1, g), big = clip_disc(c, r2, g);
    CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));
  }
}

TEST_CASE("nearest cell and containment") {
  const GridSpec g(4, 3, 1);
  CHECK(GridSpec::nearest_cell({1.49, 1.5}) == Cell{1, 2});
  CHECK(GridSpec::nearest_cell({-0.5, -0.51}) == Cell{0, -1});
  CHECK(g.contains(Vec2(3.4, 2.4)));
  CHECK_FALSE(g.contains(Vec2(3.5, 0)));
  CHECK_FALSE(g.contains(Vec2(-0.6, 0)));
  CHECK_FALSE(g.contains(Vec2(1e300, 0)));
  CHECK_FALSE(g.contains(Vec2(std::nan(""), 0)));
}

TEST_CASE("joint and batch invariants") {
  JointTarget j;
  CHECK_FALSE(j.labeled());
  j.visibility = Visibility::labeled_invisible;
  CHECK(j.usable());
  j.in_bounds = false;
  CHECK(j.labeled());
  CHECK_FALSE(j.usable());

  Batch b;
  b.grid = GridSpec(8, 8, 1);
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  Sample s;
  s.source_id = "a";
  for (int k = 0; k < 3; ++k) s.joints.push_back({k, Vec2(1, 1), Visibility::labeled_visible});
  b.samples.push_back(s);
  CHECK_NOTHROW(b.validate());
  CHECK(b.joint_count() == 3);
  s.joints.pop_back();
  b.samples.push_back(s);
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  b.samples.pop_back();
  b.samples[0].joints[1].joint_index = 2;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}

TEST_CASE("heatmap containers are templated on the scalar") {
  const GridSpec g(5, 4, 2);
  auto hf = BasicHeatmap<float>::zeros(g);
  CHECK(hf.shape_matches());
  hf(Cell{4, 3}) = 2.5f;
  CHECK(hf.values(3, 4) == 2.5f);
  const auto of = BasicOffsetField<float>::zeros(g);
  CHECK(of.shape_matches());
  CHECK(to_input_coords(Eigen::Vector2f(1.5f, 2.0f), g) == Vec2(3.0, 4.0));
}
