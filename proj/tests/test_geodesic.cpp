#include "geocorr/geodesic.hpp"
#include "geocorr/synth.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace geocorr;

TEST_CASE("strip distances follow the zig-zag edges") {
  // Vertices alternate between y=0 and y=1 at x steps of 0.5, so consecutive
  // vertices are sqrt(0.5^2 + 1) apart and same-side neighbors are 1 apart.
  auto m = make_strip(4);  // 6 vertices
  EdgeGraph g(m);
  auto d = geodesic_distances(g, 0);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == Catch::Approx(std::sqrt(1.25)));
  CHECK(d[2] == Catch::Approx(1.0));  // direct strip edge 0-2
  CHECK(d[4] == Catch::Approx(2.0));  // 0-2-4 along the bottom
}

TEST_CASE("disconnected components are unreachable") {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                Vec3(5, 5, 5), Vec3(6, 5, 5), Vec3(5, 6, 5)};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  finalize_mesh(m);
  EdgeGraph g(m);
  auto d = geodesic_distances(g, 0);
  CHECK(std::isinf(d[3]));
  CHECK(std::isinf(d[4]));
  CHECK(d[1] == Catch::Approx(1.0));
}

TEST_CASE("source out of range throws") {
  auto m = make_tetra();
  EdgeGraph g(m);
  CHECK_THROWS_AS(geodesic_distances(g, -1), Error);
  CHECK_THROWS_AS(geodesic_distances(g, 4), Error);
}

TEST_CASE("matches the all-pairs oracle exactly on random meshes") {
  for (int trial = 0; trial < 6; ++trial) {
    auto rng = make_rng(101, "geodesic_oracle", static_cast<std::uint64_t>(trial));
    auto m = make_random_grid_mesh(4, 5, rng);
    auto fw = oracle::floyd_warshall(m);
    EdgeGraph g(m);
    for (int s = 0; s < m.vertex_count(); ++s) {
      auto d = geodesic_distances(g, s);
      for (int j = 0; j < m.vertex_count(); ++j) {
        INFO("trial " << trial << " source " << s << " target " << j);
        CHECK(d[static_cast<size_t>(j)] == fw.dist(s, j));
      }
    }
  }
}

TEST_CASE("cache returns identical rows to direct calls") {
  auto rng = make_rng(5, "geodesic_cache");
  auto m = make_random_grid_mesh(3, 4, rng);
  GeodesicCache cache(m);
  auto direct = geodesic_distances(cache.graph(), 2);
  const auto& row1 = cache.from(2);
  const auto& row2 = cache.from(2);
  CHECK(&row1 == &row2);  // second call hits the cache
  for (size_t i = 0; i < direct.size(); ++i) CHECK(row1[i] == direct[i]);
}
