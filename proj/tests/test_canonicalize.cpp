#include "geocorr/canonicalize.hpp"
#include "geocorr/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace geocorr;

namespace {

CameraModel view_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 60.0;
  cam.cx = cam.cy = 31.5;
  cam.width = cam.height = 64;
  cam.rotation = Mat3::Identity();
  cam.translation = Vec3(0, 0, 4);
  return cam;
}

// asymmetric test mesh centered near the origin
TriangleMesh asym_mesh() {
  auto m = make_tetra();
  for (auto& v : m.vertices) v -= Vec3(0.4, 0.4, 0.4);
  return m;
}

double max_vertex_delta(const TriangleMesh& a, const TriangleMesh& b) {
  double worst = 0.0;
  for (int i = 0; i < a.vertex_count(); ++i)
    worst = std::max(worst, (a.vertices[static_cast<size_t>(i)] -
                             b.vertices[static_cast<size_t>(i)])
                                .norm());
  return worst;
}

}  // namespace

TEST_CASE("best correction enumerates the circular residuals") {
  CHECK(best_correction(10.0, 10.0) == 0);
  CHECK(best_correction(100.0, 10.0) == 270);  // 100 + 270 = 370 = 10 mod 360
  CHECK(best_correction(50.0, 5.0) == 0);      // 45 vs 45 tie -> smaller
  CHECK(best_correction(350.0, 80.0) == 90);   // wraps the seam
  CHECK(best_correction(181.0, 0.0) == 180);
  CHECK_THROWS_AS(best_correction(std::nan(""), 0.0), Error);
}

TEST_CASE("canonical mesh with a perfect estimator stays put") {
  auto mesh = asym_mesh();
  const auto original = mesh;
  const double diag = bounding_diag(mesh);
  auto report = canonicalize_yaw(mesh, view_camera(), make_oracle_estimator(0.0));
  CHECK(report.correction_deg == 0);
  CHECK(report.failures == 0);
  for (int v : report.votes) CHECK(v == 0);
  CHECK(max_vertex_delta(mesh, original) <= 1e-9 * diag);
}

TEST_CASE("a quarter-turned mesh is rotated back") {
  auto original = asym_mesh();
  const double diag = bounding_diag(original);

  auto rotated = original;
  rotate_mesh_yaw(rotated, rotated.aabb_center(), 90.0);
  // the estimator sees every view 90 degrees off canonical
  auto mesh = rotated;
  auto report = canonicalize_yaw(mesh, view_camera(), make_oracle_estimator(90.0));
  CHECK(report.correction_deg == 270);
  CHECK(max_vertex_delta(mesh, original) <= 1e-6 * diag);
}

TEST_CASE("involution over every planted quarter turn") {
  auto original = asym_mesh();
  const double diag = bounding_diag(original);
  for (int planted : {0, 90, 180, 270}) {
    auto mesh = original;
    rotate_mesh_yaw(mesh, mesh.aabb_center(), planted);
    auto report =
        canonicalize_yaw(mesh, view_camera(), make_oracle_estimator(planted));
    INFO("planted " << planted);
    CHECK((planted + report.correction_deg) % 360 == 0);
    CHECK(max_vertex_delta(mesh, original) <= 1e-6 * diag);
  }
}

TEST_CASE("vote survives three corrupted views") {
  auto original = asym_mesh();
  auto mesh = original;
  rotate_mesh_yaw(mesh, mesh.aabb_center(), 180.0);
  auto est = make_oracle_estimator(180.0, 0.0, 99, {1, 4, 6});
  auto report = canonicalize_yaw(mesh, view_camera(), est);
  CHECK(report.correction_deg == 180);
  // corrupted views voted for something else
  int wrong = 0;
  for (int v : report.votes) wrong += (v != 180) ? 1 : 0;
  CHECK(wrong == 3);
}

TEST_CASE("moderate estimator noise does not flip the vote") {
  auto original = asym_mesh();
  auto mesh = original;
  rotate_mesh_yaw(mesh, mesh.aabb_center(), 270.0);
  auto report = canonicalize_yaw(mesh, view_camera(),
                                 make_oracle_estimator(270.0, 10.0, 7));
  CHECK(report.correction_deg == 90);
}

TEST_CASE("estimator failures: four tolerated, five fatal") {
  auto original = asym_mesh();
  {
    auto mesh = original;
    rotate_mesh_yaw(mesh, mesh.aabb_center(), 90.0);
    auto est = with_failures(make_oracle_estimator(90.0), {0, 2, 5, 7});
    auto report = canonicalize_yaw(mesh, view_camera(), est);
    CHECK(report.failures == 4);
    CHECK(report.correction_deg == 270);
    CHECK(report.votes[0] == -1);
    CHECK(std::isnan(report.estimates[0]));
  }
  {
    auto mesh = original;
    auto est = with_failures(make_oracle_estimator(0.0), {0, 1, 2, 3, 4});
    CHECK_THROWS_AS(canonicalize_yaw(mesh, view_camera(), est), Error);
  }
}
