#include "geocorr/render.hpp"
#include "geocorr/synth.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace geocorr;

namespace {

CameraModel test_camera(int size = 64, double focal = 60.0) {
  CameraModel cam;
  cam.fx = cam.fy = focal;
  cam.cx = cam.cy = (size - 1) / 2.0;
  cam.width = cam.height = size;
  cam.rotation = Mat3::Identity();
  cam.translation = Vec3(0, 0, 4);
  return cam;
}

// loss(theta) evaluated through a fresh render, for finite differencing
template <typename LossFn>
double loss_at(const TriangleMesh& mesh, const CameraModel& cam, Eigen::Vector4d theta,
               double kappa, LossFn loss) {
  const PoseParams pose = PoseParams::from_vector(theta);
  SoftRender r = render_soft_silhouette(mesh, cam, pose, kappa);
  return loss(r);
}

}  // namespace

TEST_CASE("projection matches the pinhole contract") {
  CameraModel cam;  // identity intrinsics, zero offsets
  PoseParams pose;
  auto p1 = project(cam, pose, Vec3(0, 0, 1));
  CHECK_FALSE(p1.behind);
  CHECK(p1.pixel.x() == 0.0);
  CHECK(p1.pixel.y() == 0.0);
  CHECK(p1.depth == 1.0);

  auto p2 = project(cam, pose, Vec3(1, 0, 2));
  CHECK(p2.pixel.x() == Catch::Approx(0.5));
  CHECK(p2.pixel.y() == 0.0);

  auto p3 = project(cam, pose, Vec3(0, 0, -1));
  CHECK(p3.behind);
}

TEST_CASE("projection scale and translation behave") {
  CameraModel cam = test_camera();
  PoseParams pose;
  pose.log_scale = std::log(2.0);
  auto p = project(cam, pose, Vec3(0.1, 0, 0));
  // doubled object: x' = 0.2, z = 4 -> offset 60*0.2/4 = 3 px from center
  CHECK(p.pixel.x() == Catch::Approx(cam.cx + 3.0));
}

TEST_CASE("projection jacobian matches finite differences") {
  CameraModel cam = test_camera();
  cam.rotation = yaw_matrix(30.0);  // non-trivial rotation
  const Vec3 point(0.3, -0.2, 0.1);
  PoseParams pose;
  pose.log_scale = 0.2;
  pose.translation = Vec3(0.05, -0.1, 0.2);

  auto jet = project_jet(cam, pose, point);
  REQUIRE_FALSE(jet.behind);
  const double h = 1e-6;
  Eigen::Vector4d theta = pose.as_vector();
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    auto pp = project(cam, PoseParams::from_vector(tp), point);
    auto pm = project(cam, PoseParams::from_vector(tm), point);
    const Vec2 fd = (pp.pixel - pm.pixel) / (2 * h);
    CHECK(jet.jac(0, k) == Catch::Approx(fd.x()).margin(1e-6));
    CHECK(jet.jac(1, k) == Catch::Approx(fd.y()).margin(1e-6));
  }
}

TEST_CASE("silhouette saturates inside and outside") {
  auto cube = make_cube();
  CameraModel cam = test_camera();
  PoseParams pose;
  pose.log_scale = std::log(2.0);  // near face spans ~±20 px: deep interior and exterior
  SoftRender r = render_soft_silhouette(cube, cam, pose, 1.0);
  const auto frame = r.frame_values();
  const int mid = cam.height / 2;
  CHECK(frame(mid, mid) == Catch::Approx(1.0).margin(1e-6));
  CHECK(frame(0, 0) == Catch::Approx(0.0).margin(1e-6));
  CHECK(frame.minCoeff() >= 0.0);
  CHECK(frame.maxCoeff() <= 1.0);
}

TEST_CASE("renderer errors when all vertices are behind the camera") {
  auto cube = make_cube();
  CameraModel cam = test_camera();
  cam.translation = Vec3(0, 0, -4);  // object behind
  PoseParams pose;
  CHECK_THROWS_AS(render_soft_silhouette(cube, cam, pose, 2.0), Error);
}

TEST_CASE("per-pixel silhouette gradient matches finite differences") {
  auto tetra = make_tetra();
  CameraModel cam = test_camera();
  PoseParams pose;
  pose.translation = Vec3(-0.4, -0.45, 0.0);  // center the tetra roughly
  SoftRender r = render_soft_silhouette(tetra, cam, pose, 2.0);

  const double h = 1e-4;
  const Eigen::Vector4d theta = pose.as_vector();
  int checked = 0;
  for (int row = 2; row < cam.height; row += 7)
    for (int col = 3; col < cam.width; col += 7) {
      const double g = r.grads[0](row - r.row0, col - r.col0);
      Eigen::Vector4d tp = theta, tm = theta;
      tp[0] += h;
      tm[0] -= h;
      SoftRender rp = render_soft_silhouette(tetra, cam, PoseParams::from_vector(tp), 2.0);
      SoftRender rm = render_soft_silhouette(tetra, cam, PoseParams::from_vector(tm), 2.0);
      const double vp = rp.values(row - rp.row0, col - rp.col0);
      const double vm = rm.values(row - rm.row0, col - rm.col0);
      const double fd = (vp - vm) / (2 * h);
      if (std::abs(fd) < 1e-7 && std::abs(g) < 1e-7) continue;  // flat region
      INFO("pixel (" << row << "," << col << ")");
      CHECK(oracle::rel_err(g, fd) < 1e-3);
      ++checked;
    }
  CHECK(checked > 3);  // the probe grid crosses the boundary band
}

TEST_CASE("chained loss gradients match finite differences") {
  auto cube = make_cube();
  CameraModel cam = test_camera();
  PoseParams pose;
  pose.log_scale = 0.1;
  pose.translation = Vec3(0.08, -0.06, 0.15);
  const double kappa = 2.0;

  // reference mask: the cube at identity pose
  MaskImage ref = rasterize_hard(cube, cam, PoseParams{});
  auto fields = distance_fields(ref, 4);
  const Eigen::MatrixXd ref_soft = [&] {
    Eigen::MatrixXd m(ref.height, ref.width);
    for (int r = 0; r < ref.height; ++r)
      for (int c = 0; c < ref.width; ++c) m(r, c) = ref.at(r, c);
    return m;
  }();

  SoftRender render = render_soft_silhouette(cube, cam, pose, kappa);

  SECTION("alignment loss") {
    auto loss = dt_loss(render.frame_values(), fields, 4.0);
    const Eigen::Vector4d g = chain_pose_grad(loss.grad, render);
    const double h = 1e-4;
    const Eigen::Vector4d theta = pose.as_vector();
    for (int k = 0; k < 4; ++k) {
      Eigen::Vector4d tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      auto eval = [&](const Eigen::Vector4d& th) {
        return loss_at(cube, cam, th, kappa, [&](const SoftRender& r) {
          return dt_loss(r.frame_values(), fields, 4.0).value;
        });
      };
      const double fd = (eval(tp) - eval(tm)) / (2 * h);
      INFO("param " << k);
      CHECK(oracle::rel_err(g[k], fd) < 1e-3);
    }
  }

  SECTION("overlap loss") {
    auto loss = soft_iou_loss(render.frame_values(), ref_soft);
    const Eigen::Vector4d g = chain_pose_grad(loss.grad, render);
    const double h = 1e-4;
    const Eigen::Vector4d theta = pose.as_vector();
    for (int k = 0; k < 4; ++k) {
      Eigen::Vector4d tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      auto eval = [&](const Eigen::Vector4d& th) {
        return loss_at(cube, cam, th, kappa, [&](const SoftRender& r) {
          return soft_iou_loss(r.frame_values(), ref_soft).value;
        });
      };
      const double fd = (eval(tp) - eval(tm)) / (2 * h);
      INFO("param " << k);
      CHECK(oracle::rel_err(g[k], fd) < 1e-3);
    }
  }
}

TEST_CASE("translation consistency: whole-pixel shifts move the mask rigidly") {
  // planar strip at constant depth: a t.x shift of k*z/fx moves every
  // projected point by exactly k pixels
  auto strip = make_strip(6);
  CameraModel cam = test_camera(64, 32.0);
  PoseParams pose;
  pose.translation = Vec3(-1.5, -0.5, 0.0);  // center the strip
  const double z = 4.0;
  const int k = 3;

  SoftRender r0 = render_soft_silhouette(strip, cam, pose, 2.0);
  PoseParams shifted = pose;
  shifted.translation.x() += k * z / cam.fx;
  SoftRender r1 = render_soft_silhouette(strip, cam, shifted, 2.0);

  const auto f0 = r0.frame_values();
  const auto f1 = r1.frame_values();
  int compared = 0;
  for (int row = 0; row < 64; ++row)
    for (int col = 0; col + k < 64; ++col) {
      // compare only confidently-interior/exterior pixels (skip the band)
      if (f0(row, col) > 0.01 && f0(row, col) < 0.99) continue;
      CHECK(f1(row, col + k) == Catch::Approx(f0(row, col)).margin(1e-6));
      ++compared;
    }
  CHECK(compared > 1000);
}

TEST_CASE("out-of-frame fraction: in, out, and split") {
  auto cube = make_cube();
  CameraModel cam = test_camera();
  PoseParams centered;
  auto rin = render_soft_silhouette(cube, cam, centered, 2.0);
  auto fin = out_of_frame_fraction(rin);
  CHECK(fin.value == Catch::Approx(0.0).margin(1e-4));

  PoseParams off;
  off.translation = Vec3(6.0, 0, 0);  // far to the right of the frame
  auto rout = render_soft_silhouette(cube, cam, off, 2.0);
  auto fout = out_of_frame_fraction(rout);
  CHECK(fout.value == Catch::Approx(1.0).margin(1e-3));

  // A planar square parallel to the image plane projects symmetrically;
  // centered between pixel columns 63 and 64 the mass splits exactly in half.
  TriangleMesh square;
  square.vertices = {Vec3(-0.5, -0.5, 0), Vec3(0.5, -0.5, 0), Vec3(0.5, 0.5, 0),
                     Vec3(-0.5, 0.5, 0)};
  square.faces = {{0, 1, 2}, {0, 2, 3}};
  finalize_mesh(square);
  PoseParams split;
  split.translation = Vec3((63.5 - cam.cx) * 4.0 / cam.fx, 0, 0);
  auto rsplit = render_soft_silhouette(square, cam, split, 2.0);
  auto fsplit = out_of_frame_fraction(rsplit);
  CHECK(fsplit.value == Catch::Approx(0.5).margin(1e-6));

  // gradient against finite differences at a pose with part of the square out
  PoseParams partial;
  partial.translation = Vec3((58.0 - cam.cx) * 4.0 / cam.fx, 0.05, 0.1);
  partial.log_scale = 0.1;
  auto rpart = render_soft_silhouette(square, cam, partial, 2.0);
  auto fpart = out_of_frame_fraction(rpart);
  CHECK(fpart.value > 0.05);
  CHECK(fpart.value < 0.5);
  const double h = 1e-4;
  const Eigen::Vector4d theta = partial.as_vector();
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    auto eval = [&](const Eigen::Vector4d& th) {
      return loss_at(square, cam, th, 2.0,
                     [](const SoftRender& r) { return out_of_frame_fraction(r).value; });
    };
    const double fd = (eval(tp) - eval(tm)) / (2 * h);
    if (std::abs(fd) < 1e-6 && std::abs(fpart.grad[k]) < 1e-6) continue;
    INFO("param " << k);
    CHECK(oracle::rel_err(fpart.grad[k], fd) < 2e-3);
  }
}

TEST_CASE("hard rasterization covers the projected square") {
  auto cube = make_cube();
  CameraModel cam = test_camera();
  PoseParams pose;
  MaskImage m = rasterize_hard(cube, cam, pose);
  // cube face spans [-0.5, 0.5] at z in [3.5, 4.5]; nearest face projects to
  // half-width 60*0.5/3.5 = 8.57 px around the center (31.5, 31.5)
  CHECK(m.at(31, 31) == 1);
  CHECK(m.at(31 - 8, 31) == 1);
  CHECK(m.at(31, 31 + 9) == 1);
  CHECK(m.at(31, 31 + 11) == 0);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.count() > 250);
}

TEST_CASE("yaw compensation keeps projections identical") {
  auto cube = make_cube();
  // move the cube off-center so the pivot matters
  for (auto& v : cube.vertices) v += Vec3(0.3, 0.1, -0.2);
  CameraModel cam = test_camera();
  cam.rotation = yaw_matrix(25.0);
  cam.translation = Vec3(0.2, -0.1, 4.0);
  PoseParams pose;
  pose.log_scale = 0.3;
  pose.translation = Vec3(0.1, 0.05, -0.2);

  const Vec3 pivot = cube.aabb_center();
  const double yaw = 90.0;
  TriangleMesh rotated = cube;
  rotate_mesh_yaw(rotated, pivot, yaw);
  CameraModel cam2 = compensate_yaw(cam, pose, pivot, yaw);

  for (int i = 0; i < cube.vertex_count(); ++i) {
    auto p0 = project(cam, pose, cube.vertices[static_cast<size_t>(i)]);
    auto p1 = project(cam2, pose, rotated.vertices[static_cast<size_t>(i)]);
    REQUIRE_FALSE(p0.behind);
    REQUIRE_FALSE(p1.behind);
    CHECK((p0.pixel - p1.pixel).norm() < 1e-9);
    CHECK(p0.depth == Catch::Approx(p1.depth).epsilon(1e-12));
  }
}

TEST_CASE("camera and pose json round trips") {
  CameraModel cam = test_camera();
  cam.rotation = yaw_matrix(40.0);
  auto j = camera_to_json(cam);
  auto back = camera_from_json(j, "<memory>");
  CHECK(back.fx == cam.fx);
  CHECK((back.rotation - cam.rotation).norm() == 0.0);
  CHECK((back.translation - cam.translation).norm() == 0.0);

  PoseParams pose;
  pose.log_scale = -0.3;
  pose.translation = Vec3(1, 2, 3);
  auto pj = pose_to_json(pose);
  auto pback = pose_from_json(pj, "<memory>");
  CHECK(pback.log_scale == pose.log_scale);
  CHECK((pback.translation - pose.translation).norm() == 0.0);

  nlohmann::json bad = {{"fx", 1.0}};
  CHECK_THROWS_AS(camera_from_json(bad, "<memory>"), Error);
}
