#pragma once

#include "geocorr/core.hpp"
#include "geocorr/mesh.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <string>

namespace geocorr {

/// Pinhole camera: pixel = (fx*x'/z' + cx, fy*y'/z' + cy) with
/// (x',y',z') = R*(e^l * p + t) + t_cam. Pixel centers sit at integer
/// coordinates; (col, row) = (x, y).
struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Object pose searched by refinement: uniform log-scale and a world-space
/// offset applied before the camera transform.
struct PoseParams {
  double log_scale = 0.0;
  Vec3 translation = Vec3::Zero();

  double scale() const { return std::exp(log_scale); }

  Eigen::Vector4d as_vector() const {
    return Eigen::Vector4d(log_scale, translation.x(), translation.y(), translation.z());
  }
  static PoseParams from_vector(const Eigen::Vector4d& v) {
    PoseParams p;
    p.log_scale = v[0];
    p.translation = Vec3(v[1], v[2], v[3]);
    return p;
  }
};

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool behind = false;  // non-positive depth; pixel is meaningless then
};

inline Vec3 camera_space_point(const CameraModel& cam, const PoseParams& pose,
                               const Vec3& point) {
  return cam.rotation * (pose.scale() * point + pose.translation) + cam.translation;
}

inline Projection project(const CameraModel& cam, const PoseParams& pose, const Vec3& point) {
  const Vec3 c = camera_space_point(cam, pose, point);
  Projection out;
  out.depth = c.z();
  if (c.z() <= 0.0) {
    out.behind = true;
    return out;
  }
  out.pixel = Vec2(cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy);
  return out;
}

/// Projection of one point together with the 2x4 Jacobian of the pixel with
/// respect to (log_scale, t.x, t.y, t.z).
struct ProjectionJet {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool behind = false;
  Eigen::Matrix<double, 2, 4> jac = Eigen::Matrix<double, 2, 4>::Zero();
};

inline ProjectionJet project_jet(const CameraModel& cam, const PoseParams& pose,
                                 const Vec3& point) {
  ProjectionJet out;
  const double s = pose.scale();
  const Vec3 c = cam.rotation * (s * point + pose.translation) + cam.translation;
  out.depth = c.z();
  if (c.z() <= 0.0) {
    out.behind = true;
    return out;
  }
  out.pixel = Vec2(cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy);

  // camera-space derivatives per parameter
  Eigen::Matrix<double, 3, 4> dc;
  dc.col(0) = cam.rotation * (s * point);  // d/d log_scale (s = e^l, ds/dl = s)
  dc.col(1) = cam.rotation.col(0);
  dc.col(2) = cam.rotation.col(1);
  dc.col(3) = cam.rotation.col(2);

  const double iz = 1.0 / c.z();
  Eigen::Matrix<double, 2, 3> dp;
  dp << cam.fx * iz, 0.0, -cam.fx * c.x() * iz * iz,
        0.0, cam.fy * iz, -cam.fy * c.y() * iz * iz;
  out.jac = dp * dc;
  return out;
}

/// Ray through a pixel center, expressed in the object frame used before the
/// pose transform is applied: origin and direction such that walking the ray
/// and applying pose+camera lands on that pixel at every depth.
struct ObjectRay {
  Vec3 origin;
  Vec3 direction;
};

inline ObjectRay pixel_ray(const CameraModel& cam, const PoseParams& pose, double px,
                           double py) {
  // camera-space ray through the pixel
  const Vec3 dir_cam((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
  // invert: c = R*(s*p + t) + t_cam  =>  p = (R^T*(c - t_cam) - t) / s
  const Mat3 rt = cam.rotation.transpose();
  const double inv_s = 1.0 / pose.scale();
  ObjectRay ray;
  ray.origin = (rt * (Vec3::Zero() - cam.translation) - pose.translation) * inv_s;
  ray.direction = (rt * dir_cam * inv_s).normalized();
  return ray;
}

// ---------------------------------------------------------------------------
// Yaw rotation about the vertical axis through a pivot, plus the camera
// adjustment that keeps the projection of the rotated mesh identical.
// ---------------------------------------------------------------------------

inline Mat3 yaw_matrix(double yaw_deg) {
  const double a = deg_to_rad(yaw_deg);
  Mat3 r;
  r << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  return r;
}

/// Rotate every vertex about the y-axis line through `pivot`.
inline void rotate_mesh_yaw(TriangleMesh& mesh, const Vec3& pivot, double yaw_deg) {
  const Mat3 r = yaw_matrix(yaw_deg);
  for (Vec3& v : mesh.vertices) v = r * (v - pivot) + pivot;
}

/// Camera that sees the yaw-rotated mesh exactly as the original camera saw
/// the unrotated mesh, with the pose parameters left untouched.
inline CameraModel compensate_yaw(const CameraModel& cam, const PoseParams& pose,
                                  const Vec3& pivot, double yaw_deg) {
  const Mat3 ry = yaw_matrix(yaw_deg);
  const double s = pose.scale();
  CameraModel out = cam;
  out.rotation = cam.rotation * ry.transpose();
  // Original map: p -> R(s p + t) + t_cam with p = Ry^T (p' - c) + c.
  // Regrouping gives R Ry^T s p' + [R s (c - Ry^T c) + R t + t_cam - R Ry^T t].
  out.translation = cam.rotation * (s * (pivot - ry.transpose() * pivot)) +
                    cam.rotation * pose.translation + cam.translation -
                    out.rotation * pose.translation;
  return out;
}

// ---------------------------------------------------------------------------
// JSON camera files
// ---------------------------------------------------------------------------

inline CameraModel camera_from_json(const nlohmann::json& j, const std::string& origin) {
  CameraModel cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const auto rot = j.at("rotation").get<std::vector<double>>();
    require(rot.size() == 9, origin + ": rotation must have 9 entries (row-major)");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[static_cast<size_t>(r * 3 + c)];
    const auto t = j.at("translation").get<std::vector<double>>();
    require(t.size() == 3, origin + ": translation must have 3 entries");
    cam.translation = Vec3(t[0], t[1], t[2]);
  } catch (const nlohmann::json::exception& e) {
    throw Error(origin + ": bad camera JSON: " + e.what());
  }
  require(cam.fx > 0 && cam.fy > 0, origin + ": focal lengths must be positive");
  require(cam.width > 0 && cam.height > 0, origin + ": image size must be positive");
  return cam;
}

inline nlohmann::json camera_to_json(const CameraModel& cam) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[static_cast<size_t>(r * 3 + c)] = cam.rotation(r, c);
  return nlohmann::json{{"fx", cam.fx},       {"fy", cam.fy},
                        {"cx", cam.cx},       {"cy", cam.cy},
                        {"width", cam.width}, {"height", cam.height},
                        {"rotation", rot},
                        {"translation", {cam.translation.x(), cam.translation.y(),
                                         cam.translation.z()}}};
}

inline CameraModel load_camera(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_camera: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  return camera_from_json(j, path);
}

inline void save_camera(const CameraModel& cam, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_camera: cannot open '" + path + "' for writing");
  out << camera_to_json(cam).dump(2) << "\n";
}

/// Pose JSON ({"log_scale": .., "translation": [..]}).
inline PoseParams pose_from_json(const nlohmann::json& j, const std::string& origin) {
  PoseParams pose;
  try {
    pose.log_scale = j.at("log_scale").get<double>();
    const auto t = j.at("translation").get<std::vector<double>>();
    require(t.size() == 3, origin + ": translation must have 3 entries");
    pose.translation = Vec3(t[0], t[1], t[2]);
  } catch (const nlohmann::json::exception& e) {
    throw Error(origin + ": bad pose JSON: " + e.what());
  }
  require(std::isfinite(pose.log_scale) && pose.translation.allFinite(),
          origin + ": pose must be finite");
  return pose;
}

inline nlohmann::json pose_to_json(const PoseParams& pose) {
  return nlohmann::json{
      {"log_scale", pose.log_scale},
      {"translation",
       {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

inline PoseParams load_pose(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_pose: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  return pose_from_json(j, path);
}

inline void save_pose(const PoseParams& pose, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_pose: cannot open '" + path + "' for writing");
  out << pose_to_json(pose).dump(2) << "\n";
}

}  // namespace geocorr
