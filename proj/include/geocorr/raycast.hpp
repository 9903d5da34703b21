#pragma once

#include "geocorr/core.hpp"
#include "geocorr/mesh.hpp"

#include <limits>
#include <optional>

namespace geocorr {

/// A point on a mesh surface, addressed by face + barycentric coordinates.
/// Invariants: weights are non-negative and sum to 1 (within 1e-6); position
/// equals the barycentric combination of the face's vertices (within
/// 1e-5 * bounding diagonal).
struct SurfacePoint {
  int face = -1;
  Vec3 bary = Vec3::Zero();
  Vec3 position = Vec3::Zero();

  /// Vertex of the face with the largest barycentric weight; ties broken
  /// toward the lowest vertex index.
  int dominant_vertex(const TriangleMesh& mesh) const {
    const auto& f = mesh.faces[static_cast<size_t>(face)];
    int best = f[0];
    double best_w = bary[0];
    for (int k = 1; k < 3; ++k) {
      if (bary[k] > best_w || (bary[k] == best_w && f[k] < best)) {
        best_w = bary[k];
        best = f[k];
      }
    }
    return best;
  }
};

inline void validate_surface_point(const SurfacePoint& sp, const TriangleMesh& mesh,
                                   double diag) {
  require(sp.face >= 0 && sp.face < mesh.face_count(), "surface point: face out of range");
  require(sp.bary.minCoeff() >= -1e-12, "surface point: negative barycentric weight");
  require(std::abs(sp.bary.sum() - 1.0) <= 1e-6, "surface point: weights do not sum to 1");
  const auto& f = mesh.faces[static_cast<size_t>(sp.face)];
  const Vec3 p = sp.bary[0] * mesh.vertices[f[0]] + sp.bary[1] * mesh.vertices[f[1]] +
                 sp.bary[2] * mesh.vertices[f[2]];
  require((p - sp.position).norm() <= 1e-5 * diag,
          "surface point: position inconsistent with barycentric weights");
}

struct RayHit {
  SurfacePoint point;
  double t = std::numeric_limits<double>::infinity();
};

/// Moller-Trumbore intersection of one ray with one triangle. Returns the
/// parameter t > t_min and barycentric weights, or nothing on a miss.
inline std::optional<RayHit> intersect_triangle(const Vec3& origin, const Vec3& dir,
                                                const TriangleMesh& mesh, int face,
                                                double t_min) {
  const auto& f = mesh.faces[static_cast<size_t>(face)];
  const Vec3& a = mesh.vertices[f[0]];
  const Vec3& b = mesh.vertices[f[1]];
  const Vec3& c = mesh.vertices[f[2]];
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-18) return std::nullopt;  // ray parallel to plane
  const double inv_det = 1.0 / det;
  const Vec3 tvec = origin - a;
  const double u = tvec.dot(pvec) * inv_det;
  if (u < -1e-12 || u > 1.0 + 1e-12) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv_det;
  if (v < -1e-12 || u + v > 1.0 + 1e-12) return std::nullopt;
  const double t = e2.dot(qvec) * inv_det;
  if (t <= t_min) return std::nullopt;

  RayHit hit;
  hit.t = t;
  hit.point.face = face;
  // Clamp tiny numeric excursions and renormalize so invariants hold exactly.
  double w0 = std::max(0.0, 1.0 - u - v);
  double w1 = std::max(0.0, u);
  double w2 = std::max(0.0, v);
  const double s = w0 + w1 + w2;
  hit.point.bary = Vec3(w0 / s, w1 / s, w2 / s);
  hit.point.position = hit.point.bary[0] * a + hit.point.bary[1] * b + hit.point.bary[2] * c;
  return hit;
}

/// Nearest intersection of a ray with the whole mesh (t greater than a small
/// scale-relative epsilon, so rays that start on the surface do not self-hit).
inline std::optional<SurfacePoint> raycast(const Vec3& origin, const Vec3& dir,
                                           const TriangleMesh& mesh, double diag) {
  const double t_min = 1e-9 * diag;
  std::optional<RayHit> best;
  for (int face = 0; face < mesh.face_count(); ++face) {
    auto hit = intersect_triangle(origin, dir, mesh, face, t_min);
    if (hit && (!best || hit->t < best->t)) best = hit;
  }
  if (!best) return std::nullopt;
  return best->point;
}

}  // namespace geocorr
