#pragma once

// Geometric verification of candidate correspondences: lift matched pixels
// onto their meshes, predict cross-mesh partners from per-vertex descriptors,
// score candidates with the diagonal-normalized bicyclic geodesic error, and
// threshold into the pseudo-label set.

#include "geocorr/camera.hpp"
#include "geocorr/feature_map.hpp"
#include "geocorr/geodesic.hpp"
#include "geocorr/mesh.hpp"
#include "geocorr/raycast.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace geocorr {

// One image's reconstruction as the filter sees it.
struct ScenePose {
  const TriangleMesh& mesh;
  const CameraModel& camera;
  const PoseParams& pose;
};

enum class LiftStatus { ok, src_ray_miss, tgt_ray_miss };

inline const char* lift_reason(LiftStatus status) {
  return status == LiftStatus::ok ? "" : "ray miss";
}

// Cast the rays through both candidate pixels and intersect them with the
// respective meshes; fill the lifted surface points and their dominant
// ("snapped") vertices. A miss on either side rejects the candidate.
inline LiftStatus lift_match(CandidateMatch& cand, const ScenePose& src,
                             const ScenePose& tgt) {
  const ObjectRay sray =
      pixel_ray(src.camera, src.pose, cand.p_src.x(), cand.p_src.y());
  const auto shit =
      raycast(sray.origin, sray.direction, src.mesh, bounding_diag(src.mesh));
  if (!shit) return LiftStatus::src_ray_miss;
  const ObjectRay tray =
      pixel_ray(tgt.camera, tgt.pose, cand.p_tgt.x(), cand.p_tgt.y());
  const auto thit =
      raycast(tray.origin, tray.direction, tgt.mesh, bounding_diag(tgt.mesh));
  if (!thit) return LiftStatus::tgt_ray_miss;
  cand.lifted_src = *shit;
  cand.lifted_tgt = *thit;
  cand.snapped_src = shit->dominant_vertex(src.mesh);
  cand.snapped_tgt = thit->dominant_vertex(tgt.mesh);
  return LiftStatus::ok;
}

// Descriptor-space nearest neighbor across meshes: interpolate the source
// mesh's per-vertex descriptors at `point` (the unsnapped surface point) and
// return the target vertex with the highest cosine similarity; ties resolve
// to the smaller index. Vanishing-norm vectors score 0.
inline int cross_mesh_nn(const SurfacePoint& point,
                         const TriangleMesh& src_mesh,
                         const TriangleMesh& tgt_mesh) {
  require(src_mesh.descriptors.rows() == src_mesh.vertex_count() &&
              src_mesh.descriptors.cols() > 0,
          "cross_mesh_nn: source mesh has no descriptors");
  require(tgt_mesh.descriptors.rows() == tgt_mesh.vertex_count() &&
              tgt_mesh.descriptors.cols() > 0,
          "cross_mesh_nn: target mesh has no descriptors");
  require(src_mesh.descriptors.cols() == tgt_mesh.descriptors.cols(),
          "cross_mesh_nn: descriptor dimensions differ");
  require(point.face >= 0 && point.face < src_mesh.face_count(),
          "cross_mesh_nn: surface point face out of range");

  const auto& face = src_mesh.faces[static_cast<size_t>(point.face)];
  Eigen::RowVectorXd query =
      Eigen::RowVectorXd::Zero(src_mesh.descriptors.cols());
  for (int k = 0; k < 3; ++k)
    query += point.bary[static_cast<size_t>(k)] *
             src_mesh.descriptors.row(face[static_cast<size_t>(k)]);
  const double qn = query.norm();

  int best = 0;
  double best_cos = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < tgt_mesh.vertex_count(); ++v) {
    const double vn = tgt_mesh.descriptors.row(v).norm();
    const double cos =
        (qn > 0.0 && vn > 0.0)
            ? query.dot(tgt_mesh.descriptors.row(v)) / (qn * vn)
            : 0.0;
    if (cos > best_cos) {
      best_cos = cos;
      best = v;
    }
  }
  return best;
}

// Bicyclic geodesic error of a lifted candidate:
//   forward:  geodesic on the target mesh between the cross-mesh prediction
//             of the lifted source point and the snapped target vertex,
//   backward: the mirror-image term on the source mesh,
// each normalized by its mesh's bounding-box diagonal and averaged.
// Unreachable geodesics yield +infinity.
inline double bicyclic_error(const CandidateMatch& cand,
                             const TriangleMesh& src_mesh,
                             const TriangleMesh& tgt_mesh,
                             GeodesicCache& src_cache,
                             GeodesicCache& tgt_cache) {
  require(cand.lifted_src.has_value() && cand.lifted_tgt.has_value() &&
              cand.snapped_src >= 0 && cand.snapped_tgt >= 0,
          "bicyclic_error: candidate has not been lifted");
  const int fwd_nn = cross_mesh_nn(*cand.lifted_src, src_mesh, tgt_mesh);
  const int bwd_nn = cross_mesh_nn(*cand.lifted_tgt, tgt_mesh, src_mesh);
  const double d_st =
      tgt_cache.from(fwd_nn)[static_cast<size_t>(cand.snapped_tgt)];
  const double d_ts =
      src_cache.from(bwd_nn)[static_cast<size_t>(cand.snapped_src)];
  if (!std::isfinite(d_st) || !std::isfinite(d_ts))
    return std::numeric_limits<double>::infinity();
  return 0.5 * (d_st / bounding_diag(tgt_mesh) +
                d_ts / bounding_diag(src_mesh));
}

struct PseudoLabel {
  Vec2 p_src = Vec2::Zero();
  Vec2 p_tgt = Vec2::Zero();
  double geo_error = 0.0;
};

struct PseudoLabelSet {
  std::string src_img;
  std::string tgt_img;
  double tau_geo = 0.05;
  std::vector<PseudoLabel> pairs;
};

struct RejectedCandidate {
  CandidateMatch cand;
  std::string reason;
};

struct GeodesicFilterResult {
  PseudoLabelSet labels;
  std::vector<RejectedCandidate> rejected;
};

// The one keep rule: inclusive threshold on the bicyclic error.
inline bool geo_keep(double geo_error, double tau_geo) {
  return geo_error <= tau_geo;
}

// Reason attached to a rejected candidate's error.
inline const char* geo_reject_reason(double geo_error) {
  return std::isfinite(geo_error) ? "geo error above threshold"
                                  : "geodesic unreachable";
}

// Threshold scored candidates into the pseudo-label set: keep iff
// geo_error <= tau_geo (inclusive). Rejections carry a reason and the error.
inline GeodesicFilterResult geodesic_filter(
    const std::vector<CandidateMatch>& cands, double tau_geo) {
  require(std::isfinite(tau_geo) && tau_geo >= 0.0,
          "geodesic_filter: threshold must be finite and non-negative");
  GeodesicFilterResult result;
  result.labels.tau_geo = tau_geo;
  for (const CandidateMatch& cand : cands) {
    require(cand.geo_error.has_value(),
            "geodesic_filter: candidate has no bicyclic error");
    const double err = *cand.geo_error;
    if (geo_keep(err, tau_geo)) {
      result.labels.pairs.push_back({cand.p_src, cand.p_tgt, err});
    } else {
      result.rejected.push_back({cand, geo_reject_reason(err)});
    }
  }
  return result;
}

// One pseudo-label JSONL row. Infinite errors serialize as null (JSON has no
// infinity literal).
inline std::string label_jsonl_line(const std::string& src_img,
                                    const std::string& tgt_img,
                                    const Vec2& p_src, const Vec2& p_tgt,
                                    std::optional<double> geo_error, bool kept,
                                    const std::string& reason) {
  nlohmann::json row;
  row["src_img"] = src_img;
  row["tgt_img"] = tgt_img;
  row["p_src"] = {p_src.x(), p_src.y()};
  row["p_tgt"] = {p_tgt.x(), p_tgt.y()};
  if (geo_error.has_value() && std::isfinite(*geo_error))
    row["geo_error"] = *geo_error;
  else
    row["geo_error"] = nullptr;
  row["kept"] = kept;
  row["reason"] = reason;
  return row.dump();
}

}  // namespace geocorr
