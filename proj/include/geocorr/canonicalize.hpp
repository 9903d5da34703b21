#pragma once

#include "geocorr/camera.hpp"
#include "geocorr/core.hpp"
#include "geocorr/image.hpp"
#include "geocorr/mesh.hpp"
#include "geocorr/render.hpp"
#include "geocorr/rng.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace geocorr {

/// One of the eight probe views handed to an orientation estimator.
struct ViewRender {
  int index = 0;
  double yaw_deg = 0.0;  // known yaw the view was rendered at
  MaskImage mask;
};

/// Pluggable orientation estimator. Empty return = failure on that view.
using OrientationEstimator = std::function<std::optional<double>(const ViewRender&)>;

/// Discrete yaw correction that best aligns an estimated yaw with the known
/// view yaw under circular distance; ties resolve to the smaller correction.
inline int best_correction(double psi_est_deg, double psi_known_deg) {
  require(std::isfinite(psi_est_deg) && std::isfinite(psi_known_deg),
          "best_correction: non-finite input");
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int corr : {0, 90, 180, 270}) {
    const double d = circular_dist_deg(psi_est_deg + corr, psi_known_deg);
    if (d < best_dist) {
      best_dist = d;
      best = corr;
    }
  }
  return best;
}

struct CanonicalizeReport {
  int correction_deg = 0;            // winning correction
  std::vector<int> votes;            // per-view correction, -1 where estimation failed
  std::vector<double> estimates;     // raw estimates, NaN where failed
  int failures = 0;
};

constexpr std::array<double, 8> kProbeYawsDeg = {0, 45, 90, 135, 180, 225, 270, 315};

/// Resolve the four-fold yaw ambiguity: render the mesh at eight known yaw
/// offsets, ask the estimator for each view's orientation, vote on the
/// correction, and rotate the mesh by the winner about the vertical axis
/// through its bounding-box center. Aborts when the estimator fails on five
/// or more views.
inline CanonicalizeReport canonicalize_yaw(TriangleMesh& mesh, const CameraModel& cam,
                                           const OrientationEstimator& estimator,
                                           const PoseParams& pose = {}) {
  require(static_cast<bool>(estimator), "canonicalize_yaw: no estimator");
  const Vec3 pivot = mesh.aabb_center();

  CanonicalizeReport report;
  report.votes.assign(kProbeYawsDeg.size(), -1);
  report.estimates.assign(kProbeYawsDeg.size(), std::numeric_limits<double>::quiet_NaN());

  std::array<int, 4> tally = {0, 0, 0, 0};
  for (size_t k = 0; k < kProbeYawsDeg.size(); ++k) {
    ViewRender view;
    view.index = static_cast<int>(k);
    view.yaw_deg = kProbeYawsDeg[k];
    TriangleMesh probe = mesh;
    rotate_mesh_yaw(probe, pivot, view.yaw_deg);
    view.mask = rasterize_hard(probe, cam, pose);

    const auto est = estimator(view);
    if (!est.has_value()) {
      ++report.failures;
      continue;
    }
    report.estimates[k] = wrap_deg(*est);
    const int corr = best_correction(report.estimates[k], view.yaw_deg);
    report.votes[k] = corr;
    tally[static_cast<size_t>(corr / 90)] += 1;
  }
  require(report.failures < 5, "canonicalize_yaw: estimator failed on " +
                                   std::to_string(report.failures) + " of 8 views");

  int winner = 0;
  for (int c = 1; c < 4; ++c)
    if (tally[static_cast<size_t>(c)] > tally[static_cast<size_t>(winner)]) winner = c;
  report.correction_deg = winner * 90;
  if (report.correction_deg != 0) rotate_mesh_yaw(mesh, pivot, report.correction_deg);
  return report;
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// Synthetic oracle: reports the view yaw shifted by the mesh's (hidden) true
/// offset, plus optional Gaussian noise, with optional per-view corruption to
/// a fixed wrong value. Deterministic given the seed.
inline OrientationEstimator make_oracle_estimator(double true_offset_deg,
                                                  double noise_sigma_deg = 0.0,
                                                  std::uint64_t seed = 0,
                                                  std::vector<int> corrupt_views = {}) {
  return [=](const ViewRender& view) -> std::optional<double> {
    for (int bad : corrupt_views)
      if (bad == view.index) {
        // corrupted estimate: off by a seeded wrong multiple of 90 degrees
        auto rng = make_rng(seed, "yaw_corrupt", static_cast<std::uint64_t>(view.index));
        std::uniform_int_distribution<int> pick(1, 3);
        return wrap_deg(view.yaw_deg + true_offset_deg + 90.0 * pick(rng));
      }
    double noise = 0.0;
    if (noise_sigma_deg > 0.0) {
      auto rng = make_rng(seed, "yaw_noise", static_cast<std::uint64_t>(view.index));
      std::normal_distribution<double> n(0.0, noise_sigma_deg);
      noise = n(rng);
    }
    return wrap_deg(view.yaw_deg + true_offset_deg + noise);
  };
}

/// Estimator that always fails on the listed views, delegating elsewhere.
inline OrientationEstimator with_failures(OrientationEstimator inner,
                                          std::vector<int> failing_views) {
  return [inner = std::move(inner),
          failing = std::move(failing_views)](const ViewRender& view)
             -> std::optional<double> {
    for (int f : failing)
      if (f == view.index) return std::nullopt;
    return inner(view);
  };
}

}  // namespace geocorr
