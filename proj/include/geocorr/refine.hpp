#pragma once

#include "geocorr/adam.hpp"
#include "geocorr/camera.hpp"
#include "geocorr/core.hpp"
#include "geocorr/distance_transform.hpp"
#include "geocorr/image.hpp"
#include "geocorr/mesh.hpp"
#include "geocorr/render.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace geocorr {

struct RefineConfig {
  double lr_scale = 0.05;
  double lr_trans = 0.02;
  int steps_dt = 100;
  int steps_iou = 50;
  double lambda = 4.0;
  int dilation_radius = 4;
  double kappa = 2.0;
  AdamConfig adam;
  double out_of_frame_limit = 0.25;
  double out_of_frame_weight = 10.0;
};

struct RefineStep {
  int step = 0;            // global step index
  std::string phase;       // "dt" or "iou"
  double loss = 0.0;       // objective at the parameters this step saw
  PoseParams pose;         // parameters after the update
};

struct RefineResult {
  PoseParams pose;
  std::vector<RefineStep> trace;
};

/// Two-phase silhouette alignment: distance-field steps pull the render onto
/// the (dilated) observed mask, then soft-IoU steps tighten the overlap. Both
/// phases add a strong penalty when more than `out_of_frame_limit` of the
/// silhouette mass leaves the frame.
inline RefineResult refine_pose(const TriangleMesh& mesh, const CameraModel& cam,
                                const MaskImage& observed, const PoseParams& init,
                                const RefineConfig& cfg = {}) {
  require(observed.count() > 0, "refine_pose: observed mask is empty");
  require(observed.height == cam.height && observed.width == cam.width,
          "refine_pose: mask size does not match the camera frame");
  require(cfg.steps_dt >= 0 && cfg.steps_iou >= 0, "refine_pose: negative step count");
  require(cfg.lambda >= 1.0, "refine_pose: lambda must be >= 1");

  const DistanceFields fields = distance_fields(observed, cfg.dilation_radius);
  Eigen::MatrixXd observed_soft(observed.height, observed.width);
  for (int r = 0; r < observed.height; ++r)
    for (int c = 0; c < observed.width; ++c) observed_soft(r, c) = observed.at(r, c);

  Eigen::ArrayXd params(4);
  params << init.log_scale, init.translation.x(), init.translation.y(),
      init.translation.z();
  Eigen::ArrayXd lr(4);
  lr << cfg.lr_scale, cfg.lr_trans, cfg.lr_trans, cfg.lr_trans;

  RefineResult out;
  out.trace.reserve(static_cast<size_t>(cfg.steps_dt + cfg.steps_iou));

  for (int phase = 0; phase < 2; ++phase) {
    const bool dt_phase = phase == 0;
    const int steps = dt_phase ? cfg.steps_dt : cfg.steps_iou;
    AdamState adam(4);  // fresh moments per phase: the objective changes
    for (int s = 0; s < steps; ++s) {
      const PoseParams pose = PoseParams::from_vector(params.matrix());
      const SoftRender render = render_soft_silhouette(mesh, cam, pose, cfg.kappa);
      LossValueGrad loss = dt_phase
                               ? dt_loss(render.frame_values(), fields, cfg.lambda)
                               : soft_iou_loss(render.frame_values(), observed_soft);
      double value = loss.value;
      Eigen::Vector4d grad = chain_pose_grad(loss.grad, render);

      const FractionGrad frac = out_of_frame_fraction(render);
      if (frac.value > cfg.out_of_frame_limit) {
        value += cfg.out_of_frame_weight * frac.value;
        grad += cfg.out_of_frame_weight * frac.grad;
      }
      require(std::isfinite(value), "refine_pose: non-finite loss");

      adam_step(params, grad.array(), adam, lr, cfg.adam);
      RefineStep entry;
      entry.step = static_cast<int>(out.trace.size());
      entry.phase = dt_phase ? "dt" : "iou";
      entry.loss = value;
      entry.pose = PoseParams::from_vector(params.matrix());
      out.trace.push_back(entry);
    }
  }
  out.pose = PoseParams::from_vector(params.matrix());
  return out;
}

}  // namespace geocorr
