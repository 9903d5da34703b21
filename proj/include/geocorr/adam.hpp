#pragma once

#include "geocorr/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace geocorr {

/// First and second moment estimates for Adam-family optimizers.
struct AdamState {
  Eigen::ArrayXd m;
  Eigen::ArrayXd v;
  long step = 0;

  explicit AdamState(Eigen::Index n = 0)
      : m(Eigen::ArrayXd::Zero(n)), v(Eigen::ArrayXd::Zero(n)) {}
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {
inline void check_finite_grad(const Eigen::ArrayXd& grad, const char* who) {
  if (grad.isFinite().all()) return;
  std::ostringstream msg;
  msg << who << ": non-finite gradient [";
  for (Eigen::Index i = 0; i < grad.size(); ++i) msg << (i ? ", " : "") << grad[i];
  msg << "]";
  throw Error(msg.str());
}
}  // namespace detail

/// One bias-corrected Adam update with a per-element learning rate.
inline void adam_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grad, AdamState& state,
                      const Eigen::ArrayXd& lr, const AdamConfig& cfg = {}) {
  require(params.size() == grad.size() && params.size() == lr.size(),
          "adam_step: size mismatch");
  detail::check_finite_grad(grad, "adam_step");
  if (state.m.size() != params.size()) state = AdamState(params.size());
  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.square();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params -= lr * (state.m / bc1) / ((state.v / bc2).sqrt() + cfg.eps);
}

/// One AdamW update (decoupled weight decay), scalar learning rate.
inline void adamw_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grad, AdamState& state,
                       double lr, double weight_decay, const AdamConfig& cfg = {}) {
  require(params.size() == grad.size(), "adamw_step: size mismatch");
  detail::check_finite_grad(grad, "adamw_step");
  if (state.m.size() != params.size()) state = AdamState(params.size());
  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.square();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params -= lr * ((state.m / bc1) / ((state.v / bc2).sqrt() + cfg.eps) +
                  weight_decay * params);
}

}  // namespace geocorr
