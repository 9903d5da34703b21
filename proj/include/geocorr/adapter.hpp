#pragma once

#include "geocorr/adam.hpp"
#include "geocorr/core.hpp"
#include "geocorr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace geocorr {

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Four fully connected layers with tanh between them and an L2-normalized
/// output. Refines frozen per-cell feature vectors; small enough that all
/// gradients are hand-derived and finite-difference checked.
struct AdapterNet {
  std::vector<int> dims;             // {in, h1, h2, h3, out}
  std::vector<Eigen::MatrixXd> W;    // W[l]: dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> b;    // b[l]: dims[l+1]
  std::uint64_t seed = 0;

  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  int layer_count() const { return static_cast<int>(W.size()); }
};

inline constexpr int kAdapterLayers = 4;

/// Xavier-normal weights, zero biases; one named substream per layer.
inline AdapterNet make_adapter(int in_dim, int out_dim, int hidden = 256,
                               std::uint64_t seed = 0) {
  require(in_dim > 0 && out_dim > 0 && hidden > 0,
          "make_adapter: dimensions must be positive");
  AdapterNet net;
  net.seed = seed;
  net.dims = {in_dim, hidden, hidden, hidden, out_dim};
  net.W.resize(kAdapterLayers);
  net.b.resize(kAdapterLayers);
  for (int l = 0; l < kAdapterLayers; ++l) {
    const int rows = net.dims[static_cast<size_t>(l) + 1];
    const int cols = net.dims[static_cast<size_t>(l)];
    auto rng = make_rng(seed, "adapter_init", static_cast<std::uint64_t>(l));
    std::normal_distribution<double> gauss(0.0,
                                           std::sqrt(2.0 / (rows + cols)));
    net.W[static_cast<size_t>(l)].resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        net.W[static_cast<size_t>(l)](r, c) = gauss(rng);
    net.b[static_cast<size_t>(l)] = Eigen::VectorXd::Zero(rows);
  }
  return net;
}

inline long param_count(const AdapterNet& net) {
  long n = 0;
  for (size_t l = 0; l < net.W.size(); ++l)
    n += net.W[l].size() + net.b[l].size();
  return n;
}

/// Intermediate activations of one forward pass, kept for backprop.
struct ForwardCache {
  std::vector<Eigen::VectorXd> act;  // act[0] = input, act[l] = tanh output
  Eigen::VectorXd raw;               // final linear output before normalizing
  double raw_norm = 0.0;
  Eigen::VectorXd out;               // unit vector (or zero if raw was zero)
};

inline const Eigen::VectorXd& forward_cached(const AdapterNet& net,
                                             const Eigen::VectorXd& x,
                                             ForwardCache& cache) {
  require(static_cast<int>(x.size()) == net.in_dim(),
          "adapter forward: input dimension mismatch");
  cache.act.assign(1, x);
  Eigen::VectorXd h = x;
  for (int l = 0; l < kAdapterLayers - 1; ++l) {
    h = (net.W[static_cast<size_t>(l)] * h + net.b[static_cast<size_t>(l)])
            .array()
            .tanh()
            .matrix();
    cache.act.push_back(h);
  }
  cache.raw = net.W.back() * h + net.b.back();
  cache.raw_norm = cache.raw.norm();
  cache.out = cache.raw_norm > 0.0
                  ? Eigen::VectorXd(cache.raw / cache.raw_norm)
                  : Eigen::VectorXd::Zero(cache.raw.size()).eval();
  return cache.out;
}

inline Eigen::VectorXd forward(const AdapterNet& net,
                               const Eigen::VectorXd& x) {
  ForwardCache cache;
  return forward_cached(net, x, cache);
}

/// Row-by-row forward: each row of the result is exactly the single-sample
/// pass of the matching input row.
inline Eigen::MatrixXd forward_batch(const AdapterNet& net,
                                     const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), net.out_dim());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out.row(i) = forward(net, X.row(i).transpose()).transpose();
  return out;
}

/// Parameter-shaped gradient accumulator.
struct AdapterGrads {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
};

inline AdapterGrads zero_grads(const AdapterNet& net) {
  AdapterGrads g;
  g.dW.resize(net.W.size());
  g.db.resize(net.b.size());
  for (size_t l = 0; l < net.W.size(); ++l) {
    g.dW[l] = Eigen::MatrixXd::Zero(net.W[l].rows(), net.W[l].cols());
    g.db[l] = Eigen::VectorXd::Zero(net.b[l].size());
  }
  return g;
}

/// Accumulate d(loss)/d(parameters) given d(loss)/d(normalized output).
inline void backward_from_output(const AdapterNet& net,
                                 const ForwardCache& cache,
                                 const Eigen::VectorXd& dout,
                                 AdapterGrads& grads) {
  // through y = r / |r|:  dr = (dy - y (y . dy)) / |r|
  Eigen::VectorXd delta;
  if (cache.raw_norm > 0.0)
    delta = (dout - cache.out * cache.out.dot(dout)) / cache.raw_norm;
  else
    delta = Eigen::VectorXd::Zero(dout.size());
  for (int l = kAdapterLayers - 1; l >= 0; --l) {
    const Eigen::VectorXd& input = cache.act[static_cast<size_t>(l)];
    grads.dW[static_cast<size_t>(l)].noalias() += delta * input.transpose();
    grads.db[static_cast<size_t>(l)] += delta;
    if (l == 0) break;
    delta = net.W[static_cast<size_t>(l)].transpose() * delta;
    // act[l] = tanh(pre), so dtanh = 1 - act[l]^2
    delta.array() *= 1.0 - cache.act[static_cast<size_t>(l)]
                               .array()
                               .square();
  }
}

// Flat parameter vector, layer by layer: W row-major, then b.
inline Eigen::ArrayXd pack_params(const AdapterNet& net) {
  Eigen::ArrayXd flat(param_count(net));
  Eigen::Index k = 0;
  for (size_t l = 0; l < net.W.size(); ++l) {
    for (Eigen::Index r = 0; r < net.W[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.W[l].cols(); ++c)
        flat[k++] = net.W[l](r, c);
    for (Eigen::Index r = 0; r < net.b[l].size(); ++r)
      flat[k++] = net.b[l][r];
  }
  return flat;
}

inline void unpack_params(AdapterNet& net, const Eigen::ArrayXd& flat) {
  require(flat.size() == param_count(net),
          "unpack_params: parameter count mismatch");
  Eigen::Index k = 0;
  for (size_t l = 0; l < net.W.size(); ++l) {
    for (Eigen::Index r = 0; r < net.W[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.W[l].cols(); ++c)
        net.W[l](r, c) = flat[k++];
    for (Eigen::Index r = 0; r < net.b[l].size(); ++r)
      net.b[l][r] = flat[k++];
  }
}

inline Eigen::ArrayXd pack_grads(const AdapterNet& net,
                                 const AdapterGrads& grads) {
  Eigen::ArrayXd flat(param_count(net));
  Eigen::Index k = 0;
  for (size_t l = 0; l < grads.dW.size(); ++l) {
    for (Eigen::Index r = 0; r < grads.dW[l].rows(); ++r)
      for (Eigen::Index c = 0; c < grads.dW[l].cols(); ++c)
        flat[k++] = grads.dW[l](r, c);
    for (Eigen::Index r = 0; r < grads.db[l].size(); ++r)
      flat[k++] = grads.db[l][r];
  }
  (void)net;
  return flat;
}

// ---------------------------------------------------------------------------
// Sparse contrastive loss
// ---------------------------------------------------------------------------

/// Symmetric InfoNCE over one batch of matched points. Row i of `src_raw`
/// and row i of `tgt_raw` are the frozen features of the i-th positive pair;
/// the other rows of the batch serve as its negatives. Per positive,
/// -log( exp(s_ii/tau) / sum_j exp(s_ij/tau) ), averaged over both matching
/// directions, where s is the dot product of refined unit features.
inline double sparse_contrastive_loss(const AdapterNet& net,
                                      const Eigen::MatrixXd& src_raw,
                                      const Eigen::MatrixXd& tgt_raw,
                                      double tau_c,
                                      AdapterGrads* grads = nullptr) {
  const Eigen::Index P = src_raw.rows();
  require(P >= 1, "sparse_contrastive_loss: no positive pairs");
  require(P >= 2,
          "sparse_contrastive_loss: each positive needs at least one in-batch "
          "negative");
  require(tgt_raw.rows() == P,
          "sparse_contrastive_loss: source/target batch size mismatch");
  require(std::isfinite(tau_c) && tau_c > 0.0,
          "sparse_contrastive_loss: temperature must be positive");

  std::vector<ForwardCache> src_cache(static_cast<size_t>(P)),
      tgt_cache(static_cast<size_t>(P));
  Eigen::MatrixXd Fs(P, net.out_dim()), Ft(P, net.out_dim());
  for (Eigen::Index i = 0; i < P; ++i) {
    Fs.row(i) = forward_cached(net, src_raw.row(i).transpose(),
                               src_cache[static_cast<size_t>(i)])
                    .transpose();
    Ft.row(i) = forward_cached(net, tgt_raw.row(i).transpose(),
                               tgt_cache[static_cast<size_t>(i)])
                    .transpose();
  }

  const Eigen::MatrixXd S = (Fs * Ft.transpose()) / tau_c;
  // stable log-softmax over rows (src -> tgt) and columns (tgt -> src)
  double loss = 0.0;
  Eigen::MatrixXd dS = Eigen::MatrixXd::Zero(P, P);
  const double inv = 1.0 / (2.0 * static_cast<double>(P));
  for (Eigen::Index i = 0; i < P; ++i) {
    const double mx = S.row(i).maxCoeff();
    const Eigen::ArrayXd ex = (S.row(i).transpose().array() - mx).exp();
    const double Z = ex.sum();
    loss += (std::log(Z) + mx - S(i, i)) * inv;
    if (grads) {
      dS.row(i) += (ex / Z).matrix().transpose() * inv;
      dS(i, i) -= inv;
    }
  }
  for (Eigen::Index j = 0; j < P; ++j) {
    const double mx = S.col(j).maxCoeff();
    const Eigen::ArrayXd ex = (S.col(j).array() - mx).exp();
    const double Z = ex.sum();
    loss += (std::log(Z) + mx - S(j, j)) * inv;
    if (grads) {
      dS.col(j) += (ex / Z).matrix() * inv;
      dS(j, j) -= inv;
    }
  }

  if (grads) {
    const Eigen::MatrixXd dFs = dS * Ft / tau_c;
    const Eigen::MatrixXd dFt = dS.transpose() * Fs / tau_c;
    for (Eigen::Index i = 0; i < P; ++i) {
      backward_from_output(net, src_cache[static_cast<size_t>(i)],
                           dFs.row(i).transpose(), *grads);
      backward_from_output(net, tgt_cache[static_cast<size_t>(i)],
                           dFt.row(i).transpose(), *grads);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Dense window-soft-argmax loss
// ---------------------------------------------------------------------------

struct DenseLossConfig {
  int window = 15;            // soft-argmax window side, in cells
  double temp = 0.04;         // soft-argmax temperature
  double sigma_eps = 0.5;     // stddev of the label jitter, in cells
};

/// Per label: refine the source feature at p_s and every target cell, take
/// the similarity row, hard-argmax to place a window (clamped inside the
/// grid), and predict the target location as the temperature-weighted
/// expected cell position inside it. Loss is the mean distance between the
/// prediction and the jittered labeled cell, in (row, col) grid coordinates.
/// The rng is consumed once per label per coordinate regardless of the
/// parameter values, so seeded reruns see identical jitter.
inline double dense_loss(const AdapterNet& net,
                         const Eigen::MatrixXd& src_feats,
                         const std::vector<std::array<int, 2>>& tgt_cells,
                         const Eigen::MatrixXd& tgt_map, int grid_h,
                         int grid_w, const DenseLossConfig& cfg, Rng& rng,
                         AdapterGrads* grads = nullptr,
                         std::vector<Vec2>* preds = nullptr) {
  const Eigen::Index N = src_feats.rows();
  require(N >= 1, "dense_loss: no labels");
  require(static_cast<Eigen::Index>(tgt_cells.size()) == N,
          "dense_loss: label count mismatch");
  require(grid_h >= 1 && grid_w >= 1 &&
              tgt_map.rows() == static_cast<Eigen::Index>(grid_h) * grid_w,
          "dense_loss: target map does not match the grid");
  require(cfg.window >= 1, "dense_loss: window must be at least one cell");
  require(std::isfinite(cfg.temp) && cfg.temp > 0.0,
          "dense_loss: temperature must be positive");
  require(cfg.sigma_eps >= 0.0, "dense_loss: negative jitter");
  for (const auto& cell : tgt_cells)
    require(cell[0] >= 0 && cell[0] < grid_h && cell[1] >= 0 &&
                cell[1] < grid_w,
            "dense_loss: label outside the grid");

  const Eigen::Index G = tgt_map.rows();
  std::vector<ForwardCache> tcache(static_cast<size_t>(G));
  Eigen::MatrixXd Ft(G, net.out_dim());
  for (Eigen::Index g = 0; g < G; ++g)
    Ft.row(g) =
        forward_cached(net, tgt_map.row(g).transpose(),
                       tcache[static_cast<size_t>(g)])
            .transpose();
  Eigen::MatrixXd dFt;
  if (grads) dFt = Eigen::MatrixXd::Zero(G, net.out_dim());

  const int wh = std::min(cfg.window, grid_h);
  const int ww = std::min(cfg.window, grid_w);
  std::normal_distribution<double> jitter(0.0, cfg.sigma_eps);

  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(N);
  if (preds) preds->assign(static_cast<size_t>(N), Vec2::Zero());

  for (Eigen::Index i = 0; i < N; ++i) {
    Vec2 eps = Vec2::Zero();
    if (cfg.sigma_eps > 0.0) {
      eps.x() = jitter(rng);  // row jitter
      eps.y() = jitter(rng);  // col jitter
    }

    ForwardCache scache;
    const Eigen::VectorXd fs =
        forward_cached(net, src_feats.row(i).transpose(), scache);
    const Eigen::VectorXd sim = Ft * fs;

    // hard argmax places the window; ties go to the smallest flat index
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < G; ++g)
      if (sim[g] > sim[best]) best = g;
    const int br = static_cast<int>(best) / grid_w;
    const int bc = static_cast<int>(best) % grid_w;
    const int r0 = std::clamp(br - cfg.window / 2, 0, grid_h - wh);
    const int c0 = std::clamp(bc - cfg.window / 2, 0, grid_w - ww);

    // soft-argmax inside the window
    const int K = wh * ww;
    Eigen::ArrayXd logits(K);
    for (int r = 0; r < wh; ++r)
      for (int c = 0; c < ww; ++c)
        logits[r * ww + c] =
            sim[static_cast<Eigen::Index>(r0 + r) * grid_w + (c0 + c)] /
            cfg.temp;
    const double mx = logits.maxCoeff();
    Eigen::ArrayXd w = (logits - mx).exp();
    w /= w.sum();

    Vec2 pred = Vec2::Zero();
    for (int r = 0; r < wh; ++r)
      for (int c = 0; c < ww; ++c) {
        const double wk = w[r * ww + c];
        pred.x() += wk * (r0 + r);
        pred.y() += wk * (c0 + c);
      }
    if (preds) (*preds)[static_cast<size_t>(i)] = pred;

    const Vec2 target(tgt_cells[static_cast<size_t>(i)][0] + eps.x(),
                      tgt_cells[static_cast<size_t>(i)][1] + eps.y());
    const Vec2 diff = pred - target;
    const double dist = diff.norm();
    loss += dist * inv;

    if (!grads || dist == 0.0) continue;
    const Vec2 dpred = diff / dist * inv;
    // softmax backward: d logits_k = w_k (a_k - sum_j w_j a_j), a_k = pos_k . dpred
    Eigen::ArrayXd a(K);
    for (int r = 0; r < wh; ++r)
      for (int c = 0; c < ww; ++c)
        a[r * ww + c] = (r0 + r) * dpred.x() + (c0 + c) * dpred.y();
    const double abar = (w * a).sum();
    Eigen::VectorXd dfs = Eigen::VectorXd::Zero(net.out_dim());
    for (int r = 0; r < wh; ++r)
      for (int c = 0; c < ww; ++c) {
        const double dsim = w[r * ww + c] * (a[r * ww + c] - abar) / cfg.temp;
        if (dsim == 0.0) continue;
        const Eigen::Index g =
            static_cast<Eigen::Index>(r0 + r) * grid_w + (c0 + c);
        dfs += dsim * Ft.row(g).transpose();
        dFt.row(g) += dsim * fs.transpose();
      }
    backward_from_output(net, scache, dfs, *grads);
  }

  if (grads)
    for (Eigen::Index g = 0; g < G; ++g)
      if (dFt.row(g).squaredNorm() > 0.0)
        backward_from_output(net, tcache[static_cast<size_t>(g)],
                             dFt.row(g).transpose(), *grads);
  return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One image pair of the training corpus: frozen fused feature maps for both
/// images (row-major cells) plus the retained label cells, aligned by index.
struct AdapterPair {
  Eigen::MatrixXd src_map;  // (src_h*src_w) x in_dim
  Eigen::MatrixXd tgt_map;  // (tgt_h*tgt_w) x in_dim
  int src_h = 0, src_w = 0;
  int tgt_h = 0, tgt_w = 0;
  std::vector<std::array<int, 2>> src_cells;  // label source cells (row, col)
  std::vector<std::array<int, 2>> tgt_cells;  // matching target cells
};

struct TrainConfig {
  int iterations = 2000;
  double lr = 5e-3;
  double weight_decay = 1e-3;
  int labels_per_pair_per_iter = 50;
  double tau_c = 0.07;
  DenseLossConfig dense;
  double warmup_frac = 0.1;   // one-cycle: linear ramp over this fraction
  double final_lr_div = 25.0; // ...then cosine decay to lr / this
  std::uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& cfg) {
  require(cfg.iterations > 0, "train config: iterations must be positive");
  require(std::isfinite(cfg.lr) && cfg.lr >= 0.0,
          "train config: learning rate must be non-negative");
  require(std::isfinite(cfg.weight_decay) && cfg.weight_decay >= 0.0,
          "train config: weight decay must be non-negative");
  require(cfg.labels_per_pair_per_iter > 0,
          "train config: per-pair label cap must be positive");
  require(cfg.tau_c > 0.0, "train config: temperature must be positive");
  require(cfg.warmup_frac > 0.0 && cfg.warmup_frac < 1.0,
          "train config: warmup fraction must lie in (0, 1)");
  require(cfg.final_lr_div >= 1.0,
          "train config: final lr divisor must be at least 1");
}

/// One-cycle schedule: linear warmup from lr/div to lr over the first
/// warmup_frac of iterations, then cosine decay back down to lr/div.
inline double one_cycle_lr(const TrainConfig& cfg, int iter) {
  const double floor_lr = cfg.lr / cfg.final_lr_div;
  const int warm = std::max(
      1, static_cast<int>(std::lround(cfg.warmup_frac * cfg.iterations)));
  if (iter < warm)
    return floor_lr + (cfg.lr - floor_lr) * (static_cast<double>(iter) / warm);
  const double span = std::max(1, cfg.iterations - warm);
  const double u = (iter - warm) / span;
  return floor_lr + (cfg.lr - floor_lr) * 0.5 * (1.0 + std::cos(kPi * u));
}

struct TrainRecord {
  int iter = 0;  // 1-based
  double loss_sparse = 0.0;
  double loss_dense = 0.0;
  double lr = 0.0;
};

/// AdamW training loop over the pseudo-label corpus: per iteration, pick one
/// pair, draw at most `labels_per_pair_per_iter` of its labels without
/// replacement, and step on the summed sparse + dense loss. Fully seeded:
/// the same seed gives bit-identical parameters and trace.
inline std::vector<TrainRecord> train_adapter(
    AdapterNet& net, const std::vector<AdapterPair>& corpus,
    const TrainConfig& cfg) {
  validate_train_config(cfg);
  require(!corpus.empty(), "train_adapter: empty corpus");
  for (const auto& pair : corpus) {
    require(!pair.src_cells.empty() &&
                pair.src_cells.size() == pair.tgt_cells.size(),
            "train_adapter: every pair needs aligned labels");
    require(pair.src_map.cols() == net.in_dim() &&
                pair.tgt_map.cols() == net.in_dim(),
            "train_adapter: feature width does not match the network");
    require(pair.src_map.rows() ==
                    static_cast<Eigen::Index>(pair.src_h) * pair.src_w &&
                pair.tgt_map.rows() ==
                    static_cast<Eigen::Index>(pair.tgt_h) * pair.tgt_w,
            "train_adapter: feature map does not match its grid");
    for (const auto& cell : pair.src_cells)
      require(cell[0] >= 0 && cell[0] < pair.src_h && cell[1] >= 0 &&
                  cell[1] < pair.src_w,
              "train_adapter: source label outside the grid");
    for (const auto& cell : pair.tgt_cells)
      require(cell[0] >= 0 && cell[0] < pair.tgt_h && cell[1] >= 0 &&
                  cell[1] < pair.tgt_w,
              "train_adapter: target label outside the grid");
  }

  auto rng = make_rng(cfg.seed, "adapter_train");
  Eigen::ArrayXd params = pack_params(net);
  AdamState state(params.size());
  std::vector<TrainRecord> trace;
  trace.reserve(static_cast<size_t>(cfg.iterations));
  std::vector<size_t> order;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double lr = one_cycle_lr(cfg, iter);
    std::uniform_int_distribution<size_t> upair(0, corpus.size() - 1);
    const AdapterPair& pair = corpus[upair(rng)];

    const size_t available = pair.src_cells.size();
    const size_t take = std::min(
        static_cast<size_t>(cfg.labels_per_pair_per_iter), available);
    order.resize(available);
    for (size_t i = 0; i < available; ++i) order[i] = i;
    // partial Fisher-Yates: the first `take` entries are a uniform
    // without-replacement sample
    for (size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<size_t> pick(i, available - 1);
      std::swap(order[i], order[pick(rng)]);
    }

    Eigen::MatrixXd src_batch(static_cast<Eigen::Index>(take), net.in_dim());
    std::vector<std::array<int, 2>> tgt_batch(take);
    for (size_t i = 0; i < take; ++i) {
      const auto& sc = pair.src_cells[order[i]];
      src_batch.row(static_cast<Eigen::Index>(i)) =
          pair.src_map.row(static_cast<Eigen::Index>(sc[0]) * pair.src_w +
                           sc[1]);
      tgt_batch[i] = pair.tgt_cells[order[i]];
    }

    AdapterGrads grads = zero_grads(net);
    double loss_sparse = 0.0;
    if (take >= 2) {
      Eigen::MatrixXd tgt_feats(static_cast<Eigen::Index>(take),
                                net.in_dim());
      for (size_t i = 0; i < take; ++i)
        tgt_feats.row(static_cast<Eigen::Index>(i)) = pair.tgt_map.row(
            static_cast<Eigen::Index>(tgt_batch[i][0]) * pair.tgt_w +
            tgt_batch[i][1]);
      loss_sparse = sparse_contrastive_loss(net, src_batch, tgt_feats,
                                            cfg.tau_c, &grads);
    }
    const double loss_dense =
        dense_loss(net, src_batch, tgt_batch, pair.tgt_map, pair.tgt_h,
                   pair.tgt_w, cfg.dense, rng, &grads);

    adamw_step(params, pack_grads(net, grads), state, lr, cfg.weight_decay);
    unpack_params(net, params);
    trace.push_back({iter + 1, loss_sparse, loss_dense, lr});
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Checkpoint and trace I/O
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(in), std::string("adapter checkpoint: truncated ") + what);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kAdapterCheckpointVersion = 1;

/// Binary checkpoint: magic "GCAD", version, layer dims, float32 parameters
/// in pack order (per layer: weights row-major, then biases).
inline void save_adapter(const std::string& path, const AdapterNet& net) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out),
          "save_adapter: cannot open '" + path + "' for writing");
  out.write("GCAD", 4);
  detail::put_u32(out, kAdapterCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.dims.size()));
  for (int d : net.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
  const Eigen::ArrayXd flat = pack_params(net);
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const float f = static_cast<float>(flat[i]);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  require(static_cast<bool>(out), "save_adapter: write failed");
}

inline AdapterNet load_adapter(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "load_adapter: cannot open '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  require(static_cast<bool>(in) && std::memcmp(magic, "GCAD", 4) == 0,
          "load_adapter: not an adapter checkpoint");
  const std::uint32_t version = detail::get_u32(in, "version");
  require(version == kAdapterCheckpointVersion,
          "load_adapter: unsupported checkpoint version");
  const std::uint32_t ndims = detail::get_u32(in, "dimension count");
  require(ndims == kAdapterLayers + 1,
          "load_adapter: unexpected layer structure");
  AdapterNet net;
  net.dims.resize(ndims);
  for (auto& d : net.dims) {
    d = static_cast<int>(detail::get_u32(in, "layer dimension"));
    require(d >= 1 && d <= (1 << 20), "load_adapter: implausible dimension");
  }
  net.W.resize(kAdapterLayers);
  net.b.resize(kAdapterLayers);
  for (int l = 0; l < kAdapterLayers; ++l) {
    net.W[static_cast<size_t>(l)].resize(net.dims[static_cast<size_t>(l) + 1],
                                         net.dims[static_cast<size_t>(l)]);
    net.b[static_cast<size_t>(l)] =
        Eigen::VectorXd::Zero(net.dims[static_cast<size_t>(l) + 1]);
  }
  Eigen::ArrayXd flat(param_count(net));
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), sizeof f);
    require(static_cast<bool>(in), "load_adapter: truncated parameters");
    flat[i] = static_cast<double>(f);
  }
  unpack_params(net, flat);
  return net;
}

/// Metric trace as CSV: iter, loss_sparse, loss_dense, lr.
inline void save_trace_csv(const std::string& path,
                           const std::vector<TrainRecord>& trace) {
  std::ofstream out(path);
  require(static_cast<bool>(out),
          "save_trace_csv: cannot open '" + path + "' for writing");
  out << "iter,loss_sparse,loss_dense,lr\n";
  out.precision(17);
  for (const auto& rec : trace)
    out << rec.iter << ',' << rec.loss_sparse << ',' << rec.loss_dense << ','
        << rec.lr << '\n';
  require(static_cast<bool>(out), "save_trace_csv: write failed");
}

}  // namespace geocorr
