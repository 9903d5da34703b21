#include "geocorr/adapter.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

using namespace geocorr;

namespace {

Eigen::MatrixXd random_rows(int n, int d, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = gauss(rng);
  return m;
}

// central finite differences over every parameter of the net
template <typename LossFn>
void check_param_gradients(AdapterNet& net, const AdapterGrads& grads,
                           LossFn&& loss_of_params, double tol) {
  const Eigen::ArrayXd analytic = pack_grads(net, grads);
  Eigen::ArrayXd params = pack_params(net);
  const double h = 1e-5;
  int checked = 0;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    Eigen::ArrayXd plus = params, minus = params;
    plus[k] += h;
    minus[k] -= h;
    const double fd = (loss_of_params(plus) - loss_of_params(minus)) / (2 * h);
    if (std::abs(analytic[k]) < 1e-10 && std::abs(fd) < 1e-10) continue;
    INFO("parameter " << k);
    REQUIRE(oracle::rel_err(analytic[k], fd) <= tol);
    ++checked;
  }
  REQUIRE(checked > 0);
}

}  // namespace

TEST_CASE("adapter forward pass") {
  auto net = make_adapter(6, 5, 8, 3);

  SECTION("reported parameter count") {
    CHECK(param_count(net) == (6 * 8 + 8) + (8 * 8 + 8) * 2 + (8 * 5 + 5));
  }
  SECTION("outputs are unit vectors") {
    auto rng = make_rng(1, "fwd", 0);
    for (int i = 0; i < 20; ++i) {
      Eigen::VectorXd x = random_rows(1, 6, rng).row(0).transpose();
      CHECK(std::abs(forward(net, x).norm() - 1.0) <= 1e-6);
    }
  }
  SECTION("batch equals independent single passes exactly") {
    auto rng = make_rng(2, "fwd", 0);
    const Eigen::MatrixXd X = random_rows(7, 6, rng);
    const Eigen::MatrixXd Y = forward_batch(net, X);
    for (int i = 0; i < 7; ++i)
      CHECK((Y.row(i).transpose() - forward(net, X.row(i).transpose()))
                .norm() == 0.0);
  }
  SECTION("identical inputs give identical outputs") {
    Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
    CHECK((forward(net, x) - forward(net, x)).norm() == 0.0);
  }
  SECTION("zeroed final weights make the output a function of the bias only") {
    net.W[3].setZero();
    net.b[3] = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
    const Eigen::VectorXd want = net.b[3] / net.b[3].norm();
    auto rng = make_rng(3, "fwd", 0);
    for (int i = 0; i < 5; ++i) {
      Eigen::VectorXd x = random_rows(1, 6, rng).row(0).transpose();
      CHECK((forward(net, x) - want).norm() <= 1e-15);
    }
  }
  SECTION("input dimension mismatch is an error") {
    CHECK_THROWS_AS(forward(net, Eigen::VectorXd::Zero(7)), Error);
  }
}

TEST_CASE("sparse contrastive loss values") {
  // freshly initialized nets have zero biases, so the refinement is an odd
  // function: feeding x and -x yields exactly opposite unit features
  auto net = make_adapter(4, 3, 6, 11);
  auto rng = make_rng(4, "sparse", 0);
  const Eigen::VectorXd x0 = random_rows(1, 4, rng).row(0).transpose();

  SECTION("one positive at similarity 1, one negative at -1") {
    Eigen::MatrixXd src(2, 4), tgt(2, 4);
    src.row(0) = x0.transpose();
    src.row(1) = -x0.transpose();
    tgt = src;
    const double loss = sparse_contrastive_loss(net, src, tgt, 0.07);
    CHECK(std::abs(loss) <= 1e-9);
  }
  SECTION("all similarities equal gives log K") {
    for (int K : {2, 3, 5}) {
      Eigen::MatrixXd src(K, 4);
      for (int i = 0; i < K; ++i) src.row(i) = x0.transpose();
      const double loss = sparse_contrastive_loss(net, src, src, 0.07);
      CHECK(loss == Catch::Approx(std::log(double(K))).margin(1e-12));
    }
  }
  SECTION("batch size and temperature preconditions") {
    Eigen::MatrixXd one = x0.transpose();
    CHECK_THROWS_AS(sparse_contrastive_loss(net, one, one, 0.07), Error);
    Eigen::MatrixXd two(2, 4);
    two << x0.transpose(), x0.transpose();
    CHECK_THROWS_AS(sparse_contrastive_loss(net, two, two, 0.0), Error);
    CHECK_THROWS_AS(
        sparse_contrastive_loss(net, two, Eigen::MatrixXd::Zero(3, 4), 0.07),
        Error);
  }
}

TEST_CASE("sparse contrastive gradients match finite differences") {
  auto net = make_adapter(4, 3, 5, 21);
  auto rng = make_rng(5, "sparse_fd", 0);
  const Eigen::MatrixXd src = random_rows(6, 4, rng);
  const Eigen::MatrixXd tgt = random_rows(6, 4, rng);

  AdapterGrads grads = zero_grads(net);
  sparse_contrastive_loss(net, src, tgt, 0.07, &grads);
  check_param_gradients(net, grads, [&](const Eigen::ArrayXd& p) {
    AdapterNet probe = net;
    unpack_params(probe, p);
    return sparse_contrastive_loss(probe, src, tgt, 0.07);
  }, 1e-4);
}

TEST_CASE("dense loss values") {
  auto net = make_adapter(4, 3, 6, 31);  // zero biases: odd refinement
  auto rng = make_rng(6, "dense", 0);
  const Eigen::VectorXd x0 = random_rows(1, 4, rng).row(0).transpose();

  SECTION("one-hot similarity at the labeled cell gives zero loss") {
    const int gh = 6, gw = 7;
    Eigen::MatrixXd tgt_map(gh * gw, 4);
    for (int g = 0; g < gh * gw; ++g) tgt_map.row(g) = -x0.transpose();
    tgt_map.row(2 * gw + 3) = x0.transpose();
    Eigen::MatrixXd src = x0.transpose();
    DenseLossConfig cfg;
    cfg.window = 3;
    cfg.sigma_eps = 0.0;
    auto r = make_rng(0, "noise", 0);
    std::vector<Vec2> preds;
    const double loss =
        dense_loss(net, src, {{2, 3}}, tgt_map, gh, gw, cfg, r, nullptr,
                   &preds);
    CHECK(loss <= 1e-9);
    CHECK((preds[0] - Vec2(2, 3)).norm() <= 1e-9);
  }
  SECTION("equal peaks symmetric about the window center balance out") {
    const int gh = 1, gw = 9;
    const Eigen::VectorXd y0 = random_rows(1, 4, rng).row(0).transpose();
    const Eigen::VectorXd z0 = random_rows(1, 4, rng).row(0).transpose();
    Eigen::MatrixXd tgt_map(gw, 4);
    for (int g = 0; g < gw; ++g) tgt_map.row(g) = -x0.transpose();
    tgt_map.row(4) = x0.transpose();   // similarity 1: the hard argmax
    tgt_map.row(3) = y0.transpose();   // equal flanks, one cell out
    tgt_map.row(5) = y0.transpose();
    tgt_map.row(2) = z0.transpose();   // equal flanks, two cells out
    tgt_map.row(6) = z0.transpose();
    Eigen::MatrixXd src = x0.transpose();
    DenseLossConfig cfg;
    cfg.window = 5;
    cfg.sigma_eps = 0.0;
    auto r = make_rng(0, "noise", 0);
    std::vector<Vec2> preds;
    dense_loss(net, src, {{0, 4}}, tgt_map, gh, gw, cfg, r, nullptr, &preds);
    CHECK(preds[0].x() == Catch::Approx(0.0).margin(1e-12));
    CHECK(preds[0].y() == Catch::Approx(4.0).margin(1e-12));
  }
  SECTION("windows at the border are clamped inside the grid") {
    const int gh = 5, gw = 5;
    Eigen::MatrixXd tgt_map(gh * gw, 4);
    for (int g = 0; g < gh * gw; ++g) tgt_map.row(g) = -x0.transpose();
    tgt_map.row(0) = x0.transpose();  // peak in the corner
    Eigen::MatrixXd src = x0.transpose();
    DenseLossConfig cfg;
    cfg.window = 3;
    cfg.sigma_eps = 0.0;
    auto r = make_rng(0, "noise", 0);
    std::vector<Vec2> preds;
    const double loss =
        dense_loss(net, src, {{0, 0}}, tgt_map, gh, gw, cfg, r, nullptr,
                   &preds);
    CHECK(loss <= 1e-9);
    CHECK(preds[0].x() >= 0.0);
    CHECK(preds[0].y() >= 0.0);
  }
  SECTION("label outside the grid is an error") {
    Eigen::MatrixXd tgt_map = random_rows(6, 4, rng);
    Eigen::MatrixXd src = x0.transpose();
    DenseLossConfig cfg;
    auto r = make_rng(0, "noise", 0);
    CHECK_THROWS_AS(
        dense_loss(net, src, {{3, 0}}, tgt_map, 2, 3, cfg, r), Error);
  }
}

TEST_CASE("dense loss gradients match finite differences") {
  auto net = make_adapter(4, 3, 5, 41);
  auto rng = make_rng(7, "dense_fd", 0);
  const int gh = 5, gw = 6;
  const Eigen::MatrixXd tgt_map = random_rows(gh * gw, 4, rng);
  const Eigen::MatrixXd src = random_rows(4, 4, rng);
  const std::vector<std::array<int, 2>> cells = {
      {1, 2}, {0, 0}, {4, 5}, {2, 3}};
  DenseLossConfig cfg;
  cfg.window = 3;
  cfg.sigma_eps = 0.5;

  const auto eval = [&](const AdapterNet& probe) {
    auto noise = make_rng(99, "fd_noise", 0);  // same jitter every evaluation
    return dense_loss(probe, src, cells, tgt_map, gh, gw, cfg, noise);
  };
  AdapterGrads grads = zero_grads(net);
  {
    auto noise = make_rng(99, "fd_noise", 0);
    dense_loss(net, src, cells, tgt_map, gh, gw, cfg, noise, &grads);
  }
  check_param_gradients(net, grads, [&](const Eigen::ArrayXd& p) {
    AdapterNet probe = net;
    unpack_params(probe, p);
    return eval(probe);
  }, 1e-4);
}

namespace {

// tiny learnable corpus: identical maps, identity correspondence
std::vector<AdapterPair> toy_corpus(int pairs, int gh, int gw, int d,
                                    uint64_t seed) {
  std::vector<AdapterPair> corpus;
  for (int p = 0; p < pairs; ++p) {
    auto rng = make_rng(seed, "toy_corpus", static_cast<uint64_t>(p));
    AdapterPair pair;
    pair.src_h = pair.tgt_h = gh;
    pair.src_w = pair.tgt_w = gw;
    pair.src_map = random_rows(gh * gw, d, rng);
    pair.tgt_map = pair.src_map;
    for (int r = 0; r < gh; ++r)
      for (int c = 0; c < gw; ++c) {
        pair.src_cells.push_back({r, c});
        pair.tgt_cells.push_back({r, c});
      }
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

}  // namespace

TEST_CASE("training loop") {
  TrainConfig cfg;
  cfg.iterations = 30;
  cfg.dense.window = 3;
  cfg.seed = 5;
  const auto corpus = toy_corpus(2, 4, 5, 6, 17);

  SECTION("zero learning rate leaves parameters bit-identical") {
    auto net = make_adapter(6, 4, 8, 1);
    const Eigen::ArrayXd before = pack_params(net);
    TrainConfig frozen = cfg;
    frozen.lr = 0.0;
    train_adapter(net, corpus, frozen);
    const Eigen::ArrayXd after = pack_params(net);
    REQUIRE(before.size() == after.size());
    for (Eigen::Index i = 0; i < before.size(); ++i)
      REQUIRE(before[i] == after[i]);
  }
  SECTION("fixed seed reproduces parameters and trace bit-exactly") {
    auto net_a = make_adapter(6, 4, 8, 1);
    auto net_b = make_adapter(6, 4, 8, 1);
    const auto trace_a = train_adapter(net_a, corpus, cfg);
    const auto trace_b = train_adapter(net_b, corpus, cfg);
    const Eigen::ArrayXd pa = pack_params(net_a), pb = pack_params(net_b);
    for (Eigen::Index i = 0; i < pa.size(); ++i) REQUIRE(pa[i] == pb[i]);
    REQUIRE(trace_a.size() == trace_b.size());
    for (size_t i = 0; i < trace_a.size(); ++i) {
      REQUIRE(trace_a[i].loss_sparse == trace_b[i].loss_sparse);
      REQUIRE(trace_a[i].loss_dense == trace_b[i].loss_dense);
      REQUIRE(trace_a[i].lr == trace_b[i].lr);
    }
  }
  SECTION("loss after 200 iterations is below the first iteration") {
    auto net = make_adapter(6, 4, 8, 1);
    TrainConfig longer = cfg;
    longer.iterations = 200;
    longer.dense.sigma_eps = 0.0;  // deterministic loss for the comparison
    const auto trace = train_adapter(net, corpus, longer);
    const double first = trace.front().loss_sparse + trace.front().loss_dense;
    const double last = trace.back().loss_sparse + trace.back().loss_dense;
    CHECK(last < first);
  }
  SECTION("per-iteration label consumption is capped") {
    auto net = make_adapter(6, 4, 8, 1);
    TrainConfig capped = cfg;
    capped.labels_per_pair_per_iter = 50;
    auto big = toy_corpus(1, 9, 9, 6, 23);  // 81 labels available
    REQUIRE(big[0].src_cells.size() == 81);
    // the sparse loss of a K-point batch is at most log K; with the cap the
    // first-iteration batch has 50 points, never 81
    const auto trace = train_adapter(net, big, capped);
    CHECK(trace.front().loss_sparse <= std::log(50.0) + 1.0);
  }
  SECTION("empty corpus and bad config are errors") {
    auto net = make_adapter(6, 4, 8, 1);
    CHECK_THROWS_AS(train_adapter(net, {}, cfg), Error);
    TrainConfig bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(train_adapter(net, corpus, bad), Error);
    TrainConfig negative = cfg;
    negative.lr = -1.0;
    CHECK_THROWS_AS(train_adapter(net, corpus, negative), Error);
  }
}

TEST_CASE("one-cycle schedule shape") {
  TrainConfig cfg;
  cfg.iterations = 100;
  cfg.lr = 5e-3;
  const double floor_lr = cfg.lr / cfg.final_lr_div;

  CHECK(one_cycle_lr(cfg, 0) == Catch::Approx(floor_lr));
  CHECK(one_cycle_lr(cfg, 10) == Catch::Approx(cfg.lr));  // end of warmup
  for (int t = 1; t <= 10; ++t)
    CHECK(one_cycle_lr(cfg, t) > one_cycle_lr(cfg, t - 1));  // rising
  for (int t = 11; t < 100; ++t) {
    CHECK(one_cycle_lr(cfg, t) < one_cycle_lr(cfg, t - 1));  // falling
    CHECK(one_cycle_lr(cfg, t) >= floor_lr - 1e-15);
  }
  CHECK(one_cycle_lr(cfg, 99) ==
        Catch::Approx(floor_lr).margin(cfg.lr * 0.01));
}

TEST_CASE("checkpoint round trip") {
  auto net = make_adapter(6, 5, 8, 77);
  const std::string path = "adapter_test_checkpoint.bin";
  save_adapter(path, net);
  const AdapterNet back = load_adapter(path);

  REQUIRE(back.dims == net.dims);
  const Eigen::ArrayXd a = pack_params(net), b = pack_params(back);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    CHECK(static_cast<float>(a[i]) == static_cast<float>(b[i]));

  // a second round trip through float32 is exact
  save_adapter(path, back);
  const AdapterNet again = load_adapter(path);
  const Eigen::ArrayXd c = pack_params(again);
  for (Eigen::Index i = 0; i < b.size(); ++i) CHECK(b[i] == c[i]);

  SECTION("corrupt magic is rejected") {
    std::ofstream out(path, std::ios::binary);
    out << "BAD!";
    out.close();
    CHECK_THROWS_AS(load_adapter(path), Error);
  }
  SECTION("truncated file is rejected") {
    save_adapter(path, net);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<long>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_adapter(path), Error);
  }
  std::remove(path.c_str());
}

TEST_CASE("metric trace CSV") {
  std::vector<TrainRecord> trace = {{1, 0.5, 1.25, 5e-3}, {2, 0.25, 1.0, 4e-3}};
  const std::string path = "adapter_test_trace.csv";
  save_trace_csv(path, trace);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,loss_sparse,loss_dense,lr");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::remove(path.c_str());
}
