#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "softmine/mining.hpp"

using namespace softmine;

namespace {

MinedBatch batch_of(std::vector<double> targets, std::vector<double> weights, int channels, std::int64_t it = 0) {
  MinedBatch b;
  b.iteration = it;
  b.channels = channels;
  const std::size_t n = targets.size() / channels;
  b.coords.assign(n, Coord{0.5, 0.5});
  b.targets = std::move(targets);
  b.weights = std::move(weights);
  b.q_detached.assign(n, 0.0);
  b.provenance.assign(n, Provenance::Lmc);
  return b;
}

}  // namespace

TEST_CASE("err_sq and q_l1 by hand") {
  const std::vector<double> gt{0.5, 0.5, 0.5};
  const std::vector<double> pred{0.6, 0.3, 0.7};
  CHECK(err_sq(pred, gt) == doctest::Approx(0.01 + 0.04 + 0.04));
  CHECK(q_l1(pred, gt) == doctest::Approx(0.1 + 0.2 + 0.2));
  CHECK(err_sq(gt, gt) == 0.0);
  CHECK(q_l1(gt, gt) == 0.0);
  CHECK(err_sq(std::vector<double>{1.0}, std::vector<double>{0.5}) == doctest::Approx(0.25));
  CHECK_THROWS(err_sq(pred, std::vector<double>{0.1}));
  CHECK_THROWS(q_l1(pred, std::vector<double>{0.1}));
}

TEST_CASE("l1 dominates l2") {
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a{std::sin(i * 1.3), std::cos(i * 0.7), std::sin(i * 2.9)}, z(3, 0.0);
    CHECK(q_l1(a, z) >= std::sqrt(err_sq(a, z)) - 1e-15);
  }
}

TEST_CASE("alpha warm-up") {
  MiningConfig cfg;
  CHECK(alpha_at(cfg, 0) == 0.0);
  CHECK(alpha_at(cfg, 500) == doctest::Approx(0.3));
  CHECK(alpha_at(cfg, 1000) == doctest::Approx(0.6));
  CHECK(alpha_at(cfg, 50000) == doctest::Approx(0.6));
  cfg.warmup_iters = 0;
  CHECK(alpha_at(cfg, 0) == doctest::Approx(0.6));
}

TEST_CASE("mining config validation") {
  MiningConfig c;
  c.alpha_target = 1.5;
  CHECK_THROWS(c.validate());
  c = {};
  c.eps_q = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.warmup_iters = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("soft_weight") {
  CHECK(soft_weight(0.123, 0.0, 1e-8) == 1.0);
  CHECK(soft_weight(0.0, 0.0, 1e-8) == 1.0);
  CHECK(soft_weight(0.5, 0.6, 1e-8) == doctest::Approx(std::pow(0.5, -0.6)).epsilon(1e-7));
  CHECK(soft_weight(0.5, 0.6, 1e-8) == doctest::Approx(1.5157).epsilon(1e-4));
  CHECK(soft_weight(0.0, 1.0, 1e-8) == doctest::Approx(1e8));
  double prev = soft_weight(0.0, 0.6, 1e-8);
  for (int i = 1; i < 100; ++i) {
    const double w = soft_weight(i * 0.01, 0.6, 1e-8);
    CHECK(w <= prev);
    prev = w;
  }
}

TEST_CASE("weighted loss: unit weights give the plain mean") {
  MinedBatch b = batch_of({0.0, 0.0, 1.0, 1.0}, {1.0, 1.0}, 2);
  RowMatrix preds(2, 2);
  preds << 0.1, -0.2, 0.7, 1.0;
  const auto r = weighted_loss(b, preds, 0);
  CHECK(r.loss == doctest::Approx((0.01 + 0.04 + 0.09 + 0.0) / 2));
  CHECK(r.d_pred(0, 1) == doctest::Approx(2 * -0.2 / 2));
  CHECK(r.d_pred(1, 0) == doctest::Approx(2 * -0.3 / 2));
}

TEST_CASE("weighted loss: single sample with alpha 0.6") {
  const double w = soft_weight(0.5, 0.6, 1e-8);
  MinedBatch b = batch_of({0.0}, {w}, 1);
  RowMatrix preds(1, 1);
  preds << 0.5;
  const auto r = weighted_loss(b, preds, 0);
  CHECK(r.loss == doctest::Approx(0.25 / std::pow(0.5, 0.6)).epsilon(1e-7));
  CHECK(r.loss == doctest::Approx(0.3789).epsilon(1e-4));
  CHECK(r.d_pred(0, 0) == doctest::Approx(w * 2 * 0.5));
}

TEST_CASE("weighted loss is linear in the weights") {
  MinedBatch b = batch_of({0.2, 0.4, 0.9}, {0.7, 1.3, 2.1}, 1);
  RowMatrix preds(3, 1);
  preds << 0.3, 0.1, 0.5;
  const auto r1 = weighted_loss(b, preds, 0);
  for (double& w : b.weights) w *= 2.0;
  const auto r2 = weighted_loss(b, preds, 0);
  CHECK(r2.loss == 2.0 * r1.loss);
  CHECK(r2.d_pred == 2.0 * r1.d_pred);
}

TEST_CASE("weighted loss refuses weights from another iteration") {
  MinedBatch b = batch_of({0.2}, {1.0}, 1, 4);
  RowMatrix preds(1, 1);
  preds << 0.3;
  CHECK_NOTHROW(weighted_loss(b, preds, 4));
  CHECK_THROWS_AS(weighted_loss(b, preds, 5), StaleWeightsError);
  RowMatrix wrong(2, 1);
  wrong << 0.1, 0.2;
  CHECK_THROWS(weighted_loss(b, wrong, 4));
}

TEST_CASE("stop-gradient: parameter gradient equals frozen-weight finite differences") {
  FieldLayout l = FieldLayout::make(EncodingConfig{1, 3, 2.0, 2}, 3, 4);
  FieldParams p = init_params(l, 3);
  for (std::size_t i = 0; i < l.grid_values(); ++i) p.values[i] = 0.3 * std::sin(1.7 * i + 0.2);
  const std::vector<Coord> xs{{0.1, 0.2}, {0.6, 0.8}, {0.35, 0.55}};
  const std::vector<double> targets{0.2, 0.5, 0.9, 0.1, 0.4, 0.3, 0.8, 0.8, 0.2};
  const double alpha = 0.6, eps = 1e-8;

  const auto fwd = forward(p, xs);
  MinedBatch b = batch_of(targets, {}, 3);
  b.coords = xs;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const std::span<const double> pr(fwd.preds.row(n).data(), 3), gt(targets.data() + n * 3, 3);
    b.q_detached[n] = q_l1(pr, gt);
    b.weights.push_back(soft_weight(b.q_detached[n], alpha, eps));
  }
  const auto loss = weighted_loss(b, fwd.preds, 0);
  const auto g = backward_params(p, fwd.tape, loss.d_pred);

  // Weights stay at their recorded values while ψ is perturbed.
  auto frozen = [&](const FieldParams& q) {
    const RowMatrix pr = render(q, xs);
    double s = 0.0;
    for (std::size_t n = 0; n < xs.size(); ++n)
      s += b.weights[n] * err_sq(std::span<const double>(pr.row(n).data(), 3), std::span<const double>(targets.data() + n * 3, 3));
    return s / xs.size();
  };
  // Letting the weights follow ψ gives a different derivative.
  auto live = [&](const FieldParams& q) {
    const RowMatrix pr = render(q, xs);
    double s = 0.0;
    for (std::size_t n = 0; n < xs.size(); ++n) {
      const std::span<const double> a(pr.row(n).data(), 3), t(targets.data() + n * 3, 3);
      s += soft_weight(q_l1(a, t), alpha, eps) * err_sq(a, t);
    }
    return s / xs.size();
  };
  double max_live_gap = 0.0;
  for (std::size_t i = l.w3; i < l.total; ++i) {
    const double h = 1e-6;
    FieldParams a = p, c = p;
    a.values[i] += h;
    c.values[i] -= h;
    const double fd = (frozen(a) - frozen(c)) / (2 * h);
    CHECK(std::abs(g[i] - fd) <= std::max(1e-6, 1e-3 * std::abs(fd)));
    max_live_gap = std::max(max_live_gap, std::abs(g[i] - (live(a) - live(c)) / (2 * h)));
  }
  CHECK(max_live_gap > 1e-4);
}
