#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "softmine/trainer.hpp"
#include "support.hpp"

using namespace softmine;

namespace {

TrainConfig small_config(SamplerKind kind) {
  TrainConfig c;
  c.iterations = 40;
  c.batch_size = 64;
  c.eval_every = 10;
  c.sampler = kind;
  c.encoding = EncodingConfig{2, 4, 2.0, 2};
  c.hidden_width = 16;
  c.seed = 5;
  return c;
}

double mean_psnr_at(const ImageField& img, TrainConfig cfg, std::int64_t at, int seeds) {
  cfg.iterations = at;
  cfg.eval_every = at;
  double s = 0.0;
  for (int k = 0; k < seeds; ++k) {
    cfg.seed = static_cast<std::uint64_t>(k);
    s += train(img, cfg).records.back().full_psnr;
  }
  return s / seeds;
}

}  // namespace

TEST_CASE("uniform sampling with alpha 0 is plain minibatch MSE, bit for bit") {
  const ImageField img = testsupport::gradient_image(16, 12);
  TrainConfig cfg = small_config(SamplerKind::Uniform);
  cfg.mining.alpha_target = 0.0;
  cfg.lr_milestones = {15, 30};
  const RunResult run = train(img, cfg);

  // Hand-written loop on the same batches.
  const FieldLayout layout = FieldLayout::make(cfg.encoding, 3, cfg.hidden_width);
  FieldParams p = init_params(layout, cfg.seed);
  AdamState adam(layout.total);
  const std::size_t n = cfg.batch_size;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> losses;
  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    CounterRng rng(stream_key(cfg.seed, Stream::UniformBatch), static_cast<std::uint64_t>(it));
    const std::vector<Coord> xs = uniform_coords(n, rng);
    const ForwardResult fwd = forward(p, xs);
    RowMatrix d(static_cast<Eigen::Index>(n), 3);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 3> gt{};
      sample_bilinear(img, xs[i], gt);
      double e = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double r = fwd.preds(static_cast<Eigen::Index>(i), c) - gt[c];
        e += r * r;
        d(static_cast<Eigen::Index>(i), c) = 2.0 * r * inv_n;
      }
      total += e;
    }
    losses.push_back(total * inv_n);
    const std::vector<double> g = backward_params(p, fwd.tape, d);
    adam_step(p, adam, g, lr_at(cfg.base_lr, it, cfg.lr_milestones, cfg.lr_factor));
  }

  CHECK(run.params.values == p.values);
  REQUIRE(run.records.size() == 4);
  for (const auto& r : run.records) {
    CHECK(r.alpha_effective == 0.0);
    CHECK(r.train_loss == losses[static_cast<std::size_t>(r.iteration - 1)]);
  }
}

TEST_CASE("same seed and config give identical record streams") {
  const ImageField img = testsupport::gradient_image(16, 16);
  for (SamplerKind kind : {SamplerKind::Uniform, SamplerKind::Lmc, SamplerKind::Multinomial}) {
    CAPTURE(to_string(kind));
    const TrainConfig cfg = small_config(kind);
    const RunResult a = train(img, cfg);
    const RunResult b = train(img, cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].iteration == b.records[i].iteration);
      CHECK(a.records[i].train_loss == b.records[i].train_loss);
      CHECK(a.records[i].full_psnr == b.records[i].full_psnr);
      CHECK(a.records[i].alpha_effective == b.records[i].alpha_effective);
    }
    CHECK(a.params.values == b.params.values);
    std::ostringstream ca, cb;
    write_convergence_csv(ca, a.records, false);
    write_convergence_csv(cb, b.records, false);
    CHECK(ca.str() == cb.str());

    TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    CHECK(train(img, other).params.values != a.params.values);
  }
}

TEST_CASE("evaluation cadence: multiples of eval_every plus the final iteration") {
  const ImageField img = testsupport::gradient_image(8, 8);
  TrainConfig cfg = small_config(SamplerKind::Lmc);
  cfg.iterations = 25;
  const RunResult r = train(img, cfg);
  REQUIRE(r.records.size() == 3);
  CHECK(r.records[0].iteration == 10);
  CHECK(r.records[1].iteration == 20);
  CHECK(r.records[2].iteration == 25);
  CHECK(r.records[2].alpha_effective == doctest::Approx(0.6 * 24 / 1000.0));
}

TEST_CASE("alpha_effective follows the warm-up for mining samplers only") {
  const ImageField img = testsupport::gradient_image(8, 8);
  TrainConfig cfg = small_config(SamplerKind::Multinomial);
  cfg.mining.warmup_iters = 20;
  const RunResult r = train(img, cfg);
  CHECK(r.records[0].alpha_effective == doctest::Approx(0.6 * 9 / 20.0));
  CHECK(r.records.back().alpha_effective == doctest::Approx(0.6));
  cfg.sampler = SamplerKind::Uniform;
  for (const auto& rec : train(img, cfg).records) CHECK(rec.alpha_effective == 0.0);
}

TEST_CASE("train config validation") {
  const ImageField img = testsupport::gradient_image(8, 8);
  TrainConfig cfg = small_config(SamplerKind::Uniform);
  cfg.iterations = 0;
  CHECK_THROWS(train(img, cfg));
  cfg = small_config(SamplerKind::Uniform);
  cfg.batch_size = 0;
  CHECK_THROWS(train(img, cfg));
  cfg = small_config(SamplerKind::Uniform);
  cfg.eval_every = 0;
  CHECK_THROWS(train(img, cfg));
}

TEST_CASE("non-finite loss aborts with a snapshot") {
  const ImageField img = testsupport::gradient_image(8, 8);
  TrainConfig cfg = small_config(SamplerKind::Uniform);
  cfg.base_lr = 1e300;
  cfg.iterations = 200;
  try {
    (void)train(img, cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.iteration() >= 0);
    CHECK(e.iteration() < 200);
    CHECK_FALSE(e.snapshot().empty());
  }
}

TEST_CASE("evaluate_full agrees with an independent psnr") {
  const ImageField img = testsupport::gradient_image(20, 14);
  const FieldParams p = init_params(FieldLayout::make(EncodingConfig{2, 4, 2.0, 2}, 3, 16), 3);
  const Evaluation e = evaluate_full(p, img);
  REQUIRE(e.render.width == 20);
  REQUIRE(e.render.height == 14);
  CHECK(e.error_map.size() == 20u * 14u);
  CHECK(e.psnr == doctest::Approx(psnr(e.render, img)).epsilon(1e-12));

  // Pixel-center renders, and the squared-error map, recomputed by hand.
  double sum = 0.0;
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 20; ++x) {
      const RowMatrix one = render(p, std::vector<Coord>{{(x + 0.5) / 20.0, (y + 0.5) / 14.0}});
      double err = 0.0;
      for (int c = 0; c < 3; ++c) {
        CHECK(e.render.at(x, y, c) == doctest::Approx(one(0, c)).epsilon(1e-12));
        err += (one(0, c) - img.at(x, y, c)) * (one(0, c) - img.at(x, y, c));
      }
      CHECK(e.error_map[static_cast<std::size_t>(y) * 20 + x] == doctest::Approx(err).epsilon(1e-10));
      sum += err;
    }
  CHECK(e.psnr == doctest::Approx(10.0 * std::log10(1.0 / (sum / (20.0 * 14.0 * 3.0)))).epsilon(1e-10));
}

TEST_CASE("a field reproducing the image exactly scores +infinity") {
  const FieldParams p = init_params(FieldLayout::make(EncodingConfig{2, 4, 2.0, 2}, 3, 16), 8);
  const ImageField exact = render_image(p, 9, 7);
  const Evaluation e = evaluate_full(p, exact);
  CHECK(e.psnr == std::numeric_limits<double>::infinity());
  for (double v : e.error_map) CHECK(v == 0.0);
  CHECK_THROWS(evaluate_full(p, testsupport::random_image(4, 4, 1, 1)));
}

TEST_CASE("iterations_to_target") {
  const std::vector<ConvergenceRecord> recs{{100, 0.1, 20.0, 0, 0}, {200, 0.05, 36.0, 0, 0}, {300, 0.04, 34.0, 0, 0}};
  CHECK(iterations_to_target(recs, 35.0) == 200);
  CHECK(iterations_to_target(recs, 10.0) == 100);
  CHECK(iterations_to_target(recs, 36.0) == 200);
  CHECK_FALSE(iterations_to_target(recs, 40.0).has_value());
  CHECK_FALSE(iterations_to_target({}, 1.0).has_value());
}

TEST_CASE("convergence csv layout") {
  const std::vector<ConvergenceRecord> recs{{100, 0.0123456789, 21.5, 1.25, 0.06}, {200, 1e-5, 30.0, 2.5, 0.12}};
  std::ostringstream with, without;
  write_convergence_csv(with, recs, true);
  write_convergence_csv(without, recs, false);
  CHECK(with.str() ==
        "iteration,train_loss,psnr_db,elapsed_s,alpha_effective\n"
        "100,0.0123456789,21.500000,1.250,0.060000\n"
        "200,1e-05,30.000000,2.500,0.120000\n");
  CHECK(without.str() ==
        "iteration,train_loss,psnr_db,elapsed_s,alpha_effective\n"
        "100,0.0123456789,21.500000,0.000,0.060000\n"
        "200,1e-05,30.000000,0.000,0.120000\n");
}

TEST_CASE("target_psnr fills iterations_to_target") {
  const ImageField img = testsupport::gradient_image(16, 16);
  TrainConfig cfg = small_config(SamplerKind::Uniform);
  cfg.target_psnr = -1.0;
  CHECK(train(img, cfg).iterations_to_target == 10);
  cfg.target_psnr = 1000.0;
  CHECK_FALSE(train(img, cfg).iterations_to_target.has_value());
}

TEST_CASE("64x64 gradient image: psnr strictly increases after iteration 200 in most seeds") {
  const ImageField img = testsupport::gradient_image(64, 64);
  TrainConfig cfg;
  cfg.sampler = SamplerKind::Uniform;
  cfg.iterations = 2000;
  int increasing = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    cfg.seed = seed;
    const RunResult r = train(img, cfg);
    bool ok = true;
    for (std::size_t i = 1; i < r.records.size(); ++i)
      if (r.records[i - 1].iteration >= 200 && !(r.records[i].full_psnr > r.records[i - 1].full_psnr)) ok = false;
    MESSAGE("seed " << seed << " final " << r.records.back().full_psnr << " dB, increasing=" << ok);
    increasing += ok ? 1 : 0;
  }
  CHECK(increasing >= 2);
}

TEST_CASE("64x64 photograph reaches 35 dB within 5000 uniform iterations") {
  const ImageField img = load_image(testsupport::asset("astronaut_64.png"));
  TrainConfig cfg;
  cfg.sampler = SamplerKind::Uniform;
  cfg.iterations = 5000;
  cfg.target_psnr = 35.0;
  const RunResult r = train(img, cfg);
  REQUIRE(r.iterations_to_target.has_value());
  CHECK(*r.iterations_to_target <= 5000);
}

TEST_CASE("standard image orderings at iteration 1000, 3 seeds") {
  const ImageField img = load_image(testsupport::asset("astronaut_256.png"));
  TrainConfig soft;
  TrainConfig uniform;
  uniform.sampler = SamplerKind::Uniform;
  TrainConfig bare = soft;
  bare.lmc.uniform_frac = 0.0;
  bare.lmc.reinit_frac = 0.0;
  const double p_soft = mean_psnr_at(img, soft, 1000, 3);
  const double p_uniform = mean_psnr_at(img, uniform, 1000, 3);
  const double p_bare = mean_psnr_at(img, bare, 1000, 3);
  MESSAGE("soft " << p_soft << " uniform " << p_uniform << " no-uniform-no-reinit " << p_bare);
  CHECK(p_soft > p_uniform);
  CHECK(p_bare <= p_soft);
}
