#include "softmine/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace softmine {

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (sampler == SamplerKind::Lmc && lmc.pool_size != 0 && lmc.pool_size < batch_size) {
    throw std::invalid_argument("train: batch larger than the walker pool is unsupported");
  }
  mining.validate();
  lmc.validate();
  encoding.validate();
}

TrainingDiverged::TrainingDiverged(std::int64_t iteration, const std::string& what, std::string snapshot)
    : std::runtime_error("training diverged at iteration " + std::to_string(iteration) + ": " + what),
      iteration_(iteration),
      snapshot_(std::move(snapshot)) {}

namespace {

constexpr std::size_t kRenderChunk = 8192;

std::vector<Coord> pixel_centers(const ImageField& img) {
  std::vector<Coord> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixel_center(i);
  return out;
}

RowMatrix render_all(const FieldParams& params, std::span<const Coord> coords) {
  RowMatrix out(static_cast<Eigen::Index>(coords.size()), params.layout.channels);
  for (std::size_t start = 0; start < coords.size(); start += kRenderChunk) {
    const std::size_t n = std::min(kRenderChunk, coords.size() - start);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = render(params, coords.subspan(start, n));
  }
  return out;
}

std::string batch_snapshot(const MinedBatch& batch, const RowMatrix& preds, double loss) {
  std::ostringstream os;
  os << "loss=" << loss << " batch_size=" << batch.size() << "\n";
  os << "index,provenance,u,v,q,weight,pred0,target0\n";
  const std::size_t shown = std::min<std::size_t>(batch.size(), 32);
  for (std::size_t i = 0; i < shown; ++i) {
    os << i << ',' << to_string(batch.provenance[i]) << ',' << batch.coords[i].u << ',' << batch.coords[i].v << ','
       << batch.q_detached[i] << ',' << batch.weights[i] << ',' << preds(static_cast<Eigen::Index>(i), 0) << ','
       << batch.targets[i * batch.channels] << '\n';
  }
  return os.str();
}

void nearest_pixel(const ImageField& img, const Coord& x, std::span<double> color) {
  const int px = std::clamp(static_cast<int>(x.u * img.width), 0, img.width - 1);
  const int py = std::clamp(static_cast<int>(x.v * img.height), 0, img.height - 1);
  for (int c = 0; c < img.channels; ++c) color[c] = img.at(px, py, c);
}

}  // namespace

ImageField render_image(const FieldParams& params, int width, int height) {
  ImageField out(width, height, params.layout.channels);
  const RowMatrix preds = render_all(params, pixel_centers(out));
  std::copy(preds.data(), preds.data() + preds.size(), out.data.begin());
  return out;
}

Evaluation evaluate_full(const FieldParams& params, const ImageField& img) {
  if (params.layout.channels != img.channels) throw std::invalid_argument("evaluate_full: channel mismatch");
  const auto centers = pixel_centers(img);
  const RowMatrix preds = render_all(params, centers);
  Evaluation e;
  e.render = ImageField(img.width, img.height, img.channels);
  e.error_map.resize(img.pixel_count());
  double total = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    double err = 0.0;
    for (int c = 0; c < img.channels; ++c) {
      const double p = preds(static_cast<Eigen::Index>(i), c);
      e.render.data[i * img.channels + c] = p;
      const double d = p - img.data[i * img.channels + c];
      err += d * d;
    }
    e.error_map[i] = err;
    total += err;
  }
  e.psnr = psnr_from_mse(total / static_cast<double>(img.data.size()));
  return e;
}

std::optional<std::int64_t> iterations_to_target(const std::vector<ConvergenceRecord>& records, double target_db) {
  for (const auto& r : records)
    if (r.full_psnr >= target_db) return r.iteration;
  return std::nullopt;
}

void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRecord>& records, bool include_wall_time) {
  os << "iteration,train_loss,psnr_db,elapsed_s,alpha_effective\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.6f,%.3f,%.6f\n", static_cast<long long>(r.iteration), r.train_loss,
                  r.full_psnr, include_wall_time ? r.elapsed_wall_seconds : 0.0, r.alpha_effective);
    os << line;
  }
}

RunResult train(const ImageField& img, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const int channels = img.channels;
  const std::size_t n = cfg.batch_size;
  const FieldLayout layout = FieldLayout::make(cfg.encoding, channels, cfg.hidden_width);
  FieldParams params = init_params(layout, cfg.seed);
  AdamState adam(layout.total);
  std::vector<double> grad(layout.total);

  const bool use_lmc = cfg.sampler == SamplerKind::Lmc;
  WalkerPool pool;
  EdgePdf edges;
  if (use_lmc) {
    pool = init_pool(cfg.lmc.pool_size == 0 ? n : cfg.lmc.pool_size, cfg.seed);
    edges = sobel_edge_pdf(img);
    if (hooks.walker_dump) write_walker_dump_header(*hooks.walker_dump);
  }
  std::vector<Coord> centers;
  if (cfg.sampler == SamplerKind::Multinomial) centers = pixel_centers(img);
  const std::uint64_t uniform_key = stream_key(cfg.seed, Stream::UniformBatch);
  const std::uint64_t multinomial_key = stream_key(cfg.seed, Stream::Multinomial);

  // Per-walker LMC inputs, reused across iterations.
  std::vector<std::array<double, 2>> grad_q(pool.size());
  std::vector<double> q_pool(pool.size());
  std::vector<std::uint8_t> active(pool.size());
  std::vector<double> gt_grad(n * channels * 2);
  std::vector<std::int64_t> walker_of(n, -1);
  RowMatrix sign_upstream;

  RunResult result;
  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    const double alpha = cfg.sampler == SamplerKind::Uniform ? 0.0 : alpha_at(cfg.mining, it);

    MinedBatch batch;
    batch.iteration = it;
    batch.channels = channels;
    std::vector<double> density;  // multinomial only
    switch (cfg.sampler) {
      case SamplerKind::Uniform: {
        CounterRng rng(uniform_key, static_cast<std::uint64_t>(it));
        batch.coords = uniform_coords(n, rng);
        batch.provenance.assign(n, Provenance::Uniform);
        std::fill(walker_of.begin(), walker_of.end(), -1);
        break;
      }
      case SamplerKind::Lmc: {
        ComposedBatch composed = compose_batch(pool, cfg.lmc, n, static_cast<std::uint64_t>(it));
        batch.coords = std::move(composed.coords);
        batch.provenance = std::move(composed.provenance);
        walker_of = std::move(composed.walker);
        break;
      }
      case SamplerKind::Multinomial: {
        CounterRng rng(multinomial_key, static_cast<std::uint64_t>(it));
        const RowMatrix all = render_all(params, centers);
        std::vector<double> q_all(centers.size());
        for (std::size_t i = 0; i < centers.size(); ++i) {
          q_all[i] = q_l1(std::span<const double>(all.row(static_cast<Eigen::Index>(i)).data(), channels), img.pixel(i));
        }
        const std::size_t m = std::min(uniform_count(n, cfg.lmc.uniform_frac), n);
        MultinomialDraw draw = multinomial_batch(q_all, img.width, img.height, n - m, rng);
        batch.coords = std::move(draw.coords);
        batch.provenance.assign(n - m, Provenance::Multinomial);
        density = std::move(draw.density);
        for (const Coord& c : uniform_coords(m, rng)) {
          batch.coords.push_back(c);
          batch.provenance.push_back(Provenance::Uniform);
        }
        break;
      }
    }

    batch.targets.resize(n * channels);
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> target(batch.targets.data() + i * channels, channels);
      if (cfg.snap_to_pixel_centers) {
        nearest_pixel(img, batch.coords[i], target);
        std::fill_n(gt_grad.begin() + static_cast<std::ptrdiff_t>(i * channels * 2), channels * 2, 0.0);
      } else if (use_lmc && walker_of[i] >= 0) {
        sample_bilinear_grad(img, batch.coords[i], target, std::span<double>(gt_grad.data() + i * channels * 2, channels * 2));
      } else {
        sample_bilinear(img, batch.coords[i], target);
      }
    }

    ForwardResult fwd = forward(params, batch.coords);

    batch.q_detached.resize(n);
    batch.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<const double> pred(fwd.preds.row(static_cast<Eigen::Index>(i)).data(), channels);
      const std::span<const double> target(batch.targets.data() + i * channels, channels);
      batch.q_detached[i] = q_l1(pred, target);
      switch (batch.provenance[i]) {
        case Provenance::Uniform: batch.weights[i] = 1.0; break;
        case Provenance::Lmc: batch.weights[i] = soft_weight(batch.q_detached[i], alpha, cfg.mining.eps_q); break;
        case Provenance::Multinomial: batch.weights[i] = soft_weight(density[i], alpha, cfg.mining.eps_q); break;
      }
    }

    const LossResult loss = weighted_loss(batch, fwd.preds, it);
    if (!std::isfinite(loss.loss)) {
      throw TrainingDiverged(it, "non-finite loss", batch_snapshot(batch, fwd.preds, loss.loss));
    }
    backward_params(params, fwd.tape, loss.d_pred, grad);

    if (use_lmc) {
      // ∇Q = Σ_c sign(r_c)·(∇f_c − ∇gt_c), evaluated at the pre-update field.
      sign_upstream.setZero(static_cast<Eigen::Index>(n), channels);
      for (std::size_t i = 0; i < n; ++i) {
        if (walker_of[i] < 0) continue;
        for (int c = 0; c < channels; ++c) {
          const double r = fwd.preds(static_cast<Eigen::Index>(i), c) - batch.targets[i * channels + c];
          sign_upstream(static_cast<Eigen::Index>(i), c) = static_cast<double>((r > 0.0) - (r < 0.0));
        }
      }
      const auto field_grad = backward_coords(params, fwd.tape, sign_upstream);
      std::fill(active.begin(), active.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (walker_of[i] < 0) continue;
        const auto w = static_cast<std::size_t>(walker_of[i]);
        double gu = field_grad[i][0];
        double gv = field_grad[i][1];
        for (int c = 0; c < channels; ++c) {
          const double s = sign_upstream(static_cast<Eigen::Index>(i), c);
          gu -= s * gt_grad[(i * channels + c) * 2];
          gv -= s * gt_grad[(i * channels + c) * 2 + 1];
        }
        grad_q[w] = {gu, gv};
        q_pool[w] = batch.q_detached[i];
        active[w] = 1;
      }
    }

    try {
      adam_step(params, adam, grad, lr_at(cfg.base_lr, it, cfg.lr_milestones, cfg.lr_factor));
    } catch (const NonFiniteGradientError& e) {
      throw TrainingDiverged(it, e.what(), batch_snapshot(batch, fwd.preds, loss.loss));
    }

    if (use_lmc) {
      const auto mask = lmc_step(pool, grad_q, q_pool, cfg.lmc, cfg.mining.eps_q, static_cast<std::uint64_t>(it), active);
      reinit(pool, mask, &edges, cfg.lmc, static_cast<std::uint64_t>(it));
      if (hooks.walker_dump) write_walker_dump(*hooks.walker_dump, it + 1, pool);
    }

    const std::int64_t done = it + 1;
    if (done % cfg.eval_every == 0 || done == cfg.iterations) {
      Evaluation eval = evaluate_full(params, img);
      ConvergenceRecord rec{done, loss.loss, eval.psnr, elapsed(), alpha};
      result.records.push_back(rec);
      if (hooks.on_eval) hooks.on_eval(rec, params, eval);
    }
  }

  result.wall_seconds = elapsed();
  result.params = std::move(params);
  if (cfg.target_psnr) result.iterations_to_target = iterations_to_target(result.records, *cfg.target_psnr);
  return result;
}

}  // namespace softmine
