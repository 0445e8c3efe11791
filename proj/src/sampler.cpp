#include "softmine/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace softmine {

const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Uniform: return "uniform";
    case SamplerKind::Lmc: return "lmc";
    case SamplerKind::Multinomial: return "multinomial";
  }
  return "?";
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "uniform") return SamplerKind::Uniform;
  if (name == "lmc") return SamplerKind::Lmc;
  if (name == "multinomial") return SamplerKind::Multinomial;
  throw std::invalid_argument("unknown sampler '" + name + "' (expected uniform, lmc or multinomial)");
}

void LmcConfig::validate() const {
  if (!(a > 0.0)) throw std::invalid_argument("lmc: a must be > 0");
  if (!(b >= 0.0)) throw std::invalid_argument("lmc: b must be >= 0");
  auto frac = [](double f, const char* name) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument(std::string("lmc: ") + name + " must be in [0,1]");
  };
  frac(uniform_frac, "uniform_frac");
  frac(reinit_frac, "reinit_frac");
  frac(edge_reinit_frac, "edge_reinit_frac");
}

WalkerPool init_pool(std::size_t pool_size, std::uint64_t seed) {
  if (pool_size == 0) throw std::invalid_argument("init_pool: pool_size must be >= 1");
  WalkerPool pool;
  pool.noise_key = stream_key(seed, Stream::LmcNoise);
  pool.reinit_key = stream_key(seed, Stream::Reinit);
  pool.compose_key = stream_key(seed, Stream::Compose);
  CounterRng rng(stream_key(seed, Stream::PoolInit));
  pool.coords = uniform_coords(pool_size, rng);
  pool.last_q.assign(pool_size, 0.0);
  return pool;
}

std::vector<Coord> uniform_coords(std::size_t n, CounterRng& rng) {
  std::vector<Coord> out(n);
  for (auto& c : out) {
    c.u = rng.uniform();
    c.v = rng.uniform();
  }
  return out;
}

std::vector<std::uint8_t> lmc_step(WalkerPool& pool, std::span<const std::array<double, 2>> grad_q,
                                   std::span<const double> q, const LmcConfig& cfg, double eps_q,
                                   std::uint64_t iteration, std::span<const std::uint8_t> active) {
  const std::size_t n = pool.size();
  if (grad_q.size() != n || q.size() != n || (!active.empty() && active.size() != n)) {
    throw std::invalid_argument("lmc_step: shape mismatch with pool");
  }
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!active.empty() && !active[i]) continue;
    if (std::isfinite(q[i])) pool.last_q[i] = q[i];
    const double denom = q[i] + eps_q;
    const double gu = grad_q[i][0] / denom;
    const double gv = grad_q[i][1] / denom;
    if (!std::isfinite(gu) || !std::isfinite(gv)) {
      mask[i] = 1;
      continue;
    }
    Coord next{pool.coords[i].u + cfg.a * gu, pool.coords[i].v + cfg.a * gv};
    if (cfg.b > 0.0) {
      CounterRng rng(pool.noise_key, iteration, i);
      next.u += cfg.b * rng.normal();
      next.v += cfg.b * rng.normal();
    }
    if (in_domain(next)) {
      pool.coords[i] = next;
    } else {
      mask[i] = 1;
    }
  }
  return mask;
}

std::size_t bottom_count(std::size_t pool_size, double frac) {
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(pool_size) + 1e-9));
}

std::size_t uniform_count(std::size_t n, double frac) {
  return static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
}

std::vector<std::size_t> reinit(WalkerPool& pool, std::span<const std::uint8_t> mask, const EdgePdf* edge_pdf,
                                const LmcConfig& cfg, std::uint64_t iteration) {
  const std::size_t n = pool.size();
  if (!mask.empty() && mask.size() != n) throw std::invalid_argument("reinit: mask size mismatch");
  std::vector<std::uint8_t> chosen(n, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) chosen[i] = mask[i] ? 1 : 0;

  const std::size_t k = std::min(bottom_count(n, cfg.reinit_frac), n);
  if (k > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto lower = [&](std::size_t a, std::size_t b) {
      return pool.last_q[a] < pool.last_q[b] || (pool.last_q[a] == pool.last_q[b] && a < b);
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), lower);
    for (std::size_t j = 0; j < k; ++j) chosen[order[j]] = 1;
  }

  double q_fill = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (!chosen[i] && std::isfinite(pool.last_q[i])) q_fill = std::max(q_fill, pool.last_q[i]);

  std::vector<std::size_t> redrawn;
  for (std::size_t i = 0; i < n; ++i) {
    if (!chosen[i]) continue;
    CounterRng rng(pool.reinit_key, iteration, i);
    const bool from_edges = edge_pdf != nullptr && rng.uniform() < cfg.edge_reinit_frac;
    if (from_edges) {
      const std::size_t pixel = edge_pdf->sample_index(rng.uniform());
      const auto px = static_cast<double>(pixel % edge_pdf->width);
      const auto py = static_cast<double>(pixel / edge_pdf->width);
      pool.coords[i] = {(px + rng.uniform()) / edge_pdf->width, (py + rng.uniform()) / edge_pdf->height};
    } else {
      pool.coords[i] = {rng.uniform(), rng.uniform()};
    }
    // Not yet evaluated; keep it out of the next bottom-Q selection.
    pool.last_q[i] = q_fill;
    redrawn.push_back(i);
  }
  return redrawn;
}

ComposedBatch compose_batch(const WalkerPool& pool, const LmcConfig& cfg, std::size_t n, std::uint64_t iteration) {
  if (n > pool.size()) throw std::invalid_argument("compose_batch: batch larger than the walker pool is unsupported");
  CounterRng rng(pool.compose_key, iteration);

  // Walker slots: the whole pool, or a random subset when n < pool size.
  std::vector<std::int64_t> slots(pool.size());
  std::iota(slots.begin(), slots.end(), 0);
  if (n < pool.size()) {
    for (std::size_t i = 0; i < n; ++i) std::swap(slots[i], slots[i + rng.below(pool.size() - i)]);
    slots.resize(n);
  }

  ComposedBatch batch;
  batch.coords.resize(n);
  batch.provenance.assign(n, Provenance::Lmc);
  batch.walker = slots;
  for (std::size_t i = 0; i < n; ++i) batch.coords[i] = pool.coords[static_cast<std::size_t>(slots[i])];

  const std::size_t m = std::min(uniform_count(n, cfg.uniform_frac), n);
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(positions[i], positions[i + rng.below(n - i)]);
    const std::size_t p = positions[i];
    batch.coords[p] = {rng.uniform(), rng.uniform()};
    batch.provenance[p] = Provenance::Uniform;
    batch.walker[p] = -1;
  }
  return batch;
}

MultinomialDraw multinomial_batch(std::span<const double> q_all, int width, int height, std::size_t n,
                                  CounterRng& rng) {
  const std::size_t m = static_cast<std::size_t>(width) * height;
  if (q_all.size() != m || m == 0) throw std::invalid_argument("multinomial_batch: q_all does not match the lattice");
  std::vector<double> cumulative(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(q_all[i] >= 0.0) || !std::isfinite(q_all[i])) throw std::invalid_argument("multinomial_batch: q_all must be finite and >= 0");
    total += q_all[i];
    cumulative[i] = total;
  }
  const bool uniform = !(total > 0.0);
  if (uniform) {
    for (std::size_t i = 0; i < m; ++i) cumulative[i] = static_cast<double>(i + 1);
    total = static_cast<double>(m);
  }

  MultinomialDraw d;
  d.pixels.resize(n);
  d.coords.resize(n);
  d.pmf.resize(n);
  d.density.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double target = rng.uniform() * total;
    auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), target) - cumulative.begin());
    idx = std::min(idx, m - 1);
    while (!uniform && q_all[idx] == 0.0 && idx + 1 < m) ++idx;
    const double p = uniform ? 1.0 / static_cast<double>(m) : q_all[idx] / total;
    d.pixels[k] = idx;
    d.coords[k] = {(static_cast<double>(idx % width) + 0.5) / width, (static_cast<double>(idx / width) + 0.5) / height};
    d.pmf[k] = p;
    d.density[k] = p * static_cast<double>(m);
  }
  return d;
}

void write_walker_dump_header(std::ostream& os) { os << "iteration,walker_id,u,v,q\n"; }

void write_walker_dump(std::ostream& os, std::int64_t iteration, const WalkerPool& pool) {
  for (std::size_t i = 0; i < pool.size(); ++i) {
    os << iteration << ',' << i << ',' << pool.coords[i].u << ',' << pool.coords[i].v << ',' << pool.last_q[i] << '\n';
  }
}

}  // namespace softmine
