#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "softmine/image.hpp"
#include "softmine/mining.hpp"
#include "softmine/rng.hpp"

namespace softmine {

enum class SamplerKind { Uniform, Lmc, Multinomial };

const char* to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

struct LmcConfig {
  double a = 1.35e-3;              // gradient step
  double b = 3e-2;                 // noise step
  double uniform_frac = 0.10;      // share of each batch drawn uniformly
  double reinit_frac = 0.10;       // lowest-Q share of the pool redrawn per step
  double edge_reinit_frac = 1.0;   // share of redraws taken from the edge pdf
  std::size_t pool_size = 0;       // 0: same as the batch size

  void validate() const;
};

/// Persistent Langevin walkers.
struct WalkerPool {
  std::vector<Coord> coords;
  std::vector<double> last_q;
  std::uint64_t noise_key = 0;
  std::uint64_t reinit_key = 0;
  std::uint64_t compose_key = 0;

  std::size_t size() const { return coords.size(); }
};

WalkerPool init_pool(std::size_t pool_size, std::uint64_t seed);

/// x ← x + a·∇Q/(Q+eps_q) + b·η. Walkers whose proposal leaves [0,1]² (or
/// whose gradient is non-finite) keep their coordinates and are flagged in
/// the returned mask. Walkers with active[i] == 0 are left untouched; an
/// empty `active` means all walkers.
std::vector<std::uint8_t> lmc_step(WalkerPool& pool, std::span<const std::array<double, 2>> grad_q,
                                   std::span<const double> q, const LmcConfig& cfg, double eps_q,
                                   std::uint64_t iteration, std::span<const std::uint8_t> active = {});

/// Redraws flagged walkers plus the reinit_frac share with the lowest last_q.
/// Each redraw picks the edge pdf with probability edge_reinit_frac (when a
/// pdf is given), otherwise Uniform([0,1]²). Returns the redrawn indices.
std::vector<std::size_t> reinit(WalkerPool& pool, std::span<const std::uint8_t> mask, const EdgePdf* edge_pdf,
                                const LmcConfig& cfg, std::uint64_t iteration);

/// Number of walkers selected by the bottom-Q rule.
std::size_t bottom_count(std::size_t pool_size, double frac);
/// Number of uniform samples mixed into a batch of n.
std::size_t uniform_count(std::size_t n, double frac);

struct ComposedBatch {
  std::vector<Coord> coords;
  std::vector<Provenance> provenance;
  std::vector<std::int64_t> walker;  // pool index, -1 for uniform samples
};

/// Walker coordinates with ceil(uniform_frac·n) random positions replaced by
/// fresh uniform coordinates for this batch only.
ComposedBatch compose_batch(const WalkerPool& pool, const LmcConfig& cfg, std::size_t n, std::uint64_t iteration);

std::vector<Coord> uniform_coords(std::size_t n, CounterRng& rng);

struct MultinomialDraw {
  std::vector<std::size_t> pixels;
  std::vector<Coord> coords;   // pixel centers
  std::vector<double> pmf;     // q̂ of each draw
  std::vector<double> density; // q̂·M, the continuous-density convention
};

/// n i.i.d. draws from q_all/Σq_all over a width×height lattice; an all-zero
/// q_all falls back to the uniform pmf.
MultinomialDraw multinomial_batch(std::span<const double> q_all, int width, int height, std::size_t n, CounterRng& rng);

/// CSV rows "iteration,walker_id,u,v,q".
void write_walker_dump_header(std::ostream& os);
void write_walker_dump(std::ostream& os, std::int64_t iteration, const WalkerPool& pool);

}  // namespace softmine
