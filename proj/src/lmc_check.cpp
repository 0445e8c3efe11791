#include "softmine/lmc_check.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "softmine/sampler.hpp"

namespace softmine {

SyntheticTarget parse_synthetic_target(const std::string& name) {
  if (name == "gaussian-mixture") return SyntheticTarget::GaussianMixture;
  if (name == "uniform") return SyntheticTarget::Uniform;
  if (name == "step") return SyntheticTarget::Step;
  throw std::invalid_argument("unknown target '" + name + "' (expected gaussian-mixture, uniform or step)");
}

const char* to_string(SyntheticTarget t) {
  switch (t) {
    case SyntheticTarget::GaussianMixture: return "gaussian-mixture";
    case SyntheticTarget::Uniform: return "uniform";
    case SyntheticTarget::Step: return "step";
  }
  return "?";
}

Boundary parse_boundary(const std::string& name) {
  if (name == "reject") return Boundary::Reject;
  if (name == "redraw") return Boundary::Redraw;
  throw std::invalid_argument("unknown boundary '" + name + "' (expected reject or redraw)");
}

const char* to_string(Boundary b) { return b == Boundary::Reject ? "reject" : "redraw"; }

namespace {

struct Bump {
  double mu_u, mu_v, sigma, weight;
};
constexpr std::array<Bump, 3> kBumps{{{0.30, 0.30, 0.10, 1.0}, {0.72, 0.42, 0.12, 0.8}, {0.45, 0.75, 0.09, 0.9}}};
constexpr double kFloor = 0.3;

}  // namespace

double synthetic_q(SyntheticTarget t, const Coord& x, double* grad_u, double* grad_v) {
  double q = 0.0, gu = 0.0, gv = 0.0;
  switch (t) {
    case SyntheticTarget::Uniform:
      q = 1.0;
      break;
    case SyntheticTarget::GaussianMixture:
      q = kFloor;
      for (const Bump& b : kBumps) {
        const double du = x.u - b.mu_u;
        const double dv = x.v - b.mu_v;
        const double s2 = b.sigma * b.sigma;
        const double e = b.weight * std::exp(-(du * du + dv * dv) / (2.0 * s2));
        q += e;
        gu -= e * du / s2;
        gv -= e * dv / s2;
      }
      break;
    case SyntheticTarget::Step: {
      // Smoothed step along u: 0.2 on the left, 1.0 on the right.
      const double width = 0.05;
      const double s = 1.0 / (1.0 + std::exp(-(x.u - 0.5) / width));
      q = 0.2 + 0.8 * s;
      gu = 0.8 * s * (1.0 - s) / width;
      break;
    }
  }
  if (grad_u) *grad_u = gu;
  if (grad_v) *grad_v = gv;
  return q;
}

void StationarityConfig::validate() const {
  if (bins < 4) throw std::invalid_argument("lmc-check: bins must be >= 4");
  if (steps < 1) throw std::invalid_argument("lmc-check: steps must be >= 1");
  if (walkers < 1) throw std::invalid_argument("lmc-check: walkers must be >= 1");
  if (burn_in < 0 || burn_in >= steps) throw std::invalid_argument("lmc-check: burn_in must be in [0, steps)");
  if (thin < 1) throw std::invalid_argument("lmc-check: thin must be >= 1");
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("lmc-check: a and b must be > 0");
}

std::vector<double> target_bin_masses(SyntheticTarget t, int bins, double exponent, int sub) {
  std::vector<double> mass(static_cast<std::size_t>(bins) * bins, 0.0);
  const int n = bins * sub;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Coord x{(i + 0.5) / n, (j + 0.5) / n};
      mass[static_cast<std::size_t>(j / sub) * bins + i / sub] += std::pow(synthetic_q(t, x), exponent);
    }
  }
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (double& m : mass) m /= total;
  return mass;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

StationarityReport run_stationarity_check(const StationarityConfig& cfg) {
  cfg.validate();
  LmcConfig lmc;
  lmc.a = cfg.a;
  lmc.b = cfg.b;
  lmc.uniform_frac = 0.0;
  lmc.reinit_frac = 0.0;
  lmc.edge_reinit_frac = 0.0;
  constexpr double eps_q = 1e-12;

  WalkerPool pool = init_pool(cfg.walkers, cfg.seed);
  std::vector<std::array<double, 2>> grad(cfg.walkers);
  std::vector<double> q(cfg.walkers);
  std::vector<double> counts(static_cast<std::size_t>(cfg.bins) * cfg.bins, 0.0);
  std::size_t samples = 0;

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < cfg.walkers; ++i) q[i] = synthetic_q(cfg.target, pool.coords[i], &grad[i][0], &grad[i][1]);
    const auto mask = lmc_step(pool, grad, q, lmc, eps_q, static_cast<std::uint64_t>(step));
    if (cfg.boundary == Boundary::Redraw) reinit(pool, mask, nullptr, lmc, static_cast<std::uint64_t>(step));
    if (step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0) {
      for (const Coord& x : pool.coords) {
        const int bu = std::min(static_cast<int>(x.u * cfg.bins), cfg.bins - 1);
        const int bv = std::min(static_cast<int>(x.v * cfg.bins), cfg.bins - 1);
        counts[static_cast<std::size_t>(bv) * cfg.bins + bu] += 1.0;
      }
      samples += cfg.walkers;
    }
  }

  StationarityReport r;
  r.exponent = 2.0 * cfg.a / (cfg.b * cfg.b);
  r.threshold = cfg.threshold;
  r.samples = samples;
  r.histogram = counts;
  for (double& c : r.histogram) c /= static_cast<double>(samples);
  r.expected = target_bin_masses(cfg.target, cfg.bins, r.exponent);
  r.tv = total_variation(r.histogram, r.expected);
  r.tv_raw = total_variation(r.histogram, target_bin_masses(cfg.target, cfg.bins, 1.0));
  r.passed = r.tv < cfg.threshold;
  return r;
}

}  // namespace softmine
