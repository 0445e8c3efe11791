#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "softmine/image.hpp"

namespace softmine {

/// Frozen synthetic importance functions on [0,1]² used to test the sampler.
enum class SyntheticTarget { GaussianMixture, Uniform, Step };

SyntheticTarget parse_synthetic_target(const std::string& name);
const char* to_string(SyntheticTarget t);

/// Q(x) and ∇Q(x) of a synthetic target.
double synthetic_q(SyntheticTarget t, const Coord& x, double* grad_u = nullptr, double* grad_v = nullptr);

/// What happens to a walker whose proposal leaves [0,1]².
/// Reject: it stays put (the chain keeps Q^k invariant).
/// Redraw: it restarts uniformly, as during training; this thins the
/// density near the border.
enum class Boundary { Reject, Redraw };

Boundary parse_boundary(const std::string& name);
const char* to_string(Boundary b);

struct StationarityConfig {
  SyntheticTarget target = SyntheticTarget::GaussianMixture;
  Boundary boundary = Boundary::Reject;
  std::int64_t steps = 200000;
  int bins = 16;
  std::size_t walkers = 256;
  double a = 1e-4;
  double b = 1e-2;
  std::int64_t burn_in = 20000;
  std::int64_t thin = 10;
  std::uint64_t seed = 0;
  double threshold = 0.15;

  void validate() const;
};

struct StationarityReport {
  /// Unadjusted Langevin with independent a and b leaves Q^k invariant,
  /// k = 2a/b²; `tv` is measured against that normalized density.
  double exponent = 1.0;
  double tv = 0.0;
  /// TV against Q itself (equal to `tv` when k = 1).
  double tv_raw = 0.0;
  double threshold = 0.15;
  bool passed = false;
  std::size_t samples = 0;
  std::vector<double> histogram;
  std::vector<double> expected;
};

/// Runs a walker pool through lmc_step on a frozen target with uniform
/// mixing and low-Q re-initialization disabled, and compares the
/// visited-position histogram with the target's bin masses.
StationarityReport run_stationarity_check(const StationarityConfig& cfg);

/// Bin masses of Q^exponent over a bins×bins partition, via midpoint
/// quadrature with `sub`×`sub` nodes per bin.
std::vector<double> target_bin_masses(SyntheticTarget t, int bins, double exponent, int sub = 16);

double total_variation(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace softmine
