#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "softmine/field.hpp"
#include "softmine/image.hpp"

namespace softmine {

struct MiningConfig {
  double alpha_target = 0.6;
  std::int64_t warmup_iters = 1000;
  double eps_q = 1e-8;

  void validate() const;
};

enum class Provenance : std::uint8_t { Lmc, Uniform, Multinomial };

const char* to_string(Provenance p);

/// Squared L2 norm of the residual.
double err_sq(std::span<const double> pred, std::span<const double> gt);
/// L1 norm of the residual; the importance value Q.
double q_l1(std::span<const double> pred, std::span<const double> gt);

/// Linear warm-up from 0 to alpha_target over warmup_iters.
double alpha_at(const MiningConfig& cfg, std::int64_t iteration);

/// 1/(q+eps_q)^alpha. Treated as a constant by every gradient computation.
double soft_weight(double q, double alpha, double eps_q);

/// A mined batch in struct-of-arrays form. Weights are frozen at
/// construction for the iteration they were built in.
struct MinedBatch {
  std::int64_t iteration = 0;
  int channels = 0;
  std::vector<Coord> coords;
  std::vector<double> targets;  // N × C
  std::vector<double> q_detached;
  std::vector<double> weights;
  std::vector<Provenance> provenance;

  std::size_t size() const { return coords.size(); }
};

class StaleWeightsError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct LossResult {
  double loss = 0.0;
  RowMatrix d_pred;  // N × C
};

/// loss = (1/N)·Σ w_n·err_n; d loss/d pred_n = w_n·2·(pred_n − gt_n)/N.
/// The weights carry no derivative terms.
LossResult weighted_loss(const MinedBatch& batch, const RowMatrix& preds, std::int64_t iteration);

}  // namespace softmine
