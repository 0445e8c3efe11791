#include "softmine/mining.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace softmine {

void MiningConfig::validate() const {
  if (!(alpha_target >= 0.0 && alpha_target <= 1.0)) throw std::invalid_argument("mining: alpha must be in [0,1]");
  if (warmup_iters < 0) throw std::invalid_argument("mining: warmup_iters must be >= 0");
  if (!(eps_q > 0.0)) throw std::invalid_argument("mining: eps_q must be > 0");
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Lmc: return "lmc";
    case Provenance::Uniform: return "uniform";
    case Provenance::Multinomial: return "multinomial";
  }
  return "?";
}

namespace {
void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("residual length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}
}  // namespace

double err_sq(std::span<const double> pred, std::span<const double> gt) {
  require_same_length(pred, gt);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  return s;
}

double q_l1(std::span<const double> pred, std::span<const double> gt) {
  require_same_length(pred, gt);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
  return s;
}

double alpha_at(const MiningConfig& cfg, std::int64_t iteration) {
  if (cfg.warmup_iters <= 0) return cfg.alpha_target;
  const double ramp = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(cfg.warmup_iters));
  return cfg.alpha_target * ramp;
}

double soft_weight(double q, double alpha, double eps_q) {
  if (alpha == 0.0) return 1.0;
  return std::pow(q + eps_q, -alpha);
}

LossResult weighted_loss(const MinedBatch& batch, const RowMatrix& preds, std::int64_t iteration) {
  if (batch.iteration != iteration) {
    throw StaleWeightsError("weighted_loss: weights built at iteration " + std::to_string(batch.iteration) +
                            ", used at " + std::to_string(iteration));
  }
  const auto n = batch.size();
  const int c = batch.channels;
  if (static_cast<std::size_t>(preds.rows()) != n || preds.cols() != c || batch.targets.size() != n * c ||
      batch.weights.size() != n) {
    throw std::invalid_argument("weighted_loss: shape mismatch");
  }
  LossResult r;
  r.d_pred.resize(static_cast<Eigen::Index>(n), c);
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = batch.weights[i];
    double e = 0.0;
    for (int k = 0; k < c; ++k) {
      const double d = preds(static_cast<Eigen::Index>(i), k) - batch.targets[i * c + k];
      e += d * d;
      r.d_pred(static_cast<Eigen::Index>(i), k) = w * 2.0 * d * inv_n;
    }
    total += w * e;
  }
  r.loss = total * inv_n;
  return r;
}

}  // namespace softmine
