#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "softmine/field.hpp"
#include "softmine/image.hpp"
#include "softmine/mining.hpp"
#include "softmine/sampler.hpp"

namespace softmine {

struct TrainConfig {
  std::int64_t iterations = 10000;
  std::size_t batch_size = 1024;
  std::int64_t eval_every = 100;
  SamplerKind sampler = SamplerKind::Lmc;
  MiningConfig mining;
  LmcConfig lmc;
  EncodingConfig encoding;
  int hidden_width = 64;
  double base_lr = kBaseLearningRate;
  std::vector<std::int64_t> lr_milestones{20000, 30000};
  double lr_factor = 1.0 / 3.0;
  std::uint64_t seed = 0;
  std::optional<double> target_psnr;
  /// Use the nearest pixel value as the target instead of the bilinear one.
  bool snap_to_pixel_centers = false;

  void validate() const;
};

struct ConvergenceRecord {
  std::int64_t iteration = 0;
  double train_loss = 0.0;
  double full_psnr = 0.0;
  double elapsed_wall_seconds = 0.0;
  double alpha_effective = 0.0;
};

struct RunResult {
  std::vector<ConvergenceRecord> records;
  FieldParams params;
  std::optional<std::int64_t> iterations_to_target;
  double wall_seconds = 0.0;
};

struct Evaluation {
  double psnr = 0.0;
  std::vector<double> error_map;  // per-pixel squared L2 error
  ImageField render;
};

/// Optional side channels of a run.
struct TrainHooks {
  std::function<void(const ConvergenceRecord&, const FieldParams&, const Evaluation&)> on_eval;
  std::ostream* walker_dump = nullptr;
};

/// Raised when the loss or gradient becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t iteration, const std::string& what, std::string snapshot);
  std::int64_t iteration() const { return iteration_; }
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::int64_t iteration_;
  std::string snapshot_;
};

RunResult train(const ImageField& img, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Field values at the pixel centers of a width×height raster.
ImageField render_image(const FieldParams& params, int width, int height);

/// Renders the field at every pixel center and compares with `img`.
Evaluation evaluate_full(const FieldParams& params, const ImageField& img);

std::optional<std::int64_t> iterations_to_target(const std::vector<ConvergenceRecord>& records, double target_db);

/// Convergence log with header iteration,train_loss,psnr_db,elapsed_s,alpha_effective.
/// With include_wall_time = false the elapsed column is written as 0.
void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRecord>& records, bool include_wall_time = true);

}  // namespace softmine
