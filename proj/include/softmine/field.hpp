#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "softmine/image.hpp"

namespace softmine {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Multi-resolution dense grid encoding. Level l has
/// floor(base_resolution · growth^l) grid vertices per side spanning [0,1].
struct EncodingConfig {
  int levels = 5;
  int base_resolution = 16;
  double growth = 2.0;
  int features_per_level = 2;

  void validate() const;
};

/// Shape of the flat parameter vector.
struct FieldLayout {
  EncodingConfig encoding;
  int hidden_width = 64;
  int channels = 3;

  // Derived offsets, filled by finalize().
  std::vector<int> resolutions;
  std::vector<std::size_t> grid_offsets;
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0;
  std::size_t total = 0;

  static FieldLayout make(const EncodingConfig& enc, int channels, int hidden_width = 64);
  int input_width() const { return encoding.levels * encoding.features_per_level; }
  std::size_t grid_values() const { return w1; }
  bool same_shape(const FieldLayout& other) const;
};

/// Learnable field parameters. `version` is bumped on every update so tapes
/// recorded against older values can be detected.
struct FieldParams {
  FieldLayout layout;
  std::vector<double> values;
  std::uint64_t version = 0;
};

class StaleTapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Activations cached by forward() for one backward pass.
struct ForwardTape {
  std::uint64_t version = 0;
  std::size_t count = 0;
  // Per sample and level: lower-left vertex index within the level and the
  // in-cell fractions (tx, ty).
  std::vector<std::int32_t> cells;
  std::vector<double> fractions;
  RowMatrix features;  // N × (levels·F)
  RowMatrix hidden1;   // post-ReLU
  RowMatrix hidden2;   // post-ReLU
  RowMatrix output;    // post-sigmoid
};

struct ForwardResult {
  RowMatrix preds;  // N × C
  ForwardTape tape;
};

FieldParams init_params(const FieldLayout& layout, std::uint64_t seed);

ForwardResult forward(const FieldParams& params, std::span<const Coord> xs);

/// Predictions only; no tape.
RowMatrix render(const FieldParams& params, std::span<const Coord> xs);

/// d(Σ upstream·pred)/dψ.
std::vector<double> backward_params(const FieldParams& params, const ForwardTape& tape, const RowMatrix& upstream);
void backward_params(const FieldParams& params, const ForwardTape& tape, const RowMatrix& upstream,
                     std::vector<double>& grad);

/// Per-sample d(upstream_n·pred_n)/dx_n as (d/du, d/dv).
std::vector<std::array<double, 2>> backward_coords(const FieldParams& params, const ForwardTape& tape,
                                                   const RowMatrix& upstream);

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.99;
  static constexpr double epsilon = 1e-10;

  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update. Throws NonFiniteGradientError (leaving
/// params and state untouched) when the gradient holds NaN or infinity.
void adam_step(FieldParams& params, AdamState& state, std::span<const double> grad, double lr);

constexpr double kBaseLearningRate = 0.01;

/// Multi-step decay: base_lr · factor^(milestones passed).
double lr_at(double base_lr, std::int64_t iteration, std::span<const std::int64_t> milestones,
             double factor = 1.0 / 3.0);
double lr_at(double base_lr, std::int64_t iteration);

/// Checkpoint: magic "SMFIELD" + format version, length-tagged layout
/// fields, parameter count, then little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const FieldParams& params);
FieldParams load_checkpoint(const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Round every parameter through float32 (the checkpoint precision).
FieldParams quantize_to_checkpoint(const FieldParams& params);

}  // namespace softmine
