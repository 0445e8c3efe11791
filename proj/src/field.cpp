#include "softmine/field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "softmine/rng.hpp"

namespace softmine {

void EncodingConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("encoding: levels must be >= 1");
  if (base_resolution < 2) throw std::invalid_argument("encoding: base_resolution must be >= 2");
  if (!(growth > 1.0)) throw std::invalid_argument("encoding: growth must be > 1");
  if (features_per_level < 1) throw std::invalid_argument("encoding: features_per_level must be >= 1");
}

FieldLayout FieldLayout::make(const EncodingConfig& enc, int channels, int hidden_width) {
  enc.validate();
  if (channels != 1 && channels != 3) throw std::invalid_argument("field: channels must be 1 or 3");
  if (hidden_width < 1) throw std::invalid_argument("field: hidden_width must be >= 1");

  FieldLayout l;
  l.encoding = enc;
  l.hidden_width = hidden_width;
  l.channels = channels;
  std::size_t offset = 0;
  for (int level = 0; level < enc.levels; ++level) {
    const int res = static_cast<int>(std::floor(enc.base_resolution * std::pow(enc.growth, level) + 1e-9));
    l.resolutions.push_back(res);
    l.grid_offsets.push_back(offset);
    offset += static_cast<std::size_t>(res) * res * enc.features_per_level;
  }
  const auto in = static_cast<std::size_t>(l.input_width());
  const auto h = static_cast<std::size_t>(hidden_width);
  const auto c = static_cast<std::size_t>(channels);
  l.w1 = offset;
  l.b1 = l.w1 + h * in;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + h * h;
  l.w3 = l.b2 + h;
  l.b3 = l.w3 + c * h;
  l.total = l.b3 + c;
  return l;
}

bool FieldLayout::same_shape(const FieldLayout& other) const {
  return encoding.levels == other.encoding.levels && encoding.base_resolution == other.encoding.base_resolution &&
         encoding.growth == other.encoding.growth && encoding.features_per_level == other.encoding.features_per_level &&
         hidden_width == other.hidden_width && channels == other.channels && total == other.total;
}

FieldParams init_params(const FieldLayout& layout, std::uint64_t seed) {
  FieldParams p;
  p.layout = layout;
  p.values.assign(layout.total, 0.0);
  CounterRng rng(stream_key(seed, Stream::FieldInit));
  for (std::size_t i = 0; i < layout.grid_values(); ++i) p.values[i] = (2.0 * rng.uniform() - 1.0) * 1e-4;

  auto fill = [&](std::size_t offset, std::size_t rows, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < rows * fan_in; ++i) p.values[offset + i] = (2.0 * rng.uniform() - 1.0) * bound;
  };
  const auto in = static_cast<std::size_t>(layout.input_width());
  const auto h = static_cast<std::size_t>(layout.hidden_width);
  fill(layout.w1, h, in);
  fill(layout.w2, h, h);
  fill(layout.w3, static_cast<std::size_t>(layout.channels), h);
  return p;
}

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using ConstRowVec = Eigen::Map<const Eigen::RowVectorXd>;

struct Weights {
  ConstMap w1, w2, w3;
  ConstRowVec b1, b2, b3;

  explicit Weights(const FieldParams& p)
      : w1(p.values.data() + p.layout.w1, p.layout.hidden_width, p.layout.input_width()),
        w2(p.values.data() + p.layout.w2, p.layout.hidden_width, p.layout.hidden_width),
        w3(p.values.data() + p.layout.w3, p.layout.channels, p.layout.hidden_width),
        b1(p.values.data() + p.layout.b1, p.layout.hidden_width),
        b2(p.values.data() + p.layout.b2, p.layout.hidden_width),
        b3(p.values.data() + p.layout.b3, p.layout.channels) {}
};

void check_coord(const Coord& x) {
  if (!in_domain(x)) {
    throw std::out_of_range("field: coordinate (" + std::to_string(x.u) + ", " + std::to_string(x.v) +
                            ") outside [0,1]^2");
  }
}

// Interpolates grid features for every sample; optionally records cells.
void encode(const FieldParams& p, std::span<const Coord> xs, RowMatrix& features, std::vector<std::int32_t>* cells,
            std::vector<double>* fractions) {
  const FieldLayout& l = p.layout;
  const int levels = l.encoding.levels;
  const int nf = l.encoding.features_per_level;
  features.resize(static_cast<Eigen::Index>(xs.size()), l.input_width());
  if (cells) {
    cells->resize(xs.size() * levels);
    fractions->resize(xs.size() * levels * 2);
  }
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const Coord& x = xs[n];
    check_coord(x);
    for (int level = 0; level < levels; ++level) {
      const int res = l.resolutions[level];
      const double pu = x.u * (res - 1);
      const double pv = x.v * (res - 1);
      const int i0 = std::min(static_cast<int>(pu), res - 2);
      const int j0 = std::min(static_cast<int>(pv), res - 2);
      const double tx = pu - i0;
      const double ty = pv - j0;
      const double* g = p.values.data() + l.grid_offsets[level];
      const double* g00 = g + (static_cast<std::size_t>(j0) * res + i0) * nf;
      const double* g10 = g00 + nf;
      const double* g01 = g00 + static_cast<std::size_t>(res) * nf;
      const double* g11 = g01 + nf;
      const double w00 = (1.0 - tx) * (1.0 - ty), w10 = tx * (1.0 - ty), w01 = (1.0 - tx) * ty, w11 = tx * ty;
      for (int f = 0; f < nf; ++f) {
        features(static_cast<Eigen::Index>(n), level * nf + f) = w00 * g00[f] + w10 * g10[f] + w01 * g01[f] + w11 * g11[f];
      }
      if (cells) {
        (*cells)[n * levels + level] = j0 * res + i0;
        (*fractions)[(n * levels + level) * 2] = tx;
        (*fractions)[(n * levels + level) * 2 + 1] = ty;
      }
    }
  }
}

void mlp(const Weights& w, const RowMatrix& features, RowMatrix& h1, RowMatrix& h2, RowMatrix& out) {
  h1.noalias() = features * w.w1.transpose();
  h1.rowwise() += w.b1;
  h1 = h1.cwiseMax(0.0);
  h2.noalias() = h1 * w.w2.transpose();
  h2.rowwise() += w.b2;
  h2 = h2.cwiseMax(0.0);
  out.noalias() = h2 * w.w3.transpose();
  out.rowwise() += w.b3;
  out = (1.0 + (-out.array()).exp()).inverse().matrix();
}

void check_tape(const FieldParams& p, const ForwardTape& tape, const RowMatrix& upstream) {
  if (tape.version != p.version) {
    throw StaleTapeError("field: tape recorded at parameter version " + std::to_string(tape.version) +
                         ", current version is " + std::to_string(p.version));
  }
  if (static_cast<std::size_t>(upstream.rows()) != tape.count || upstream.cols() != p.layout.channels) {
    throw std::invalid_argument("field: upstream gradient shape does not match tape");
  }
}

void relu_mask(RowMatrix& d, const RowMatrix& h) {
  double* dp = d.data();
  const double* hp = h.data();
  for (Eigen::Index i = 0, n = d.size(); i < n; ++i) dp[i] = hp[i] > 0.0 ? dp[i] : 0.0;
}

// Back-propagates `upstream` to the encoded features. When `grad` is given,
// MLP parameter gradients are written into it as well.
const RowMatrix& backprop_features(const FieldParams& p, const ForwardTape& tape, const RowMatrix& upstream,
                                   std::vector<double>* grad) {
  // Scratch kept per thread; these are large and reallocating them dominates small batches.
  thread_local RowMatrix d_out, d_h2, d_h1, d_features;
  const Weights w(p);
  const FieldLayout& l = p.layout;
  d_out.resize(upstream.rows(), upstream.cols());
  d_out.array() = upstream.array() * tape.output.array() * (1.0 - tape.output.array());
  d_h2.resize(upstream.rows(), l.hidden_width);
  d_h2.noalias() = d_out.lazyProduct(w.w3);
  relu_mask(d_h2, tape.hidden2);
  d_h1.resize(upstream.rows(), l.hidden_width);
  d_h1.noalias() = d_h2 * w.w2;
  relu_mask(d_h1, tape.hidden1);
  if (grad) {
    // Owned destinations; through a Map the summation order follows its alignment.
    thread_local RowMatrix gw;
    thread_local Eigen::RowVectorXd gb;
    double* g = grad->data();
    auto put = [&](std::size_t offset, const auto& m) { std::copy(m.data(), m.data() + m.size(), g + offset); };
    gw.noalias() = d_out.transpose() * tape.hidden2;
    put(l.w3, gw);
    gb = d_out.colwise().sum();
    put(l.b3, gb);
    gw.noalias() = d_h2.transpose() * tape.hidden1;
    put(l.w2, gw);
    gb = d_h2.colwise().sum();
    put(l.b2, gb);
    gw.noalias() = d_h1.transpose() * tape.features;
    put(l.w1, gw);
    gb = d_h1.colwise().sum();
    put(l.b1, gb);
  }
  d_features.resize(upstream.rows(), l.input_width());
  d_features.noalias() = d_h1 * w.w1;
  return d_features;
}

}  // namespace

ForwardResult forward(const FieldParams& params, std::span<const Coord> xs) {
  ForwardResult r;
  ForwardTape& t = r.tape;
  t.version = params.version;
  t.count = xs.size();
  encode(params, xs, t.features, &t.cells, &t.fractions);
  mlp(Weights(params), t.features, t.hidden1, t.hidden2, t.output);
  r.preds = t.output;
  return r;
}

RowMatrix render(const FieldParams& params, std::span<const Coord> xs) {
  RowMatrix features, h1, h2, out;
  encode(params, xs, features, nullptr, nullptr);
  mlp(Weights(params), features, h1, h2, out);
  return out;
}

void backward_params(const FieldParams& params, const ForwardTape& tape, const RowMatrix& upstream,
                     std::vector<double>& grad) {
  check_tape(params, tape, upstream);
  const FieldLayout& l = params.layout;
  grad.assign(l.total, 0.0);
  if (tape.count == 0) return;
  const RowMatrix& d_features = backprop_features(params, tape, upstream, &grad);

  const int levels = l.encoding.levels;
  const int nf = l.encoding.features_per_level;
  for (std::size_t n = 0; n < tape.count; ++n) {
    for (int level = 0; level < levels; ++level) {
      const int res = l.resolutions[level];
      const double tx = tape.fractions[(n * levels + level) * 2];
      const double ty = tape.fractions[(n * levels + level) * 2 + 1];
      double* g00 = grad.data() + l.grid_offsets[level] + static_cast<std::size_t>(tape.cells[n * levels + level]) * nf;
      double* g10 = g00 + nf;
      double* g01 = g00 + static_cast<std::size_t>(res) * nf;
      double* g11 = g01 + nf;
      const double w00 = (1.0 - tx) * (1.0 - ty), w10 = tx * (1.0 - ty), w01 = (1.0 - tx) * ty, w11 = tx * ty;
      for (int f = 0; f < nf; ++f) {
        const double d = d_features(static_cast<Eigen::Index>(n), level * nf + f);
        g00[f] += w00 * d;
        g10[f] += w10 * d;
        g01[f] += w01 * d;
        g11[f] += w11 * d;
      }
    }
  }
}

std::vector<double> backward_params(const FieldParams& params, const ForwardTape& tape, const RowMatrix& upstream) {
  std::vector<double> grad;
  backward_params(params, tape, upstream, grad);
  return grad;
}

std::vector<std::array<double, 2>> backward_coords(const FieldParams& params, const ForwardTape& tape,
                                                   const RowMatrix& upstream) {
  check_tape(params, tape, upstream);
  std::vector<std::array<double, 2>> out(tape.count, {0.0, 0.0});
  if (tape.count == 0) return out;
  const RowMatrix& d_features = backprop_features(params, tape, upstream, nullptr);

  const FieldLayout& l = params.layout;
  const int levels = l.encoding.levels;
  const int nf = l.encoding.features_per_level;
  for (std::size_t n = 0; n < tape.count; ++n) {
    double du = 0.0, dv = 0.0;
    for (int level = 0; level < levels; ++level) {
      const int res = l.resolutions[level];
      const double tx = tape.fractions[(n * levels + level) * 2];
      const double ty = tape.fractions[(n * levels + level) * 2 + 1];
      const double* g00 =
          params.values.data() + l.grid_offsets[level] + static_cast<std::size_t>(tape.cells[n * levels + level]) * nf;
      const double* g10 = g00 + nf;
      const double* g01 = g00 + static_cast<std::size_t>(res) * nf;
      const double* g11 = g01 + nf;
      double su = 0.0, sv = 0.0;
      for (int f = 0; f < nf; ++f) {
        const double d = d_features(static_cast<Eigen::Index>(n), level * nf + f);
        su += d * ((1.0 - ty) * (g10[f] - g00[f]) + ty * (g11[f] - g01[f]));
        sv += d * ((1.0 - tx) * (g01[f] - g00[f]) + tx * (g11[f] - g10[f]));
      }
      du += su * (res - 1);
      dv += sv * (res - 1);
    }
    out[n] = {du, dv};
  }
  return out;
}

void adam_step(FieldParams& params, AdamState& state, std::span<const double> grad, double lr) {
  const std::size_t n = params.values.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw NonFiniteGradientError("adam_step: non-finite gradient");
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState::beta2, t);
  double* p = params.values.data();
  double* m = state.m.data();
  double* v = state.v.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = AdamState::beta1 * m[i] + (1.0 - AdamState::beta1) * g;
    v[i] = AdamState::beta2 * v[i] + (1.0 - AdamState::beta2) * g * g;
    p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + AdamState::epsilon);
  }
  ++params.version;
}

double lr_at(double base_lr, std::int64_t iteration, std::span<const std::int64_t> milestones, double factor) {
  double lr = base_lr;
  for (std::int64_t m : milestones)
    if (iteration >= m) lr *= factor;
  return lr;
}

double lr_at(double base_lr, std::int64_t iteration) {
  static constexpr std::array<std::int64_t, 2> kMilestones{20000, 30000};
  return lr_at(base_lr, iteration, kMilestones);
}

FieldParams quantize_to_checkpoint(const FieldParams& params) {
  FieldParams q = params;
  for (double& v : q.values) v = static_cast<double>(static_cast<float>(v));
  return q;
}

}  // namespace softmine
