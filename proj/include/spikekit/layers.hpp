#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spikekit/errors.hpp"
#include "spikekit/neuron.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

enum class ConvPadding { SameSymmetric, CausalTime };

namespace detail {

struct ConvGeometry {
  int64_t extent_t, extent_f;
  int64_t pad_t0, pad_f0;  // leading pads; trailing pads follow from extents
};

inline ConvGeometry conv_geometry(int64_t kt, int64_t kf, int64_t dt, int64_t df,
                                  ConvPadding pad) {
  ConvGeometry g;
  g.extent_t = (kt - 1) * dt + 1;
  g.extent_f = (kf - 1) * df + 1;
  const int64_t tot_t = g.extent_t - 1;
  const int64_t tot_f = g.extent_f - 1;
  g.pad_t0 = (pad == ConvPadding::CausalTime) ? tot_t : tot_t / 2;
  g.pad_f0 = tot_f / 2;
  return g;
}

// Gathers one sample into a [Ci*kt*kf, T*F] column matrix (zeros at padding).
inline void im2col(const float* x, int64_t ci, int64_t t_dim, int64_t f_dim, int64_t kt,
                   int64_t kf, int64_t dt, int64_t df, int64_t pt0, int64_t pf0, float* col) {
  const int64_t cols = t_dim * f_dim;
  for (int64_t c = 0; c < ci; ++c) {
    const float* xc = x + c * t_dim * f_dim;
    for (int64_t ih = 0; ih < kt; ++ih) {
      for (int64_t iw = 0; iw < kf; ++iw) {
        float* row = col + ((c * kt + ih) * kf + iw) * cols;
        const int64_t off_t = ih * dt - pt0;
        const int64_t off_f = iw * df - pf0;
        for (int64_t t = 0; t < t_dim; ++t) {
          const int64_t st = t + off_t;
          float* dst = row + t * f_dim;
          if (st < 0 || st >= t_dim) {
            std::fill(dst, dst + f_dim, 0.0f);
            continue;
          }
          const float* src = xc + st * f_dim;
          const int64_t f_lo = std::max<int64_t>(0, -off_f);
          const int64_t f_hi = std::min<int64_t>(f_dim, f_dim - off_f);
          for (int64_t f = 0; f < f_lo; ++f) dst[f] = 0.0f;
          for (int64_t f = f_lo; f < f_hi; ++f) dst[f] = src[f + off_f];
          for (int64_t f = f_hi; f < f_dim; ++f) dst[f] = 0.0f;
        }
      }
    }
  }
}

// Scatter-add of a column matrix back onto one sample's gradient.
inline void col2im_add(const float* col, int64_t ci, int64_t t_dim, int64_t f_dim, int64_t kt,
                       int64_t kf, int64_t dt, int64_t df, int64_t pt0, int64_t pf0, float* gx) {
  const int64_t cols = t_dim * f_dim;
  for (int64_t c = 0; c < ci; ++c) {
    float* gc = gx + c * t_dim * f_dim;
    for (int64_t ih = 0; ih < kt; ++ih) {
      for (int64_t iw = 0; iw < kf; ++iw) {
        const float* row = col + ((c * kt + ih) * kf + iw) * cols;
        const int64_t off_t = ih * dt - pt0;
        const int64_t off_f = iw * df - pf0;
        for (int64_t t = 0; t < t_dim; ++t) {
          const int64_t st = t + off_t;
          if (st < 0 || st >= t_dim) continue;
          const float* src = row + t * f_dim;
          float* dst = gc + st * f_dim;
          const int64_t f_lo = std::max<int64_t>(0, -off_f);
          const int64_t f_hi = std::min<int64_t>(f_dim, f_dim - off_f);
          for (int64_t f = f_lo; f < f_hi; ++f) dst[f + off_f] += src[f];
        }
      }
    }
  }
}

}  // namespace detail

/// Dilated 2-D convolution, stride 1, output dims equal to input dims.
/// x: [B, Ci, T, F], weights: [Co, Ci, kt, kf] -> [B, Co, T, F].
inline Tensor conv2d(const Tensor& x, const Tensor& weights, int64_t dil_t, int64_t dil_f,
                     ConvPadding padding = ConvPadding::SameSymmetric) {
  if (x.rank() != 4 || weights.rank() != 4) {
    throw ShapeError("conv2d expects rank-4 input and weights, got " + shape_str(x.shape()) +
                     " and " + shape_str(weights.shape()));
  }
  const int64_t batch = x.dim(0), ci = x.dim(1), t_dim = x.dim(2), f_dim = x.dim(3);
  const int64_t co = weights.dim(0), kt = weights.dim(2), kf = weights.dim(3);
  if (weights.dim(1) != ci) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs weights " +
                     shape_str(weights.shape()));
  }
  const auto g = detail::conv_geometry(kt, kf, dil_t, dil_f, padding);

  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  using Map = Eigen::Map<RowMat>;

  const int64_t krows = ci * kt * kf;
  const int64_t cols = t_dim * f_dim;
  Tensor out = Tensor::zeros({batch, co, t_dim, f_dim});
  {
    std::vector<float> col(static_cast<size_t>(krows * cols));
    CMap W(weights.values().data(), co, krows);
    for (int64_t b = 0; b < batch; ++b) {
      detail::im2col(x.values().data() + b * ci * cols, ci, t_dim, f_dim, kt, kf, dil_t, dil_f,
                     g.pad_t0, g.pad_f0, col.data());
      CMap C(col.data(), krows, cols);
      Map O(out.impl()->data.data() + b * co * cols, co, cols);
      O.noalias() = W * C;
    }
  }

  if (detail::should_record({&x, &weights})) {
    const bool need_x = x.tracked();
    const bool need_w = weights.tracked();
    auto xi = x.impl();
    auto wi = weights.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [xi, wi, oi, batch, ci, co, t_dim, f_dim, kt, kf, dil_t, dil_f, g,
                                 krows, cols, need_x, need_w]() {
      // The column matrix is recomputed here instead of being saved.
      std::vector<float> col(static_cast<size_t>(krows * cols));
      CMap W(wi->data.data(), co, krows);
      for (int64_t b = 0; b < batch; ++b) {
        CMap GO(oi->grad.data() + b * co * cols, co, cols);
        if (need_w) {
          detail::im2col(xi->data.data() + b * ci * cols, ci, t_dim, f_dim, kt, kf, dil_t, dil_f,
                         g.pad_t0, g.pad_f0, col.data());
          CMap C(col.data(), krows, cols);
          Map GW(detail::grad_buf(*wi).data(), co, krows);
          GW.noalias() += GO * C.transpose();
        }
        if (need_x) {
          Map GC(col.data(), krows, cols);
          GC.noalias() = W.transpose() * GO;
          detail::col2im_add(col.data(), ci, t_dim, f_dim, kt, kf, dil_t, dil_f, g.pad_t0,
                             g.pad_f0, detail::grad_buf(*xi).data() + b * ci * cols);
        }
      }
    });
  }
  return out;
}

/// Spiking convolution layer: dilated 2-D convolution over the whole sequence
/// followed by the LIF/NLIF recurrence along time. One leak per layer, one
/// threshold per output channel.
struct SpikingConv2d {
  Tensor weights;  // [Co, Ci, kt, kf]
  int64_t dil_t = 1;
  int64_t dil_f = 1;
  ConvPadding padding = ConvPadding::SameSymmetric;
  NeuronConfig neuron;
  bool stop_grad_norm = false;

  int64_t out_channels() const { return weights.dim(0); }
  int64_t in_channels() const { return weights.dim(1); }
  int64_t kernel_t() const { return weights.dim(2); }
  int64_t kernel_f() const { return weights.dim(3); }

  // Per-channel squared weight norm, on the tape unless stop_grad_norm.
  Tensor w_norm_sq() const {
    const int64_t co = out_channels();
    Tensor flat = reshape(weights, {co, weights.numel() / co});
    Tensor wns = sum_axis(square(flat), 1);
    return stop_grad_norm ? detach(wns) : wns;
  }

  void validate_geometry(int64_t t_dim, int64_t f_dim) const {
    const auto g = detail::conv_geometry(kernel_t(), kernel_f(), dil_t, dil_f, padding);
    if (g.extent_t > t_dim || g.extent_f > f_dim) {
      throw GeometryError("dilated kernel extent " + std::to_string(g.extent_t) + "x" +
                          std::to_string(g.extent_f) + " exceeds input " +
                          std::to_string(t_dim) + "x" + std::to_string(f_dim));
    }
  }

  /// [B, Ci, T, F] -> spike train [B, Co, T, F].
  Tensor forward(const Tensor& x) const {
    const int64_t batch = x.dim(0), t_dim = x.dim(2), f_dim = x.dim(3);
    Tensor conv_seq = conv2d(x, weights, dil_t, dil_f, padding);
    Tensor wns = w_norm_sq();
    MembraneState state = initial_state(batch, out_channels(), f_dim);
    std::vector<Tensor> spikes;
    spikes.reserve(static_cast<size_t>(t_dim));
    for (int64_t n = 0; n < t_dim; ++n) {
      StepResult r = neuron_step(state, select(conv_seq, 2, n), wns, neuron);
      state = std::move(r.state);
      spikes.push_back(std::move(r.spikes));
    }
    return stack(spikes, 2);
  }
};

/// Cumulative receptive field of a stack of (kernel_t, kernel_f, dil_t, dil_f)
/// layers; each layer adds (k-1)*d per axis.
inline std::pair<int64_t, int64_t> receptive_field(
    const std::vector<std::array<int64_t, 4>>& layers) {
  if (layers.empty()) throw ConfigError("receptive_field: empty layer list");
  int64_t rt = 1, rf = 1;
  for (const auto& l : layers) {
    rt += (l[0] - 1) * l[2];
    rf += (l[1] - 1) * l[3];
  }
  return {rt, rf};
}

/// Non-firing time-distributed readout: per-step affine map over the
/// flattened (channels, freq) slice.
struct ReadoutLayer {
  Tensor weights;     // [n_classes, in_features]
  Tensor bias;        // [n_classes]
  float beta = 0.0f;  // leak used by the maxpot variant only
};

struct ReadoutResult {
  Tensor output;                 // [B, n_classes]
  std::vector<Tensor> per_step;  // T entries of [B, n_classes]
};

namespace detail {

inline std::vector<Tensor> per_step_logits(const Tensor& spikes, const ReadoutLayer& layer) {
  if (spikes.rank() != 4) {
    throw ShapeError("readout expects [B,C,T,F] input, got " + shape_str(spikes.shape()));
  }
  const int64_t batch = spikes.dim(0), t_dim = spikes.dim(2);
  const int64_t feat = spikes.dim(1) * spikes.dim(3);
  if (feat != layer.weights.dim(1)) {
    throw ShapeError("readout feature size " + std::to_string(feat) + " does not match weights " +
                     shape_str(layer.weights.shape()));
  }
  const int64_t classes = layer.weights.dim(0);
  Tensor bias_row = reshape(layer.bias, {1, classes});
  std::vector<Tensor> logits;
  logits.reserve(static_cast<size_t>(t_dim));
  for (int64_t n = 0; n < t_dim; ++n) {
    Tensor x = reshape(select(spikes, 2, n), {batch, feat});
    logits.push_back(add(matmul(x, layer.weights, /*transpose_b=*/true), bias_row));
  }
  return logits;
}

}  // namespace detail

/// Mean over time of the per-step logits.
inline ReadoutResult readout_forward(const Tensor& spikes, const ReadoutLayer& layer) {
  std::vector<Tensor> logits = detail::per_step_logits(spikes, layer);
  const int64_t t_dim = static_cast<int64_t>(logits.size());
  Tensor acc = logits[0];
  for (int64_t n = 1; n < t_dim; ++n) acc = add(acc, logits[static_cast<size_t>(n)]);
  return ReadoutResult{scalar_mul(acc, 1.0f / static_cast<float>(t_dim)), std::move(logits)};
}

/// Leaky non-firing integration of the per-step logits, max over time.
inline ReadoutResult readout_forward_maxpot(const Tensor& spikes, const ReadoutLayer& layer) {
  std::vector<Tensor> logits = detail::per_step_logits(spikes, layer);
  std::vector<Tensor> potentials;
  potentials.reserve(logits.size());
  Tensor v = logits[0];
  potentials.push_back(v);
  for (size_t n = 1; n < logits.size(); ++n) {
    v = add(scalar_mul(v, layer.beta), logits[n]);
    potentials.push_back(v);
  }
  Tensor stacked = stack(potentials, 2);  // [B, classes, T]
  return ReadoutResult{max_axis(stacked, 2), std::move(logits)};
}

}  // namespace spikekit
