#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spikekit/errors.hpp"
#include "spikekit/layers.hpp"
#include "spikekit/neuron.hpp"
#include "spikekit/optim.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

struct LayerSpec {
  int64_t channels = 64;
  int64_t kernel_t = 4;
  int64_t kernel_f = 3;
  int64_t dil_t = 1;
  int64_t dil_f = 1;
};

enum class ReadoutVariant { Mean, MaxPot };

/// Model geometry and neuron settings. Defaults are the three stacked dilated
/// spiking convolutions (64 channels, 4x3 kernels, dilations (1,1)/(4,3)/
/// (16,9)) with a 12-class mean-over-time readout on 100x40 inputs.
struct ModelConfig {
  std::vector<LayerSpec> layers = {{64, 4, 3, 1, 1}, {64, 4, 3, 4, 3}, {64, 4, 3, 16, 9}};
  NeuronMode mode = NeuronMode::LIF;
  float surrogate_a = 10.0f;
  ReadoutVariant readout = ReadoutVariant::Mean;
  float readout_beta = 0.0f;
  bool freeze_beta = false;
  bool freeze_b = false;
  bool stop_grad_norm = false;
  bool reset_detach = false;
  ConvPadding padding = ConvPadding::SameSymmetric;
  int n_classes = 12;
  int64_t in_channels = 1;
  int64_t in_t = 100;
  int64_t in_f = 40;
  float b_init_mean = 1.0f;
  float b_init_std = 0.01f;
  float beta_init_mean = 0.7f;
  float beta_init_std = 0.01f;
};

struct SpikingNet {
  ModelConfig cfg;
  std::vector<SpikingConv2d> convs;
  ReadoutLayer readout;
};

struct ModelOutput {
  Tensor logits;                        // [B, n_classes]
  std::vector<Tensor> layer_spikes;     // per conv layer, [B, C, T, F]
  std::vector<Tensor> per_step_logits;  // T entries of [B, n_classes]
};

namespace detail {

inline Tensor uniform_init(Shape shape, float bound, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-bound, bound);
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = u(rng);
  return Tensor::from_data(std::move(shape), std::move(data));
}

inline Tensor normal_init(Shape shape, float mean, float std, float lo, float hi,
                          std::mt19937& rng) {
  std::normal_distribution<float> n(mean, std);
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = std::min(hi, std::max(lo, n(rng)));
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace detail

/// Builds and initializes the network. Conv and readout weights use uniform
/// init scaled by 1/sqrt(fan-in); thresholds ~ N(b_mean, b_std) clamped to
/// [0, inf), leaks ~ N(beta_mean, beta_std) clamped to [0, 1].
inline SpikingNet build_model(const ModelConfig& cfg, uint32_t seed) {
  if (cfg.layers.empty()) throw ConfigError("model needs at least one conv layer");
  std::mt19937 rng(seed);
  SpikingNet net;
  net.cfg = cfg;

  int64_t in_ch = cfg.in_channels;
  for (const LayerSpec& spec : cfg.layers) {
    SpikingConv2d layer;
    const float bound =
        1.0f / std::sqrt(static_cast<float>(in_ch * spec.kernel_t * spec.kernel_f));
    layer.weights = detail::uniform_init({spec.channels, in_ch, spec.kernel_t, spec.kernel_f},
                                         bound, rng);
    layer.dil_t = spec.dil_t;
    layer.dil_f = spec.dil_f;
    layer.padding = cfg.padding;
    layer.stop_grad_norm = cfg.stop_grad_norm;
    layer.neuron.mode = cfg.mode;
    layer.neuron.surrogate_a = cfg.surrogate_a;
    layer.neuron.reset_detach = cfg.reset_detach;
    layer.neuron.thresholds_b = detail::normal_init({spec.channels}, cfg.b_init_mean,
                                                    cfg.b_init_std, 0.0f, 1e30f, rng);
    layer.neuron.beta = detail::normal_init({1}, cfg.beta_init_mean, cfg.beta_init_std, 0.0f,
                                            1.0f, rng);
    layer.validate_geometry(cfg.in_t, cfg.in_f);
    net.convs.push_back(std::move(layer));
    in_ch = spec.channels;
  }

  const int64_t feat = in_ch * cfg.in_f;
  const float bound = 1.0f / std::sqrt(static_cast<float>(feat));
  net.readout.weights = detail::uniform_init({cfg.n_classes, feat}, bound, rng);
  net.readout.bias = Tensor::zeros({cfg.n_classes});
  net.readout.beta = cfg.readout_beta;

  // Mark trainables.
  for (size_t l = 0; l < net.convs.size(); ++l) {
    auto& layer = net.convs[l];
    layer.weights.set_requires_grad(true);
    if (!cfg.freeze_b) layer.neuron.thresholds_b.set_requires_grad(true);
    if (cfg.mode == NeuronMode::LIF && !cfg.freeze_beta) {
      layer.neuron.beta.set_requires_grad(true);
    }
  }
  net.readout.weights.set_requires_grad(true);
  net.readout.bias.set_requires_grad(true);
  return net;
}

inline ModelOutput model_forward(const SpikingNet& net, const Tensor& input) {
  if (input.rank() != 4 || input.dim(1) != net.cfg.in_channels) {
    throw ShapeError("model input must be [B," + std::to_string(net.cfg.in_channels) + ",T,F], got " +
                     shape_str(input.shape()));
  }
  ModelOutput out;
  Tensor x = input;
  for (const auto& layer : net.convs) {
    x = layer.forward(x);
    out.layer_spikes.push_back(x);
  }
  ReadoutResult r = net.cfg.readout == ReadoutVariant::Mean
                        ? readout_forward(x, net.readout)
                        : readout_forward_maxpot(x, net.readout);
  out.logits = r.output;
  out.per_step_logits = std::move(r.per_step);
  return out;
}

/// Trainable leaves in a fixed order, honoring freeze flags and neuron mode.
inline std::vector<ParamRef> trainable_parameters(SpikingNet& net) {
  std::vector<ParamRef> params;
  for (size_t l = 0; l < net.convs.size(); ++l) {
    auto& layer = net.convs[l];
    const std::string prefix = "conv" + std::to_string(l + 1);
    params.push_back({prefix + ".weight", layer.weights, ParamKind::Weight});
    if (layer.neuron.thresholds_b.requires_grad()) {
      params.push_back({prefix + ".threshold", layer.neuron.thresholds_b, ParamKind::Threshold});
    }
    if (net.cfg.mode == NeuronMode::LIF && layer.neuron.beta.requires_grad()) {
      params.push_back({prefix + ".beta", layer.neuron.beta, ParamKind::Beta});
    }
  }
  params.push_back({"readout.weight", net.readout.weights, ParamKind::Weight});
  params.push_back({"readout.bias", net.readout.bias, ParamKind::Bias});
  return params;
}

/// All persistent tensors (for checkpoints), independent of freeze flags.
inline std::vector<ParamRef> model_state(SpikingNet& net) {
  std::vector<ParamRef> params;
  for (size_t l = 0; l < net.convs.size(); ++l) {
    auto& layer = net.convs[l];
    const std::string prefix = "conv" + std::to_string(l + 1);
    params.push_back({prefix + ".weight", layer.weights, ParamKind::Weight});
    params.push_back({prefix + ".threshold", layer.neuron.thresholds_b, ParamKind::Threshold});
    params.push_back({prefix + ".beta", layer.neuron.beta, ParamKind::Beta});
  }
  params.push_back({"readout.weight", net.readout.weights, ParamKind::Weight});
  params.push_back({"readout.bias", net.readout.bias, ParamKind::Bias});
  return params;
}

/// Exact trainable scalar count (weights + biases + thresholds + leaks).
inline int64_t count_parameters(SpikingNet& net) {
  int64_t n = 0;
  for (const auto& p : trainable_parameters(net)) n += p.tensor.numel();
  return n;
}

}  // namespace spikekit
