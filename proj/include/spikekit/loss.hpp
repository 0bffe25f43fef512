#pragma once

#include <cstdint>
#include <vector>

#include "spikekit/errors.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

struct LossConfig {
  float reg_weight = 0.1f;
  bool reg_enabled = true;
  // Optional per-layer weights; empty means the global reg_weight for every layer.
  std::vector<float> reg_layer_weights;
};

/// Mean over the batch of -log softmax(logits)[label], max-stabilized.
/// logits: [B, n_classes].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy expects [B,classes] logits, got " + shape_str(logits.shape()));
  }
  const int64_t batch = logits.dim(0);
  const int64_t classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                    std::to_string(batch));
  }
  std::vector<float> onehot(static_cast<size_t>(batch * classes), 0.0f);
  for (int64_t i = 0; i < batch; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= classes) {
      throw DataError("cross_entropy: label " + std::to_string(label) + " outside [0," +
                      std::to_string(classes) + ")");
    }
    onehot[static_cast<size_t>(i * classes + label)] = 1.0f;
  }
  Tensor shifted = sub(logits, max_axis(logits, 1, /*keepdim=*/true));
  Tensor log_norm = log(sum_axis(exp(shifted), 1, /*keepdim=*/true));
  Tensor log_probs = sub(shifted, log_norm);
  Tensor picked = mul(log_probs, Tensor::from_data({batch, classes}, std::move(onehot)));
  return scalar_mul(sum(picked), -1.0f / static_cast<float>(batch));
}

/// Activity regularizer: (1 / 2KN) * sum of squared spikes. Squaring on the
/// tape makes the backward factor 2*S*sig'_a, which vanishes exactly for
/// neurons that never fired.
inline Tensor spike_regularizer(const Tensor& spikes, int64_t neuron_count,
                                int64_t timestep_count) {
  if (neuron_count <= 0 || timestep_count <= 0) {
    throw DataError("spike_regularizer: neuron and timestep counts must be positive");
  }
  const float scale = 1.0f / (2.0f * static_cast<float>(neuron_count) *
                              static_cast<float>(timestep_count));
  return scalar_mul(sum(square(spikes)), scale);
}

/// ce + sum_l lambda_l * regs[l]; the regularization term is dropped entirely
/// when disabled.
inline Tensor total_loss(const Tensor& ce, const std::vector<Tensor>& regs,
                         const LossConfig& cfg) {
  if (!cfg.reg_enabled || regs.empty()) return ce;
  if (!cfg.reg_layer_weights.empty() && cfg.reg_layer_weights.size() != regs.size()) {
    throw ConfigError("total_loss: per-layer reg weights do not match layer count");
  }
  Tensor acc = ce;
  for (size_t l = 0; l < regs.size(); ++l) {
    const float w = cfg.reg_layer_weights.empty() ? cfg.reg_weight : cfg.reg_layer_weights[l];
    acc = add(acc, scalar_mul(regs[l], w));
  }
  return acc;
}

}  // namespace spikekit
