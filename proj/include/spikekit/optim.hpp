#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spikekit/errors.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

enum class ParamKind { Weight, Bias, Beta, Threshold };

struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

struct OptimConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-5f;
  float grad_clip = 5.0f;
  float lr_gamma = 0.85f;
  int warmup_epochs = 1;
  bool decoupled_decay = false;
};

/// Per-parameter first/second moments plus the shared step counter.
struct MomentState {
  std::vector<std::vector<float>> m, v;
  int64_t t = 0;

  void init(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& p : params) {
      m.emplace_back(p.tensor.numel(), 0.0f);
      v.emplace_back(p.tensor.numel(), 0.0f);
    }
  }
};

/// Elementwise gradient clamp to [-limit, limit]. NaNs pass through and are
/// caught by the step itself.
inline void clip_gradients(std::vector<ParamRef>& params, float limit = 5.0f) {
  for (auto& p : params) {
    auto& g = p.tensor.mutable_grad();
    for (float& x : g) {
      if (x > limit) {
        x = limit;
      } else if (x < -limit) {
        x = -limit;
      }
    }
  }
}

/// Learning rate after warmup: lr * gamma^(epoch - warmup_epochs).
inline float lr_at(int epoch, const OptimConfig& cfg) {
  if (epoch < cfg.warmup_epochs) return 0.0f;  // ramp position needs the step; see lr_at_step
  return cfg.lr * std::pow(cfg.lr_gamma, static_cast<float>(epoch - cfg.warmup_epochs));
}

/// Learning rate including the linear warmup ramp across the first epoch's
/// steps.
inline float lr_at_step(int epoch, int64_t step, int64_t steps_per_epoch,
                        const OptimConfig& cfg) {
  if (epoch < cfg.warmup_epochs) {
    const int64_t total = steps_per_epoch * cfg.warmup_epochs;
    const int64_t done = epoch * steps_per_epoch + step + 1;
    return cfg.lr * static_cast<float>(done) / static_cast<float>(total);
  }
  return lr_at(epoch, cfg);
}

inline void clamp_param(ParamRef& p) {
  auto& data = p.tensor.mutable_values();
  if (p.kind == ParamKind::Beta) {
    for (float& x : data) x = std::min(1.0f, std::max(0.0f, x));
  } else if (p.kind == ParamKind::Threshold) {
    for (float& x : data) x = std::max(0.0f, x);
  }
}

/// One Rectified-Adam update at learning rate lr_t. Weight decay is coupled
/// L2 by default (added to the gradient before the moments) and applies to
/// weights and biases only; thresholds and leaks are exempt and clamped to
/// their valid ranges after the update.
inline void radam_step(std::vector<ParamRef>& params, MomentState& state, const OptimConfig& cfg,
                       float lr_t) {
  if (state.m.size() != params.size()) {
    throw ContractError("optimizer state does not match parameter list");
  }
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double t = static_cast<double>(state.t);
  const double b1t = std::pow(b1, t);
  const double b2t = std::pow(b2, t);
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  const double bias1 = 1.0 - b1t;
  double rect = 0.0;
  const bool rectified = rho_t > 4.0;
  if (rectified) {
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }

  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamRef& p = params[pi];
    const auto& grad = p.tensor.grad();
    auto& data = p.tensor.mutable_values();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const bool decays = (p.kind == ParamKind::Weight || p.kind == ParamKind::Bias) &&
                        cfg.weight_decay > 0.0f;
    for (size_t i = 0; i < data.size(); ++i) {
      float g = grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
      if (decays && !cfg.decoupled_decay) g += cfg.weight_decay * data[i];
      m[i] = static_cast<float>(b1) * m[i] + static_cast<float>(1.0 - b1) * g;
      v[i] = static_cast<float>(b2) * v[i] + static_cast<float>(1.0 - b2) * g * g;
      const float mhat = m[i] / static_cast<float>(bias1);
      float delta;
      if (rectified) {
        const float vhat = std::sqrt(v[i] / static_cast<float>(1.0 - b2t));
        delta = lr_t * static_cast<float>(rect) * mhat / (vhat + cfg.eps);
      } else {
        delta = lr_t * mhat;
      }
      if (decays && cfg.decoupled_decay) delta += lr_t * cfg.weight_decay * data[i];
      data[i] -= delta;
    }
    clamp_param(p);
  }
}

}  // namespace spikekit
