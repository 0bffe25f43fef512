#pragma once

#include <cmath>
#include <string>

#include "spikekit/errors.hpp"
#include "spikekit/tensor.hpp"

namespace spikekit {

enum class NeuronMode { LIF, NLIF };

inline NeuronMode neuron_mode_from_string(const std::string& s) {
  if (s == "lif" || s == "LIF") return NeuronMode::LIF;
  if (s == "nlif" || s == "NLIF") return NeuronMode::NLIF;
  throw ConfigError("unknown neuron mode '" + s + "'");
}

/// Per-layer neuron parameters. `beta` is a scalar tensor (one leak per
/// layer), `thresholds_b` one entry per output channel. Both may be leaves
/// on the tape when trainable. In NLIF mode the leak is fixed to 1 and
/// `beta` is ignored.
struct NeuronConfig {
  Tensor beta;          // shape {1}
  Tensor thresholds_b;  // shape {C}
  float eps = 1e-8f;
  NeuronMode mode = NeuronMode::LIF;
  float surrogate_a = 10.0f;
  bool reset_detach = false;
};

/// Membrane state carried across timesteps: potentials and previous spikes,
/// both shaped [batch, channels, freq].
struct MembraneState {
  Tensor U;
  Tensor S_prev;
};

inline MembraneState initial_state(int64_t batch, int64_t channels, int64_t freq) {
  return MembraneState{Tensor::zeros({batch, channels, freq}),
                       Tensor::zeros({batch, channels, freq})};
}

/// beta = exp(-dt/tau_mem), both in the same time unit.
inline float beta_from_tau(float tau_mem, float dt) {
  if (!(tau_mem > 0.0f) || !(dt > 0.0f)) {
    throw DomainError("beta_from_tau: tau_mem and dt must be positive");
  }
  return std::exp(-dt / tau_mem);
}

struct StepResult {
  MembraneState state;
  Tensor spikes;
};

namespace detail {

inline void check_step_inputs(const MembraneState& state, const Tensor& input_current) {
  if (input_current.shape() != state.U.shape()) {
    throw ShapeError("neuron step: input current " + shape_str(input_current.shape()) +
                     " does not match state " + shape_str(state.U.shape()));
  }
  for (float v : input_current.values()) {
    if (!std::isfinite(v)) throw NumericError("neuron step: non-finite input current");
  }
}

// Shared body of the LIF/NLIF step. `leaky` selects whether the carried
// potential is scaled by beta.
inline StepResult membrane_step(const MembraneState& state, const Tensor& input_current,
                                const Tensor& w_norm_sq, const NeuronConfig& cfg, bool leaky) {
  check_step_inputs(state, input_current);
  const int64_t channels = state.U.dim(1);
  // Per-channel vectors broadcast as [1,C,1] over [B,C,F].
  Tensor b_c = reshape(cfg.thresholds_b, {1, channels, 1});
  Tensor wns_c = reshape(w_norm_sq, {1, channels, 1});

  Tensor reset_gain = mul(b_c, wns_c);
  Tensor s_carry = cfg.reset_detach ? detach(state.S_prev) : state.S_prev;
  Tensor reset = mul(reset_gain, s_carry);
  Tensor carried = sub(state.U, reset);
  if (leaky) carried = mul(cfg.beta, carried);
  Tensor u_new = add(carried, input_current);

  Tensor denom = add(wns_c, Tensor::scalar(cfg.eps));
  Tensor drive = div(u_new, denom);
  Tensor spikes = spike_threshold(sub(drive, b_c), cfg.surrogate_a);
  return StepResult{MembraneState{u_new, spikes}, spikes};
}

}  // namespace detail

/// One discrete LIF step:
///   U[n] = beta * (U[n-1] - b*||W||^2*S[n-1]) + I[n]
///   S[n] = Theta(U[n] / (||W||^2 + eps) - b)
inline StepResult lif_step(const MembraneState& state, const Tensor& input_current,
                           const Tensor& w_norm_sq, const NeuronConfig& cfg) {
  return detail::membrane_step(state, input_current, w_norm_sq, cfg, /*leaky=*/true);
}

/// Non-leaky variant: identical to lif_step with the leak fixed to 1.
inline StepResult nlif_step(const MembraneState& state, const Tensor& input_current,
                            const Tensor& w_norm_sq, const NeuronConfig& cfg) {
  return detail::membrane_step(state, input_current, w_norm_sq, cfg, /*leaky=*/false);
}

inline StepResult neuron_step(const MembraneState& state, const Tensor& input_current,
                              const Tensor& w_norm_sq, const NeuronConfig& cfg) {
  return cfg.mode == NeuronMode::LIF ? lif_step(state, input_current, w_norm_sq, cfg)
                                     : nlif_step(state, input_current, w_norm_sq, cfg);
}

}  // namespace spikekit
