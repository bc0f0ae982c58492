#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "masdt/tensor.hpp"

namespace masdt {

// A named trainable leaf. depth places the parameter in the layer-wise lr
// schedule: 0 for embeddings, i+1 for block i, encoder_depth+1 for the final
// norm and any heads.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::size_t depth = 0;
};

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double layer_decay = 1.0;   // per-depth multiplier, applied as layer_decay^(max_depth - depth)
  std::size_t max_depth = 0;  // highest depth value across the parameter set
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

class AdamW {
 public:
  AdamW(std::vector<Parameter> params, AdamWConfig config);

  // One update from the accumulated gradients. Decoupled weight decay is
  // applied to the parameter before the moment update, scaled by the group lr.
  void step(const Gradients& grads);

  void zero_state();

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params_mut() { return params_; }
  const AdamWConfig& config() const { return config_; }
  std::size_t step_count() const { return step_; }

  // Snapshot hooks for checkpointing.
  const std::vector<AdamWState>& states() const { return states_; }
  void restore(const std::vector<AdamWState>& states, std::size_t step);

  double group_lr(std::size_t depth) const;

 private:
  std::vector<Parameter> params_;
  AdamWConfig config_;
  std::vector<AdamWState> states_;
  std::size_t step_ = 0;
};

// Single-tensor reference entry point. Updates param values in place.
void adamw_step(Tensor& param, const std::vector<double>& grad, AdamWState& state,
                const AdamWConfig& config, double lr_scale);

}  // namespace masdt
