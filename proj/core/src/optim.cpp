#include "masdt/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace masdt {

void adamw_step(Tensor& param, const std::vector<double>& grad, AdamWState& state,
                const AdamWConfig& config, double lr_scale) {
  auto& p = param.values_mut();
  if (grad.size() != p.size()) throw std::invalid_argument("adamw_step: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(p.size(), 0.0);
    state.v.assign(p.size(), 0.0);
  }
  state.step += 1;
  const double lr = config.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= lr * config.weight_decay * p[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

AdamW::AdamW(std::vector<Parameter> params, AdamWConfig config)
    : params_(std::move(params)), config_(config), states_(params_.size()) {
  for (const auto& p : params_) {
    if (!p.tensor.defined()) throw std::invalid_argument("AdamW: undefined parameter " + p.name);
    if (p.depth > config_.max_depth) throw std::invalid_argument("AdamW: depth exceeds max_depth for " + p.name);
  }
}

double AdamW::group_lr(std::size_t depth) const {
  return std::pow(config_.layer_decay, static_cast<double>(config_.max_depth - depth));
}

void AdamW::step(const Gradients& grads) {
  step_ += 1;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& st = states_[k];
    if (st.m.empty()) {
      st.m.assign(p.tensor.numel(), 0.0);
      st.v.assign(p.tensor.numel(), 0.0);
    }
    st.step = step_;
    const double lr = config_.lr * group_lr(p.depth);
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const std::vector<double>* g = grads.find(p.tensor.node().get());
    auto& vals = p.tensor.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      vals[i] -= lr * config_.weight_decay * vals[i];
      st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * gi;
      st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      vals[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void AdamW::zero_state() {
  for (auto& st : states_) {
    st.m.clear();
    st.v.clear();
    st.step = 0;
  }
  step_ = 0;
}

void AdamW::restore(const std::vector<AdamWState>& states, std::size_t step) {
  if (states.size() != params_.size()) throw std::invalid_argument("AdamW::restore: state count mismatch");
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (!states[k].m.empty() && states[k].m.size() != params_[k].tensor.numel()) {
      throw std::invalid_argument("AdamW::restore: state size mismatch for " + params_[k].name);
    }
  }
  states_ = states;
  step_ = step;
}

}  // namespace masdt
