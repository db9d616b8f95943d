#include "retino/optim.hpp"

#include <algorithm>
#include <cmath>

#include "retino/error.hpp"

namespace retino {

namespace {

template <typename Span>
AdamState zeros_like(std::span<const Span> params, AdamHyperparameters hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

}  // namespace

AdamState AdamState::zeros(std::span<const std::span<const double>> params,
                           AdamHyperparameters hyper) {
  return zeros_like(params, hyper);
}

AdamState AdamState::zeros(std::span<const std::span<double>> params,
                           AdamHyperparameters hyper) {
  return zeros_like(params, hyper);
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter/gradient/state tensor count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size() ||
        state.v[i].size() != params[i].size()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor " + std::to_string(i));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw Error(ErrorCode::NonFiniteGradient, "tensor " + std::to_string(i));
      }
    }
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double m_correction = 1.0 - std::pow(h.beta1, t);
  const double v_correction = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    const auto p = params[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      const double m_hat = m[k] / m_correction;
      const double v_hat = v[k] / v_correction;
      p[k] -= h.alpha * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

double PlateauScheduler::update(double epoch_val_accuracy, double current_lr) {
  if (epoch_val_accuracy > best_seen + options.min_delta) {
    best_seen = epoch_val_accuracy;
    wait = 0;
    return current_lr;
  }
  ++wait;
  if (wait >= options.patience) {
    wait = 0;
    // Never raises a rate that already sits below the floor.
    return std::min(current_lr, std::max(current_lr * options.factor, options.min_lr));
  }
  return current_lr;
}

}  // namespace retino
