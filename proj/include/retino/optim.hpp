#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace retino {

struct AdamHyperparameters {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamHyperparameters&) const = default;
};

/// First/second moment estimates per parameter tensor plus the step count.
struct AdamState {
  AdamHyperparameters hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // EMA of gradients
  std::vector<std::vector<double>> v;  // EMA of squared gradients

  /// Zeroed moments shaped like `params`.
  static AdamState zeros(std::span<const std::span<const double>> params,
                         AdamHyperparameters hyper = {});
  static AdamState zeros(std::span<const std::span<double>> params,
                         AdamHyperparameters hyper = {});
};

/// One bias-corrected Adam update, in place:
///   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
///   p <- p - alpha * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// The learning rate used is state.hyper.alpha. Throws ShapeMismatch or
/// NonFiniteGradient before touching anything.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state);

struct PlateauOptions {
  double factor = 0.5;
  int patience = 2;
  double min_delta = 1e-4;
  double min_lr = 1e-6;

  bool operator==(const PlateauOptions&) const = default;
};

/// Reduce-on-plateau watching validation accuracy (higher is better).
struct PlateauScheduler {
  PlateauOptions options;
  double best_seen = -1.0;  // below any accuracy, so epoch 1 always improves
  int wait = 0;

  /// Call once per finished epoch; returns the learning rate to use next.
  double update(double epoch_val_accuracy, double current_lr);
};

}  // namespace retino
