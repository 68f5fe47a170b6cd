// First-order optimizers over a fixed list of parameter tensors. Each tensor
// slot keeps its own state; direction() returns the amount to subtract.
#pragma once

#include "vedit/autodiff.hpp"

#include <vector>

namespace vedit {

struct RmsPropConfig {
  double lr = 1e-4;
  double alpha = 0.99;
  double eps = 1e-8;
};

class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig cfg) : cfg_(cfg) {}
  ad::Matrix direction(std::size_t slot, const ad::Matrix& grad);
  void step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads);
  const RmsPropConfig& config() const { return cfg_; }

 private:
  RmsPropConfig cfg_;
  std::vector<ad::Matrix> sq_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when nonzero
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  ad::Matrix direction(std::size_t slot, const ad::Matrix& grad);
  /// Applies the update, including decoupled weight decay on `decay` slots.
  void step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads,
            const std::vector<bool>& decay = {});
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ad::Matrix> m_, v_;
  std::vector<long> t_;
};

/// Global L2 norm over a list of tensors.
double global_norm(const std::vector<ad::Matrix>& grads);
/// Rescales in place so the global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_global_norm(std::vector<ad::Matrix>& grads, double max_norm);

}  // namespace vedit
