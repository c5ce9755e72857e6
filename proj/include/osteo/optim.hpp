#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "osteo/nn.hpp"

namespace osteo::optim {

class OptimError : public std::runtime_error {
 public:
  explicit OptimError(const std::string& msg) : std::runtime_error(msg) {}
};

// Cosine annealing:
//   final_lr + (base_lr - final_lr) * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(long step, long total_steps, double base_lr, double final_lr);

struct LarsConfig {
  double trust_coeff = 0.001;
  double weight_decay = 1e-6;
  double momentum = 0.9;
};

// LARC (clipped LARS). Per parameter tensor:
//   local_lr = min(trust * ||w|| / (||g|| + wd * ||w||), 1)   (1 if a norm is 0)
//   m <- momentum * m + local_lr * (g + wd * w)
//   w <- w - lr * m
// Batch-norm parameters and biases (column vectors) skip weight decay and
// LARS scaling, following the usual large-batch training convention.
class LarsOptimizer {
 public:
  LarsOptimizer(nn::ParamRefs params, LarsConfig config);

  void zero_grad();
  void step(double lr);

  // Computes the LARC local learning rate for one tensor; exposed for tests.
  static double local_lr(double weight_norm, double grad_norm, double trust_coeff,
                         double weight_decay);

  // Momentum buffers in parameter order, for checkpointing.
  std::vector<nn::Mat>& momentum_state() { return momentum_; }
  const nn::ParamRefs& params() const { return params_; }

 private:
  nn::ParamRefs params_;
  LarsConfig config_;
  std::vector<nn::Mat> momentum_;
};

}  // namespace osteo::optim
