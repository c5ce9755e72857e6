#include "osteo/optim.hpp"

#include <cmath>

namespace osteo::optim {

double cosine_lr(long step, long total_steps, double base_lr, double final_lr) {
  if (total_steps < 1) throw OptimError("total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw OptimError("step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  double t = static_cast<double>(step) / total_steps;
  return final_lr + (base_lr - final_lr) * (1.0 + std::cos(M_PI * t)) / 2.0;
}

LarsOptimizer::LarsOptimizer(nn::ParamRefs params, LarsConfig config)
    : params_(std::move(params)), config_(config) {
  for (const nn::Param* p : params_)
    momentum_.emplace_back(nn::Mat::Zero(p->value.rows(), p->value.cols()));
}

void LarsOptimizer::zero_grad() {
  for (nn::Param* p : params_)
    if (p->trainable) p->zero_grad();
}

double LarsOptimizer::local_lr(double weight_norm, double grad_norm, double trust_coeff,
                               double weight_decay) {
  if (weight_norm <= 0.0 || grad_norm <= 0.0) return 1.0;
  double lr = trust_coeff * weight_norm / (grad_norm + weight_decay * weight_norm);
  return std::min(lr, 1.0);
}

void LarsOptimizer::step(double lr) {
  if (lr < 0.0) throw OptimError("learning rate must be non-negative");
  for (size_t i = 0; i < params_.size(); ++i) {
    nn::Param* p = params_[i];
    if (!p->trainable) continue;
    if (!p->grad.allFinite())
      throw OptimError("non-finite gradient in parameter " + p->name);
    const bool is_vector = p->value.cols() == 1;  // bias / BN scale & shift
    double wd = is_vector ? 0.0 : config_.weight_decay;
    double llr = is_vector ? 1.0
                           : local_lr(p->value.norm(), p->grad.norm(), config_.trust_coeff,
                                      config_.weight_decay);
    nn::Mat update = p->grad + wd * p->value;
    momentum_[i] = config_.momentum * momentum_[i] + llr * update;
    p->value -= lr * momentum_[i];
  }
}

}  // namespace osteo::optim
