#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace crl {

/// A flat view of one parameter block and its gradient.
struct ParamBlock {
  double* value = nullptr;
  const double* grad = nullptr;
  Eigen::Index size = 0;
  bool decay = true;        // decoupled weight decay applies
  bool clamp_unit = false;  // project onto [0,1] after the update
  std::string name;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<Eigen::ArrayXd> first_moment;
  std::vector<Eigen::ArrayXd> second_moment;
  std::int64_t step = 0;
};

/// One AdamW update with bias correction:
///   p <- p - lr * wd * p                  (blocks with decay only)
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// followed by clamping to [0,1] for blocks flagged clamp_unit.
/// Throws crl::Error (numeric) before touching anything if a gradient is not finite.
void adamw_step(std::vector<ParamBlock>& blocks, OptimizerState& state, double lr,
                const AdamWOptions& options);

/// lr_init * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_init);

}  // namespace crl
