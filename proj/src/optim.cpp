#include "crl/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "crl/types.hpp"

namespace crl {

void adamw_step(std::vector<ParamBlock>& blocks, OptimizerState& state, double lr,
                const AdamWOptions& options) {
  if (state.first_moment.empty()) {
    for (const auto& b : blocks) {
      state.first_moment.push_back(Eigen::ArrayXd::Zero(b.size));
      state.second_moment.push_back(Eigen::ArrayXd::Zero(b.size));
    }
  }
  if (state.first_moment.size() != blocks.size()) {
    throw dimension_error("adamw_step: optimizer state has " +
                          std::to_string(state.first_moment.size()) + " blocks, parameters have " +
                          std::to_string(blocks.size()));
  }
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    if (state.first_moment[k].size() != b.size) {
      throw dimension_error("adamw_step: accumulator shape mismatch for block '" + b.name + "'");
    }
    if (!Eigen::Map<const Eigen::ArrayXd>(b.grad, b.size).allFinite()) {
      throw Error(ErrorCategory::numeric,
                  "adamw_step: non-finite gradient in block '" + b.name + "' at step " +
                      std::to_string(state.step + 1));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);

  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto& b = blocks[k];
    Eigen::Map<Eigen::ArrayXd> p(b.value, b.size);
    Eigen::Map<const Eigen::ArrayXd> g(b.grad, b.size);
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];

    if (b.decay && options.weight_decay != 0.0) p *= 1.0 - lr * options.weight_decay;
    m = options.beta1 * m + (1.0 - options.beta1) * g;
    v = options.beta2 * v + (1.0 - options.beta2) * g.square();
    p -= lr * (m / correction1) / ((v / correction2).sqrt() + options.epsilon);
    if (b.clamp_unit) p = p.max(0.0).min(1.0);
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_init) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw std::invalid_argument("cosine_lr: need 0 <= step <= total_steps and total_steps > 0");
  }
  if (step == total_steps) return 0.0;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_init * 0.5 * (1.0 + std::cos(phase));
}

}  // namespace crl
