#include "hpm/diffmath/optim.hpp"

#include <cmath>
#include <numbers>

#include "hpm/error.hpp"

namespace hpm::diff {

void adamw_step(OptimizerState& state, std::span<Parameter* const> params, double lr,
                const std::vector<bool>& decay) {
  if (lr < 0.0) throw ContractError("adamw_step: negative learning rate");
  if (!decay.empty() && decay.size() != params.size())
    throw DimensionError("adamw_step: decay flags do not match parameter count");
  if (state.first_moment.empty()) {
    for (Parameter* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw DimensionError("adamw_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " tensors, got " +
                         std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (state.first_moment[i].shape() != p.value.shape() || p.grad.shape() != p.value.shape())
      throw DimensionError("adamw_step: shape mismatch at parameter " + std::to_string(i) + ", " +
                           shape_str(p.value.shape()) + " vs moment " +
                           shape_str(state.first_moment[i].shape()) + " / grad " +
                           shape_str(p.grad.shape()));
  }

  ++state.step;
  const AdamWConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const bool wd = decay.empty() || decay[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      if (wd) p.value[k] -= lr * c.weight_decay * p.value[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double lr_at(const LrSchedule& s, double epoch) {
  if (!(epoch >= 0.0 && epoch <= s.total_epochs))
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(s.total_epochs) + "]");
  const double peak = s.peak();
  if (epoch < s.warmup_epochs) return peak * epoch / s.warmup_epochs;
  const double span = s.total_epochs - s.warmup_epochs;
  if (span <= 0.0) return peak;
  const double progress = (epoch - s.warmup_epochs) / span;
  return s.floor_lr + (peak - s.floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace hpm::diff
