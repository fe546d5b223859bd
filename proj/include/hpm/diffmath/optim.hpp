#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hpm/diffmath/tensor.hpp"

namespace hpm::diff {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// One AdamW update with bias-corrected moments. Decoupled weight decay
/// (p -= lr * wd * p) is applied before the adaptive step, only to parameters
/// whose `decay` flag is set (all of them when `decay` is empty). Moments are
/// allocated on the first call.
void adamw_step(OptimizerState& state, std::span<Parameter* const> params, double lr,
                const std::vector<bool>& decay = {});

/// Linear warmup to peak = base_lr * batch_size / 256, then cosine decay to floor_lr.
struct LrSchedule {
  double base_lr = 1.5e-4;
  std::size_t batch_size = 256;
  double warmup_epochs = 0.0;
  double total_epochs = 1.0;
  double floor_lr = 0.0;

  double peak() const { return base_lr * static_cast<double>(batch_size) / 256.0; }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

double lr_at(const LrSchedule& sched, double epoch);

}  // namespace hpm::diff
