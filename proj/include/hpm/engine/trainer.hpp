#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hpm/diffmath/optim.hpp"
#include "hpm/engine/masking.hpp"
#include "hpm/engine/objective.hpp"
#include "hpm/model/model.hpp"
#include "hpm/patchkit/patch.hpp"
#include "hpm/rng.hpp"

namespace hpm::engine {

struct EmaConfig {
  double momentum = 0.999;
  friend bool operator==(const EmaConfig&, const EmaConfig&) = default;
};

/// teacher <- m * teacher + (1 - m) * student over every parameter of theta, phi and psi.
void ema_update(model::ModelParams& teacher, const model::ModelParams& student,
                const EmaConfig& cfg);

/// Everything one training run needs besides data.
struct EngineConfig {
  patch::Geometry geometry;
  model::ModelConfig model;
  MaskPlan mask;
  ObjectiveConfig objective;
  patch::TargetConfig target;
  EmaConfig ema;
  diff::LrSchedule schedule;
  diff::AdamWConfig optimizer;

  /// Derives token_dim and head widths from geometry and target mode, then
  /// checks cross-field consistency. Throws ConfigError.
  void resolve();

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

struct PositionTables {
  Tensor encoder;
  Tensor reconstructor;
  Tensor predictor;
};

PositionTables make_positions(const EngineConfig& cfg);

struct ModelPair {
  model::ModelParams student;
  model::ModelParams teacher;
};

struct StepMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double rec_loss = 0.0;
  double pred_loss = 0.0;
  double alpha = 0.0;
  std::size_t hard_count = 0;    // per sample
  std::size_t random_count = 0;  // per sample
};

/// Student forward and losses for fixed masks. `frozen_truth`, when given,
/// replaces the ground-truth field the predictor is scored against.
struct Objective {
  Var total;
  Var rec;
  Var pred;
  bool has_pred = false;
  std::vector<LossField> truth;
};

Objective compute_objective(diff::Tape& tape, model::ModelParams& student, const EngineConfig& cfg,
                            const PositionTables& pos, std::span<const Tensor* const> tokens,
                            const Tensor& targets, std::span<const PatchMask> masks,
                            const std::vector<LossField>* frozen_truth = nullptr);

/// No-grad forward of `params` on the full sequence of each sample: the
/// predicted loss field and (when wanted) the final encoder rows.
struct FullView {
  std::vector<LossField> fields;
  std::vector<Tensor> features;
};

FullView full_view(model::ModelParams& params, const PositionTables& pos,
                   std::span<const patch::PatchSequence* const> batch, bool want_features);

/// Stacked reconstruction targets [B*N x d] for a batch.
Tensor batch_targets(const EngineConfig& cfg, std::span<const patch::PatchSequence* const> batch,
                     const std::vector<Tensor>* teacher_features);

/// Owns the student/teacher pair, optimizer and mask random stream of one run.
class Trainer {
 public:
  Trainer(EngineConfig cfg, std::uint64_t seed);

  /// One HPM step: teacher loss prediction, mask generation at alpha_t(epoch),
  /// student update at lr_at(epoch + progress), then EMA refresh.
  StepMetrics train_step(std::span<const patch::PatchSequence* const> batch, std::size_t epoch,
                         double progress);

  /// Masks the most recent step used (one per sample).
  const std::vector<PatchMask>& last_masks() const { return last_masks_; }

  const EngineConfig& config() const { return cfg_; }
  const PositionTables& positions() const { return pos_; }
  ModelPair& models() { return models_; }
  const ModelPair& models() const { return models_; }
  diff::OptimizerState& optimizer() { return optim_; }
  const diff::OptimizerState& optimizer() const { return optim_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  std::size_t steps_taken() const { return steps_; }
  void set_steps_taken(std::size_t s) { steps_ = s; }

 private:
  EngineConfig cfg_;
  PositionTables pos_;
  ModelPair models_;
  diff::OptimizerState optim_;
  std::vector<bool> decay_;
  Rng rng_;
  std::size_t steps_ = 0;
  std::vector<PatchMask> last_masks_;
};

/// Mean over masked patches of the student's reconstruction loss under
/// random masks drawn from a stream seeded by `seed` (no parameter updates).
/// The teacher only supplies targets in ema_features mode.
double heldout_rec_loss(ModelPair& models, const EngineConfig& cfg,
                        const PositionTables& pos,
                        std::span<const patch::PatchSequence* const> data, std::uint64_t seed,
                        std::size_t batch_size = 32);

/// Mean-pooled encoder features with every patch visible, restricted to
/// `subset[b]` when non-empty. Returns one row per sample.
Tensor pooled_features(model::ModelParams& params, const PositionTables& pos,
                       std::span<const patch::PatchSequence* const> data,
                       const std::vector<std::vector<std::size_t>>* subset = nullptr,
                       std::size_t batch_size = 64);

}  // namespace hpm::engine
