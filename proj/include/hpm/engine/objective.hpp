#pragma once

#include <span>
#include <string>
#include <vector>

#include "hpm/diffmath/tape.hpp"
#include "hpm/engine/masking.hpp"

namespace hpm::engine {

using diff::Tensor;
using diff::Var;

enum class PredMode { none, absolute_mse, relative_bce };
enum class Measure { pixel_mse, ema_feature_mse };

std::string to_string(PredMode m);
std::string to_string(Measure m);
PredMode parse_pred_mode(const std::string& s);
Measure parse_measure(const std::string& s);

struct ObjectiveConfig {
  PredMode pred_mode = PredMode::relative_bce;
  Measure measure = Measure::pixel_mse;
  double pred_weight = 1.0;

  friend bool operator==(const ObjectiveConfig&, const ObjectiveConfig&) = default;
};

enum class FieldRole { teacher_pred, student_pred, ground_truth };

/// One scalar per patch.
struct LossField {
  std::vector<double> values;
  FieldRole role = FieldRole::ground_truth;
};

struct RecLoss {
  Var loss;                        // mean over masked patches, averaged over the batch
  std::vector<LossField> truth;    // per-sample, zeros at visible positions, detached
};

/// pred and target are [B*N x d], sample-major, one mask per sample.
/// pixel_mse: per-patch mean squared error over the patch vector.
/// ema_feature_mse: the same after l2-normalizing prediction and target rows.
RecLoss reconstruction_loss(Var pred, const Tensor& target, std::span<const PatchMask> masks,
                            Measure measure);

/// Mean over masked patches of (L^s - truth)^2; truth enters as a constant.
/// student is [B*N x 1].
Var pred_loss_absolute(Var student, std::span<const LossField> truth,
                       std::span<const PatchMask> masks);

/// Pairwise ranking loss over ordered masked pairs (i, j), i != j:
/// softplus(-(L^s_i - L^s_j)) when truth_i > truth_j, softplus(L^s_i - L^s_j)
/// when truth_i < truth_j, nothing on ties. Each sample's sum is divided by its
/// number of contributing pairs (a sample with none contributes 0), then the
/// samples are averaged.
Var pred_loss_relative(Var student, std::span<const LossField> truth,
                       std::span<const PatchMask> masks);

/// L_rec + pred_weight * L_pred, or L_rec alone when pred_mode is none.
Var total_loss(const ObjectiveConfig& cfg, Var rec, const Var* pred);

}  // namespace hpm::engine
