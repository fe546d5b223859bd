#include "hpm/engine/objective.hpp"

#include <cmath>

#include "hpm/diffmath/ops.hpp"
#include "hpm/error.hpp"

namespace hpm::engine {

std::string to_string(PredMode m) {
  switch (m) {
    case PredMode::none: return "none";
    case PredMode::absolute_mse: return "absolute_mse";
    case PredMode::relative_bce: return "relative_bce";
  }
  return "?";
}

std::string to_string(Measure m) {
  return m == Measure::pixel_mse ? "pixel_mse" : "ema_feature_mse";
}

PredMode parse_pred_mode(const std::string& s) {
  if (s == "none") return PredMode::none;
  if (s == "absolute_mse") return PredMode::absolute_mse;
  if (s == "relative_bce") return PredMode::relative_bce;
  throw ConfigError("unknown pred_mode '" + s + "'");
}

Measure parse_measure(const std::string& s) {
  if (s == "pixel_mse") return Measure::pixel_mse;
  if (s == "ema_feature_mse") return Measure::ema_feature_mse;
  throw ConfigError("unknown measure '" + s + "'");
}

namespace {

std::size_t patches_per_sample(const Tensor& t, std::span<const PatchMask> masks) {
  if (masks.empty()) throw ContractError("empty batch");
  const std::size_t n = masks[0].size();
  for (const PatchMask& m : masks)
    if (m.size() != n) throw ContractError("masks differ in length across the batch");
  if (t.rows() != masks.size() * n)
    throw DimensionError("loss input " + diff::shape_str(t.shape()) + " does not hold " +
                         std::to_string(masks.size()) + " samples of " + std::to_string(n) +
                         " patches");
  return n;
}

void check_truth(std::span<const LossField> truth, std::span<const PatchMask> masks) {
  if (truth.size() != masks.size()) throw ContractError("truth and mask batch sizes differ");
  for (std::size_t b = 0; b < truth.size(); ++b)
    if (truth[b].values.size() != masks[b].size())
      throw DimensionError("truth field length " + std::to_string(truth[b].values.size()) +
                           " vs " + std::to_string(masks[b].size()) + " patches");
}

void normalize_rows(Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    double n2 = 0.0;
    for (double x : row) n2 += x * x;
    const double d = std::max(std::sqrt(n2), 1e-12);
    for (double& x : row) x /= d;
  }
}

}  // namespace

RecLoss reconstruction_loss(Var pred, const Tensor& target, std::span<const PatchMask> masks,
                            Measure measure) {
  const std::size_t n = patches_per_sample(pred.value(), masks);
  if (pred.value().shape() != target.shape())
    throw DimensionError("reconstruction_loss: prediction " + diff::shape_str(pred.shape()) +
                         " vs target " + diff::shape_str(target.shape()));
  diff::Tape& tape = pred.tape();
  Var p = pred;
  Tensor tgt = target;
  if (measure == Measure::ema_feature_mse) {
    p = diff::l2_normalize_rows(pred, 1e-12);
    normalize_rows(tgt);
  }
  Var diffv = diff::sub(p, tape.constant(std::move(tgt)));
  Var per_patch = diff::row_mean(diff::mul(diffv, diffv));

  std::vector<std::size_t> rows;
  RecLoss out;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    LossField f;
    f.values.assign(n, 0.0);
    f.role = FieldRole::ground_truth;
    const auto masked = masks[b].masked_ids();
    if (masked.empty()) throw ContractError("reconstruction_loss: sample has no masked patches");
    for (std::size_t i : masked) {
      rows.push_back(b * n + i);
      f.values[i] = per_patch.value()[b * n + i];
    }
    out.truth.push_back(std::move(f));
  }
  // Equal mask counts per sample make the global mean equal the mean of per-sample means.
  const std::size_t k = masks[0].num_masked();
  for (const PatchMask& m : masks)
    if (m.num_masked() != k) throw ContractError("masked counts differ across the batch");
  out.loss = diff::mean(diff::gather_rows(per_patch, rows));
  return out;
}

Var pred_loss_absolute(Var student, std::span<const LossField> truth,
                       std::span<const PatchMask> masks) {
  const std::size_t n = patches_per_sample(student.value(), masks);
  check_truth(truth, masks);
  std::vector<std::size_t> rows;
  std::vector<double> tv;
  std::vector<double> weights;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const auto masked = masks[b].masked_ids();
    if (masked.empty()) throw ContractError("pred_loss_absolute: sample has no masked patches");
    for (std::size_t i : masked) {
      rows.push_back(b * n + i);
      tv.push_back(truth[b].values[i]);
      weights.push_back(1.0 / (static_cast<double>(masked.size()) * masks.size()));
    }
  }
  diff::Tape& tape = student.tape();
  const std::size_t m = rows.size();
  Var d = diff::sub(diff::gather_rows(student, rows), tape.constant(Tensor({m, 1}, std::move(tv))));
  return diff::sum(diff::mul(diff::mul(d, d), tape.constant(Tensor({m, 1}, std::move(weights)))));
}

Var pred_loss_relative(Var student, std::span<const LossField> truth,
                       std::span<const PatchMask> masks) {
  const std::size_t n = patches_per_sample(student.value(), masks);
  check_truth(truth, masks);
  std::vector<std::size_t> left, right;
  std::vector<double> signs, weights;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const auto masked = masks[b].masked_ids();
    if (masked.size() < 2)
      throw ContractError("pred_loss_relative: needs at least 2 masked patches, got " +
                          std::to_string(masked.size()));
    const std::size_t first = left.size();
    for (std::size_t i : masked)
      for (std::size_t j : masked) {
        if (i == j) continue;
        const double ti = truth[b].values[i], tj = truth[b].values[j];
        if (ti == tj) continue;
        left.push_back(b * n + i);
        right.push_back(b * n + j);
        signs.push_back(ti > tj ? 1.0 : -1.0);
      }
    const std::size_t pairs = left.size() - first;
    for (std::size_t p = 0; p < pairs; ++p)
      weights.push_back(1.0 / (static_cast<double>(pairs) * masks.size()));
  }
  diff::Tape& tape = student.tape();
  if (left.empty()) return diff::scale(diff::sum(student), 0.0);
  const std::size_t m = left.size();
  Var gap = diff::sub(diff::gather_rows(student, left), diff::gather_rows(student, right));
  Var oriented = diff::mul(gap, tape.constant(Tensor({m, 1}, std::move(signs))));
  Var terms = diff::softplus(diff::scale(oriented, -1.0));
  return diff::sum(diff::mul(terms, tape.constant(Tensor({m, 1}, std::move(weights)))));
}

Var total_loss(const ObjectiveConfig& cfg, Var rec, const Var* pred) {
  if (cfg.pred_weight < 0.0) throw ConfigError("pred_weight must be non-negative");
  if (cfg.pred_mode == PredMode::none || pred == nullptr) return rec;
  return diff::add(rec, diff::scale(*pred, cfg.pred_weight));
}

}  // namespace hpm::engine
