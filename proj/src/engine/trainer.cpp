#include "hpm/engine/trainer.hpp"

#include <algorithm>

#include "hpm/diffmath/ops.hpp"
#include "hpm/error.hpp"

namespace hpm::engine {

void ema_update(model::ModelParams& teacher, const model::ModelParams& student,
                const EmaConfig& cfg) {
  const double m = cfg.momentum;
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("EMA momentum must lie in [0, 1]");
  auto t = teacher.parameters();
  std::vector<const diff::Parameter*> s;
  student.for_each([&](const std::string&, const diff::Parameter& p) { s.push_back(&p); });
  if (t.size() != s.size())
    throw ContractError("ema_update: teacher has " + std::to_string(t.size()) +
                        " tensors, student " + std::to_string(s.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i]->value.shape() != s[i]->value.shape())
      throw ContractError("ema_update: shape mismatch at tensor " + std::to_string(i) + ", " +
                          diff::shape_str(t[i]->value.shape()) + " vs " +
                          diff::shape_str(s[i]->value.shape()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    Tensor& tv = t[i]->value;
    const Tensor& sv = s[i]->value;
    if (m == 0.0) {
      tv = sv;
      continue;
    }
    for (std::size_t k = 0; k < tv.size(); ++k) tv[k] += (1.0 - m) * (sv[k] - tv[k]);
  }
}

void EngineConfig::resolve() {
  geometry.validate();
  model.encoder.token_dim = geometry.token_dim();
  const bool features = target.mode == patch::TargetMode::ema_features;
  model.reconstructor.output_dim = features ? model.encoder.width : geometry.token_dim();
  model.predictor.output_dim = 1;
  model.validate();
  if (features != (objective.measure == Measure::ema_feature_mse))
    throw ConfigError("measure ema_feature_mse goes with target ema_features, pixel_mse with pixels");
  if (!(mask.alpha0 >= 0.0 && mask.alpha0 <= 1.0 && mask.alphaT >= 0.0 && mask.alphaT <= 1.0))
    throw ConfigError("alpha0 and alphaT must lie in [0, 1]");
  masked_count(mask.gamma, mask.per_frame ? geometry.patches_per_slice() : geometry.num_patches());
  if (!(ema.momentum >= 0.0 && ema.momentum < 1.0))
    throw ConfigError("EMA momentum must lie in [0, 1)");
  if (objective.pred_weight < 0.0) throw ConfigError("pred_weight must be non-negative");
  if (target.eps <= 0.0) throw ConfigError("target eps must be positive");
  if (schedule.batch_size == 0) throw ConfigError("batch_size must be positive");
  schedule.total_epochs = static_cast<double>(mask.total_epochs);
  if (schedule.warmup_epochs < 0.0 || schedule.warmup_epochs > schedule.total_epochs)
    throw ConfigError("warmup_epochs must lie in [0, epochs]");
}

PositionTables make_positions(const EngineConfig& cfg) {
  return {patch::sincos_embed(cfg.geometry, cfg.model.encoder.width),
          patch::sincos_embed(cfg.geometry, cfg.model.reconstructor.width),
          patch::sincos_embed(cfg.geometry, cfg.model.predictor.width)};
}

Objective compute_objective(diff::Tape& tape, model::ModelParams& student, const EngineConfig& cfg,
                            const PositionTables& pos, std::span<const Tensor* const> tokens,
                            const Tensor& targets, std::span<const PatchMask> masks,
                            const std::vector<LossField>* frozen_truth) {
  const std::size_t n = cfg.geometry.num_patches();
  std::vector<std::vector<std::size_t>> keep;
  keep.reserve(masks.size());
  for (const PatchMask& m : masks) keep.push_back(m.keep_ids());

  Var latents = model::encode(tape, student.encoder, tokens, keep, pos.encoder);
  Var recon = model::decode(tape, student.reconstructor, latents, keep, n, pos.reconstructor);
  RecLoss rec = reconstruction_loss(recon, targets, masks, cfg.objective.measure);

  Objective out;
  out.rec = rec.loss;
  out.truth = std::move(rec.truth);
  if (cfg.objective.pred_mode != PredMode::none) {
    Var lhat = model::decode(tape, student.predictor, latents, keep, n, pos.predictor);
    const std::vector<LossField>& truth = frozen_truth ? *frozen_truth : out.truth;
    out.pred = cfg.objective.pred_mode == PredMode::absolute_mse
                   ? pred_loss_absolute(lhat, truth, masks)
                   : pred_loss_relative(lhat, truth, masks);
    out.has_pred = true;
  }
  out.total = total_loss(cfg.objective, out.rec, out.has_pred ? &out.pred : nullptr);
  return out;
}

FullView full_view(model::ModelParams& params, const PositionTables& pos,
                   std::span<const patch::PatchSequence* const> batch, bool want_features) {
  FullView out;
  if (batch.empty()) return out;
  const std::size_t n = batch[0]->geometry.num_patches();
  std::vector<const Tensor*> tokens;
  for (const auto* s : batch) tokens.push_back(&s->tokens);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  std::vector<std::vector<std::size_t>> keep(batch.size(), all);

  diff::Tape tape(false);
  Var latents = model::encode(tape, params.encoder, tokens, keep, pos.encoder);
  Var lhat = model::decode(tape, params.predictor, latents, keep, n, pos.predictor);
  const std::size_t w = latents.value().cols();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    LossField f;
    f.role = FieldRole::teacher_pred;
    f.values.assign(lhat.value().data() + b * n, lhat.value().data() + (b + 1) * n);
    out.fields.push_back(std::move(f));
    if (want_features) {
      Tensor feat({n, w});
      std::copy_n(latents.value().data() + b * n * w, n * w, feat.data());
      out.features.push_back(std::move(feat));
    }
  }
  return out;
}

Tensor batch_targets(const EngineConfig& cfg, std::span<const patch::PatchSequence* const> batch,
                     const std::vector<Tensor>* teacher_features) {
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < batch.size(); ++b)
    parts.push_back(patch::make_targets(*batch[b], cfg.target,
                                        teacher_features ? &(*teacher_features)[b] : nullptr));
  const std::size_t rows = parts[0].rows(), d = parts[0].cols();
  Tensor out({batch.size() * rows, d});
  for (std::size_t b = 0; b < parts.size(); ++b)
    std::copy_n(parts[b].data(), rows * d, out.data() + b * rows * d);
  return out;
}

Trainer::Trainer(EngineConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.resolve();
  pos_ = make_positions(cfg_);
  models_.student = model::init_params(cfg_.model, seed);
  models_.teacher = models_.student;
  optim_.config = cfg_.optimizer;
  decay_ = model::decay_mask(models_.student);
  rng_ = Rng::derive(seed, 0x6d61736bULL);
}

StepMetrics Trainer::train_step(std::span<const patch::PatchSequence* const> batch,
                                std::size_t epoch, double progress) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const patch::Geometry& g = cfg_.geometry;
  const std::size_t n = g.num_patches();
  for (const auto* s : batch)
    if (!(s->geometry == g)) throw GeometryError("train_step: sample geometry differs from config");

  const double alpha = alpha_at(cfg_.mask, epoch);
  const bool features = cfg_.target.mode == patch::TargetMode::ema_features;
  const bool need_teacher = cfg_.mask.policy != MaskPolicy::random || features;
  FullView teacher_view;
  if (need_teacher) teacher_view = full_view(models_.teacher, pos_, batch, features);

  std::vector<PatchMask> masks;
  const std::vector<double> flat(n, 0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::span<const double> field = need_teacher ? std::span<const double>(teacher_view.fields[b].values)
                                                 : std::span<const double>(flat);
    masks.push_back(generate_mask_at(field, cfg_.mask, alpha, rng_, g.patches_per_slice()));
  }
  const Tensor targets = batch_targets(cfg_, batch, features ? &teacher_view.features : nullptr);

  std::vector<const Tensor*> tokens;
  for (const auto* s : batch) tokens.push_back(&s->tokens);

  models_.student.zero_grad();
  diff::Tape tape;
  Objective obj = compute_objective(tape, models_.student, cfg_, pos_, tokens, targets, masks);
  tape.backward(obj.total);

  const double at = std::min(static_cast<double>(epoch) + progress, cfg_.schedule.total_epochs);
  const double lr = diff::lr_at(cfg_.schedule, at);
  auto params = models_.student.parameters();
  diff::adamw_step(optim_, params, lr, decay_);
  ema_update(models_.teacher, models_.student, cfg_.ema);

  StepMetrics m;
  m.epoch = epoch;
  m.step = steps_++;
  m.lr = lr;
  m.rec_loss = obj.rec.value()[0];
  m.pred_loss = obj.has_pred ? obj.pred.value()[0] : 0.0;
  m.alpha = alpha;
  m.hard_count = masks[0].hard_ids.size();
  m.random_count = masks[0].random_ids.size();
  last_masks_ = std::move(masks);
  return m;
}

double heldout_rec_loss(ModelPair& models, const EngineConfig& cfg, const PositionTables& pos,
                        std::span<const patch::PatchSequence* const> data, std::uint64_t seed,
                        std::size_t batch_size) {
  if (data.empty()) throw ContractError("heldout_rec_loss: empty data");
  Rng rng(seed);
  MaskPlan plan = cfg.mask;
  plan.policy = MaskPolicy::random;
  const bool features = cfg.target.mode == patch::TargetMode::ema_features;
  const std::size_t n = cfg.geometry.num_patches();
  const std::vector<double> flat(n, 0.0);
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    auto batch = data.subspan(start, end - start);
    FullView tv;
    if (features) tv = full_view(models.teacher, pos, batch, true);
    std::vector<PatchMask> masks;
    for (std::size_t b = 0; b < batch.size(); ++b)
      masks.push_back(generate_mask_at(flat, plan, 0.0, rng, cfg.geometry.patches_per_slice()));
    const Tensor targets = batch_targets(cfg, batch, features ? &tv.features : nullptr);
    std::vector<const Tensor*> tokens;
    for (const auto* s : batch) tokens.push_back(&s->tokens);
    EngineConfig rec_only = cfg;
    rec_only.objective.pred_mode = PredMode::none;
    diff::Tape tape(false);
    Objective obj =
        compute_objective(tape, models.student, rec_only, pos, tokens, targets, masks);
    total += obj.rec.value()[0] * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(data.size());
}

Tensor pooled_features(model::ModelParams& params, const PositionTables& pos,
                       std::span<const patch::PatchSequence* const> data,
                       const std::vector<std::vector<std::size_t>>* subset,
                       std::size_t batch_size) {
  if (data.empty()) throw ContractError("pooled_features: empty data");
  const std::size_t n = data[0]->geometry.num_patches();
  const std::size_t w = params.config.encoder.width;
  Tensor out({data.size(), w});
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Tensor*> tokens;
    for (std::size_t i = start; i < end; ++i) tokens.push_back(&data[i]->tokens);
    std::vector<std::vector<std::size_t>> keep(end - start, all);
    diff::Tape tape(false);
    Var lat = model::encode(tape, params.encoder, tokens, keep, pos.encoder);
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t b = i - start;
      const std::vector<std::size_t>& rows = subset && !(*subset)[i].empty() ? (*subset)[i] : all;
      for (std::size_t r : rows) {
        if (r >= n) throw IndexError("pooled_features: subset id " + std::to_string(r));
        for (std::size_t c = 0; c < w; ++c) out.at(i, c) += lat.value().at(b * n + r, c);
      }
      for (std::size_t c = 0; c < w; ++c) out.at(i, c) /= static_cast<double>(rows.size());
    }
  }
  return out;
}

}  // namespace hpm::engine
