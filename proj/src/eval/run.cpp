#include "hpm/eval/run.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "hpm/error.hpp"

namespace hpm::eval {

namespace {

constexpr std::uint64_t kHeldoutSalt = 0x686f6c64ULL;
constexpr std::uint64_t kEpochSalt = 1000;

std::string fmt(double v) { return format_double(v); }

void put_params(data::Checkpoint& ck, const std::string& prefix, const model::ModelParams& p) {
  p.for_each([&](const std::string& name, const diff::Parameter& q) { ck.put(prefix + name, q.value); });
}

void get_params(const data::Checkpoint& ck, const std::string& prefix, model::ModelParams& p) {
  p.for_each([&](const std::string& name, diff::Parameter& q) {
    const Tensor& t = ck.get(prefix + name);
    if (t.shape() != q.value.shape())
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "checkpoint tensor " + prefix + name + " has shape " +
                                diff::shape_str(t.shape()) + ", model expects " +
                                diff::shape_str(q.value.shape()));
    q.value = t;
  });
}

}  // namespace

std::vector<const patch::PatchSequence*> Dataset::views() const {
  std::vector<const patch::PatchSequence*> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) out.push_back(&s);
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

Dataset make_dataset(std::vector<data::SampleRecord> records) {
  Dataset d;
  d.records = std::move(records);
  for (const auto& r : d.records) d.sequences.push_back(patch::patchify(r.visual));
  return d;
}

DataSplit load_split(const RunConfig& cfg) {
  const patch::Geometry& g = cfg.engine.geometry;
  if (!cfg.data.path.empty()) return load_split(cfg.data.path, g);
  DataSplit s;
  s.train = make_dataset(data::synth_dataset(cfg.data.synth, g, cfg.data.train_size, 0));
  if (cfg.data.heldout_size > 0)
    s.heldout = make_dataset(
        data::synth_dataset(cfg.data.synth, g, cfg.data.heldout_size, cfg.data.train_size));
  return s;
}

DataSplit load_split(const fs::path& dir, const patch::Geometry& geometry) {
  DataSplit s;
  s.train = make_dataset(data::read_pack(dir / "train", geometry));
  s.heldout = make_dataset(data::read_pack(dir / "test", geometry));
  return s;
}

void write_synthetic_split(const RunConfig& cfg, const fs::path& dir) {
  const patch::Geometry& g = cfg.engine.geometry;
  data::write_pack(dir / "train", data::synth_dataset(cfg.data.synth, g, cfg.data.train_size, 0));
  data::write_pack(dir / "test", data::synth_dataset(cfg.data.synth, g, cfg.data.heldout_size,
                                                     cfg.data.train_size));
}

data::Checkpoint snapshot(const engine::Trainer& trainer, const RunConfig& cfg,
                          std::size_t epochs_done) {
  data::Checkpoint ck;
  ck.config_text = serialize_config(cfg);
  ck.epoch = epochs_done;
  ck.step = trainer.steps_taken();
  ck.rng_state = trainer.rng().state();
  put_params(ck, "student.", trainer.models().student);
  put_params(ck, "teacher.", trainer.models().teacher);
  const diff::OptimizerState& opt = trainer.optimizer();
  const auto names = trainer.models().student.names();
  if (!opt.first_moment.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      ck.put("optim.m." + names[i], opt.first_moment[i]);
      ck.put("optim.v." + names[i], opt.second_moment[i]);
    }
  }
  ck.put("optim.step", Tensor::scalar(static_cast<double>(opt.step)));
  return ck;
}

std::unique_ptr<engine::Trainer> restore(const data::Checkpoint& ck, RunConfig* cfg_out,
                                         std::size_t* epochs_done) {
  RunConfig cfg = parse_config(ck.config_text);
  auto trainer = std::make_unique<engine::Trainer>(cfg.engine, cfg.seed);
  get_params(ck, "student.", trainer->models().student);
  get_params(ck, "teacher.", trainer->models().teacher);
  diff::OptimizerState& opt = trainer->optimizer();
  const auto names = trainer->models().student.names();
  const auto params = trainer->models().student.parameters();
  if (ck.has("optim.m." + names[0])) {
    opt.first_moment.clear();
    opt.second_moment.clear();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const Tensor& m = ck.get("optim.m." + names[i]);
      const Tensor& v = ck.get("optim.v." + names[i]);
      if (m.shape() != params[i]->value.shape() || v.shape() != params[i]->value.shape())
        throw CheckpointError(CheckpointError::Kind::malformed,
                              "optimizer moments for " + names[i] + " have the wrong shape");
      opt.first_moment.push_back(m);
      opt.second_moment.push_back(v);
    }
  }
  opt.step = static_cast<std::uint64_t>(ck.get("optim.step")[0]);
  try {
    trainer->rng().restore(ck.rng_state);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          std::string("checkpoint rng state: ") + e.what());
  }
  trainer->set_steps_taken(ck.step);
  if (cfg_out) *cfg_out = cfg;
  if (epochs_done) *epochs_done = ck.epoch;
  return trainer;
}

LoadedModel load_model(const fs::path& ckpt_path) {
  const data::Checkpoint ck = data::load_checkpoint(ckpt_path);
  LoadedModel out;
  out.config = parse_config(ck.config_text);
  out.models.student = model::init_params(out.config.engine.model, out.config.seed);
  out.models.teacher = out.models.student;
  get_params(ck, "student.", out.models.student);
  get_params(ck, "teacher.", out.models.teacher);
  out.positions = engine::make_positions(out.config.engine);
  return out;
}

std::string metrics_header() {
  return "epoch,step,lr,L_rec,L_pred,alpha_t,hard_count,random_count\n";
}

std::string metrics_row(const engine::StepMetrics& m) {
  return std::to_string(m.epoch) + "," + std::to_string(m.step) + "," + fmt(m.lr) + "," +
         fmt(m.rec_loss) + "," + fmt(m.pred_loss) + "," + fmt(m.alpha) + "," +
         std::to_string(m.hard_count) + "," + std::to_string(m.random_count) + "\n";
}

std::uint64_t seed_override(std::uint64_t config_seed) {
  const char* env = std::getenv("HPM_SEED");
  if (!env || !*env) return config_seed;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-')
    throw ConfigError(std::string("HPM_SEED must be a non-negative integer, got '") + env + "'");
  return v;
}

PretrainResult pretrain(const RunConfig& cfg, const DataSplit& data, const PretrainOptions& opts) {
  const std::size_t bs = cfg.batch_size();
  if (data.train.size() < bs)
    throw ContractError("training set has " + std::to_string(data.train.size()) +
                        " samples, fewer than one batch of " + std::to_string(bs));
  for (const auto& s : data.train.sequences)
    if (!(s.geometry == cfg.engine.geometry))
      throw GeometryError("training sample geometry differs from the config geometry");

  const fs::path out_dir = cfg.output_dir;
  const fs::path latest = out_dir / "latest.ckpt";
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path heldout_path = out_dir / "heldout.csv";

  PretrainResult res;
  std::string metrics_text = metrics_header();
  std::string heldout_text = "epoch,heldout_L_rec\n";

  if (opts.resume && fs::exists(latest)) {
    RunConfig saved;
    res.trainer = restore(data::load_checkpoint(latest), &saved, &res.epochs_done);
    if (!(saved == cfg))
      throw ConfigError("latest.ckpt in " + out_dir.string() + " was written with a different config");
    // Keep only the rows the checkpoint accounts for.
    if (fs::exists(metrics_path)) {
      const std::string old = data::read_file(metrics_path);
      std::size_t pos = 0;
      for (std::size_t line = 0; line < 1 + res.trainer->steps_taken() && pos != std::string::npos; ++line) {
        pos = old.find('\n', pos);
        if (pos != std::string::npos) ++pos;
      }
      metrics_text = pos == std::string::npos ? old : old.substr(0, pos);
    }
    if (fs::exists(heldout_path)) {
      const std::string old = data::read_file(heldout_path);
      std::size_t pos = 0;
      for (std::size_t line = 0; line < 2 + res.epochs_done && pos != std::string::npos; ++line) {
        pos = old.find('\n', pos);
        if (pos != std::string::npos) ++pos;
      }
      heldout_text = pos == std::string::npos ? old : old.substr(0, pos);
    }
  } else {
    res.trainer = std::make_unique<engine::Trainer>(cfg.engine, cfg.seed);
  }
  engine::Trainer& tr = *res.trainer;

  const auto heldout_views = data.heldout.views();
  auto eval_heldout = [&](std::size_t epoch) {
    if (!opts.track_heldout || heldout_views.empty()) return;
    const double v = engine::heldout_rec_loss(tr.models(), tr.config(), tr.positions(), heldout_views,
                                              Rng::derive(cfg.seed, kHeldoutSalt).next(), 32);
    res.heldout.push_back(v);
    heldout_text += std::to_string(epoch) + "," + fmt(v) + "\n";
  };
  if (res.epochs_done == 0) eval_heldout(0);

  if (opts.write_files) {
    fs::create_directories(out_dir);
    data::write_file(metrics_path, metrics_text);
  }

  const auto views = data.train.views();
  std::size_t batches = views.size() / bs;
  if (cfg.steps_per_epoch > 0) batches = std::min(batches, cfg.steps_per_epoch);
  const std::size_t end_epoch =
      opts.stop_after > 0 ? std::min(opts.stop_after, cfg.epochs()) : cfg.epochs();

  for (std::size_t epoch = res.epochs_done; epoch < end_epoch; ++epoch) {
    std::vector<std::size_t> order(views.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng perm = Rng::derive(cfg.seed, kEpochSalt + epoch);
    perm.shuffle(std::span<std::size_t>(order));
    std::string epoch_rows;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<const patch::PatchSequence*> batch;
      for (std::size_t i = 0; i < bs; ++i) batch.push_back(views[order[b * bs + i]]);
      const double progress = static_cast<double>(b) / static_cast<double>(batches);
      const engine::StepMetrics m = tr.train_step(batch, epoch, progress);
      res.steps.push_back(m);
      epoch_rows += metrics_row(m);
      if (opts.on_step) opts.on_step(m);
    }
    res.epochs_done = epoch + 1;
    eval_heldout(res.epochs_done);
    if (opts.write_files) {
      std::ofstream(metrics_path, std::ios::binary | std::ios::app) << epoch_rows;
      data::write_file(heldout_path, heldout_text);
      data::save_checkpoint(latest, snapshot(tr, cfg, res.epochs_done));
    }
  }
  if (opts.write_files && res.epochs_done == cfg.epochs())
    data::save_checkpoint(out_dir / "final.ckpt", snapshot(tr, cfg, res.epochs_done));
  return res;
}

}  // namespace hpm::eval
