#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hpm/dataio/io.hpp"
#include "hpm/engine/trainer.hpp"
#include "hpm/eval/config.hpp"

namespace hpm::eval {

namespace fs = std::filesystem;

/// Samples with their patch sequences, kept side by side.
struct Dataset {
  std::vector<data::SampleRecord> records;
  std::vector<patch::PatchSequence> sequences;

  std::size_t size() const { return records.size(); }
  std::vector<const patch::PatchSequence*> views() const;
  std::vector<std::size_t> labels() const;
};

Dataset make_dataset(std::vector<data::SampleRecord> records);

/// Training and held-out data of a run: `<path>/train` and `<path>/test`
/// packs, or the synthetic generator when no path is set (held-out samples
/// continue the training sample indices).
struct DataSplit {
  Dataset train;
  Dataset heldout;
};

DataSplit load_split(const RunConfig& cfg);
DataSplit load_split(const fs::path& dir, const patch::Geometry& geometry);

/// Writes the synthetic split of `cfg` as two packs under `dir`.
void write_synthetic_split(const RunConfig& cfg, const fs::path& dir);

/// Full training state: student, teacher, optimizer moments, mask stream.
data::Checkpoint snapshot(const engine::Trainer& trainer, const RunConfig& cfg,
                          std::size_t epochs_done);
/// Rebuilds a trainer from a checkpoint; returns the configuration it was saved with.
std::unique_ptr<engine::Trainer> restore(const data::Checkpoint& ckpt, RunConfig* cfg_out,
                                         std::size_t* epochs_done);

/// Loaded models for evaluation commands.
struct LoadedModel {
  RunConfig config;
  engine::ModelPair models;
  engine::PositionTables positions;
};

LoadedModel load_model(const fs::path& ckpt_path);

struct PretrainOptions {
  /// Writes metrics.csv, heldout.csv, latest.ckpt and final.ckpt under output_dir.
  bool write_files = true;
  /// Continue from output_dir/latest.ckpt when present.
  bool resume = false;
  /// Stop after this many completed epochs in total (0: run every epoch).
  std::size_t stop_after = 0;
  /// Evaluate held-out L_rec before training and after every epoch.
  bool track_heldout = true;
  std::function<void(const engine::StepMetrics&)> on_step;
};

struct PretrainResult {
  std::unique_ptr<engine::Trainer> trainer;
  std::vector<engine::StepMetrics> steps;
  /// heldout[e] is the held-out L_rec after e epochs (entry 0 before training).
  std::vector<double> heldout;
  std::size_t epochs_done = 0;
};

/// Runs epochs of train_step over the training split. Each epoch visits the
/// samples in a permutation drawn from (seed, epoch) and drops the last
/// partial batch.
PretrainResult pretrain(const RunConfig& cfg, const DataSplit& data,
                        const PretrainOptions& opts = {});

std::string metrics_header();
std::string metrics_row(const engine::StepMetrics& m);

/// Seed from HPM_SEED when set, else the config seed. Throws ConfigError on a malformed value.
std::uint64_t seed_override(std::uint64_t config_seed);

}  // namespace hpm::eval
