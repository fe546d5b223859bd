#pragma once

#include <cstdint>
#include <string>

#include "hpm/dataio/synth.hpp"
#include "hpm/engine/trainer.hpp"

namespace hpm::eval {

using diff::Tensor;

struct DataConfig {
  /// Dataset pack directory; empty selects in-memory synthetic data.
  std::string path;
  data::SynthSpec synth;
  std::size_t train_size = 512;
  std::size_t heldout_size = 128;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ProbeConfig {
  std::size_t epochs = 100;
  double lr = 0.01;
  std::size_t batch_size = 32;
  double weight_decay = 0.0;

  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

/// Complete description of a run. Epoch count and batch size live in
/// engine.mask.total_epochs and engine.schedule.batch_size.
struct RunConfig {
  engine::EngineConfig engine;
  std::uint64_t seed = 7;
  /// Caps the steps per epoch; 0 runs every full batch of the training set.
  std::size_t steps_per_epoch = 0;
  DataConfig data;
  ProbeConfig probe;
  std::string output_dir = "runs/default";

  std::size_t epochs() const { return engine.mask.total_epochs; }
  std::size_t batch_size() const { return engine.schedule.batch_size; }

  /// Resolves the engine config and syncs the synthetic spec with the geometry.
  void resolve();

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Desk-scale reference run: 32x32x3 images, P = 8 (N = 16), gamma 0.75,
/// alpha 0 -> 0.5, relative ranking loss, 20 epochs, 512 synthetic images, seed 7.
RunConfig reference_config();

/// N = 8 patches, 2-block encoder; small enough for full finite differences.
RunConfig toy_config();

/// `key = value` lines grouped under `[section]` headers; `#` starts a comment.
/// Unknown sections or keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& cfg);

RunConfig load_config(const std::string& path);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

/// FNV-1a over the serialized config, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace hpm::eval
