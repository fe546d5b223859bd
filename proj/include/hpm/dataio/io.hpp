#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hpm/dataio/synth.hpp"
#include "hpm/diffmath/tensor.hpp"
#include "hpm/patchkit/patch.hpp"

namespace hpm::data {

namespace fs = std::filesystem;

/// Binary PGM (C = 1) or PPM (C = 3), maxval 255, v -> floor(255 v + 0.5).
void write_ppm(const patch::VisualTensor& v, const fs::path& path);
std::string encode_ppm(const patch::VisualTensor& v);
/// Reads P5/P6 with maxval 255. The returned geometry has frames 1 and patch 1.
patch::VisualTensor read_ppm(const fs::path& path);
patch::VisualTensor decode_ppm(const std::string& bytes);

/// Named float64 tensors plus run metadata.
///
/// Layout (little-endian): magic "HPMCKPT1", u32 version, u64 + bytes config
/// text, u64 epoch, u64 step, u64 + bytes rng state, u64 tensor count, then per
/// tensor: u32 + bytes name, u32 rank, rank x u64 extents, float64 payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, diff::Tensor>> tensors;

  void put(std::string name, diff::Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
  bool has(const std::string& name) const;
  /// Throws CheckpointError(malformed) when missing.
  const diff::Tensor& get(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Parses the whole buffer before returning; nothing is produced on error.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

/// Dataset pack: one checkpoint-format file per sample (tensors "image" with
/// shape [T, H, W, C] and "fg_mask" with shape [N]; the geometry echoed as
/// config text) plus manifest.txt with one "path,label" line per sample.
void write_pack(const fs::path& dir, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_pack(const fs::path& dir, const patch::Geometry& geometry);

std::string geometry_text(const patch::Geometry& g);

}  // namespace hpm::data
