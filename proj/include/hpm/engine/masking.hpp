#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hpm/rng.hpp"

namespace hpm::engine {

enum class MaskPolicy { random, argmax, argmin };

std::string to_string(MaskPolicy p);
MaskPolicy parse_policy(const std::string& s);

/// Mask budget and the easy-to-hard schedule. alpha grows linearly from
/// alpha0 at epoch 0 to alphaT at total_epochs and is held fixed within an epoch.
struct MaskPlan {
  double gamma = 0.75;
  double alpha0 = 0.0;
  double alphaT = 0.5;
  std::size_t total_epochs = 20;
  MaskPolicy policy = MaskPolicy::argmax;
  bool per_frame = false;

  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

double alpha_at(const MaskPlan& plan, std::size_t epoch);

/// K = round(gamma * n); throws ConfigError unless 1 <= K <= n - 1.
std::size_t masked_count(double gamma, std::size_t n);
/// H = round(alpha * k).
std::size_t hard_count(double alpha, std::size_t k);

/// Binary mask over N patches: visible[i] == 1 keeps patch i, 0 masks it.
/// hard_ids were selected from the loss field, random_ids uniformly.
struct PatchMask {
  std::vector<std::uint8_t> visible;
  std::vector<std::size_t> hard_ids;
  std::vector<std::size_t> random_ids;

  std::size_t size() const { return visible.size(); }
  std::vector<std::size_t> keep_ids() const;
  std::vector<std::size_t> masked_ids() const;
  std::size_t num_masked() const;

  /// Fully-visible mask (teacher path).
  static PatchMask all_visible(std::size_t n);
  static PatchMask from_visible(std::vector<std::uint8_t> bits);
};

/// Mask selection at a given alpha. Within each selection group (the whole
/// field, or one temporal slice of `slice_size` patches when plan.per_frame):
///   1. draw a random permutation of the group (tie-breaking order);
///   2. stable-sort it by the field, descending for argmax, ascending for
///      argmin, untouched for random;
///   3. mask the first H = round(alpha * K) as hard (H = 0 for random);
///   4. shuffle the remaining patches and mask the first K - H.
/// The random stream consumed does not depend on field values.
PatchMask generate_mask_at(std::span<const double> field, const MaskPlan& plan, double alpha,
                           Rng& rng, std::size_t slice_size = 0);

PatchMask generate_mask(std::span<const double> field, const MaskPlan& plan, std::size_t epoch,
                        Rng& rng, std::size_t slice_size = 0);

}  // namespace hpm::engine
