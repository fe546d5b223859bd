#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpm/eval/config.hpp"

namespace hpm::eval {

struct GradcheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t points = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;
  bool pass() const;
  /// One line per entry: name, max relative error, points, PASS/FAIL.
  std::string text() const;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Random coordinates probed per primitive.
  std::size_t primitive_points = 20;
  /// Student coordinates probed per train-step variant; 0 checks every one.
  std::size_t step_points = 0;
  std::uint64_t seed = 11;
};

/// Central finite differences against the tape, error |a - n| / max(1, |n|).
/// Covers every differentiable primitive, the three losses, and the full
/// student objective of one train step on `cfg` in each prediction mode
/// (relative, absolute, none) plus the feature-target measure. Truth fields
/// and masks are frozen at the unperturbed point, as the step treats them.
GradcheckReport run_gradcheck(const RunConfig& cfg, const GradcheckOptions& opts = {});

}  // namespace hpm::eval
