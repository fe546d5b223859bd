#include "hpm/engine/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hpm/error.hpp"

namespace hpm::engine {

std::string to_string(MaskPolicy p) {
  switch (p) {
    case MaskPolicy::random: return "random";
    case MaskPolicy::argmax: return "argmax";
    case MaskPolicy::argmin: return "argmin";
  }
  return "?";
}

MaskPolicy parse_policy(const std::string& s) {
  if (s == "random") return MaskPolicy::random;
  if (s == "argmax") return MaskPolicy::argmax;
  if (s == "argmin") return MaskPolicy::argmin;
  throw ConfigError("unknown mask policy '" + s + "' (expected random, argmax or argmin)");
}

double alpha_at(const MaskPlan& plan, std::size_t epoch) {
  if (epoch > plan.total_epochs)
    throw ContractError("alpha_at: epoch " + std::to_string(epoch) + " beyond total " +
                        std::to_string(plan.total_epochs));
  if (plan.total_epochs == 0) return plan.alpha0;
  if (epoch == plan.total_epochs) return plan.alphaT;
  return plan.alpha0 + static_cast<double>(epoch) / static_cast<double>(plan.total_epochs) *
                           (plan.alphaT - plan.alpha0);
}

std::size_t masked_count(double gamma, std::size_t n) {
  const double k = std::round(gamma * static_cast<double>(n));
  if (!(gamma > 0.0 && gamma < 1.0) || k < 1.0 || k > static_cast<double>(n) - 1.0)
    throw ConfigError("mask ratio " + std::to_string(gamma) + " gives K=" +
                      std::to_string(static_cast<long long>(k)) + " outside [1, " +
                      std::to_string(n > 0 ? n - 1 : 0) + "] for N=" + std::to_string(n));
  return static_cast<std::size_t>(k);
}

std::size_t hard_count(double alpha, std::size_t k) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("alpha " + std::to_string(alpha) + " outside [0, 1]");
  return static_cast<std::size_t>(std::round(alpha * static_cast<double>(k)));
}

std::vector<std::size_t> PatchMask::keep_ids() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < visible.size(); ++i)
    if (visible[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> PatchMask::masked_ids() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < visible.size(); ++i)
    if (!visible[i]) out.push_back(i);
  return out;
}

std::size_t PatchMask::num_masked() const {
  return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), 0));
}

PatchMask PatchMask::all_visible(std::size_t n) { return from_visible(std::vector<std::uint8_t>(n, 1)); }

PatchMask PatchMask::from_visible(std::vector<std::uint8_t> bits) {
  PatchMask m;
  m.visible = std::move(bits);
  m.random_ids = m.masked_ids();
  return m;
}

namespace {

void select_group(std::span<const double> field, std::size_t offset, std::size_t n, std::size_t k,
                  std::size_t h, MaskPolicy policy, Rng& rng, PatchMask& out) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), offset);
  rng.shuffle(std::span<std::size_t>(order));
  if (policy == MaskPolicy::argmax)
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return field[a] > field[b]; });
  else if (policy == MaskPolicy::argmin)
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
  if (policy == MaskPolicy::random) h = 0;
  for (std::size_t i = 0; i < h; ++i) {
    out.visible[order[i]] = 0;
    out.hard_ids.push_back(order[i]);
  }
  std::span<std::size_t> rest(order.data() + h, n - h);
  rng.shuffle(rest);
  for (std::size_t i = 0; i < k - h; ++i) {
    out.visible[rest[i]] = 0;
    out.random_ids.push_back(rest[i]);
  }
}

}  // namespace

PatchMask generate_mask_at(std::span<const double> field, const MaskPlan& plan, double alpha,
                           Rng& rng, std::size_t slice_size) {
  const std::size_t n = field.size();
  for (double v : field)
    if (!std::isfinite(v)) throw ContractError("generate_mask: non-finite loss field");
  std::size_t group = n;
  if (plan.per_frame && slice_size != 0) group = slice_size;
  if (group == 0 || n % group != 0)
    throw ConfigError("generate_mask: field of " + std::to_string(n) +
                      " patches does not split into slices of " + std::to_string(group));
  const std::size_t k = masked_count(plan.gamma, group);
  const std::size_t h = hard_count(alpha, k);
  PatchMask out;
  out.visible.assign(n, 1);
  for (std::size_t off = 0; off < n; off += group)
    select_group(field, off, group, k, h, plan.policy, rng, out);
  return out;
}

PatchMask generate_mask(std::span<const double> field, const MaskPlan& plan, std::size_t epoch,
                        Rng& rng, std::size_t slice_size) {
  return generate_mask_at(field, plan, alpha_at(plan, epoch), rng, slice_size);
}

}  // namespace hpm::engine
