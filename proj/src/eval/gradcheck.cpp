#include "hpm/eval/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "hpm/diffmath/ops.hpp"
#include "hpm/engine/trainer.hpp"
#include "hpm/error.hpp"

namespace hpm::eval {

using diff::Parameter;
using diff::Tape;
using diff::Var;

bool GradcheckReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

std::string GradcheckReport::text() const {
  std::string out;
  for (const auto& e : entries) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-36s max_rel_err=%.3e points=%zu %s\n", e.name.c_str(),
                  e.max_rel_err, e.points, e.pass ? "PASS" : "FAIL");
    out += buf;
  }
  out += pass() ? "gradcheck: PASS\n" : "gradcheck: FAIL\n";
  return out;
}

namespace {

Tensor random_tensor(const diff::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

// f builds a scalar from the given leaves on a fresh tape.
using ScalarFn = std::function<Var(Tape&, std::vector<Var>&)>;

double evaluate(const ScalarFn& f, std::vector<Parameter>& leaves) {
  Tape tape(false);
  std::vector<Var> vars;
  for (auto& p : leaves) vars.push_back(tape.param(p));
  return f(tape, vars).value()[0];
}

GradcheckEntry check_points(const std::string& name, const ScalarFn& f,
                            std::vector<Parameter>& leaves, std::vector<std::pair<std::size_t, std::size_t>> coords,
                            const GradcheckOptions& opts) {
  for (auto& p : leaves) p.zero_grad();
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : leaves) vars.push_back(tape.param(p));
    tape.backward(f(tape, vars));
  }
  GradcheckEntry e;
  e.name = name;
  for (auto [li, k] : coords) {
    double& x = leaves[li].value[k];
    const double orig = x;
    x = orig + opts.step;
    const double up = evaluate(f, leaves);
    x = orig - opts.step;
    const double down = evaluate(f, leaves);
    x = orig;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double analytic = leaves[li].grad[k];
    e.max_rel_err = std::max(e.max_rel_err, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) e.max_rel_err = INFINITY;
    ++e.points;
  }
  e.pass = e.max_rel_err < opts.tolerance;
  return e;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_coords(const std::vector<Parameter>& leaves,
                                                               std::size_t count, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t li = 0; li < leaves.size(); ++li)
    if (leaves[li].requires_grad)
      for (std::size_t k = 0; k < leaves[li].value.size(); ++k) all.emplace_back(li, k);
  if (count == 0 || count >= all.size()) return all;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(all[rng.below(all.size())]);
  return out;
}

// Weighted sum against a fixed random tensor, so every output entry matters.
Var project(Var y, const Tensor& w) {
  Tape& t = y.tape();
  return diff::sum(diff::mul(y, t.constant(w)));
}

engine::PatchMask random_mask(std::size_t n, std::size_t masked, Rng& rng) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  rng.shuffle(std::span<std::size_t>(ids));
  std::vector<std::uint8_t> bits(n, 1);
  for (std::size_t i = 0; i < masked; ++i) bits[ids[i]] = 0;
  return engine::PatchMask::from_visible(bits);
}

void primitive_suite(GradcheckReport& rep, const GradcheckOptions& opts, Rng& rng) {
  struct Case {
    std::string name;
    std::vector<diff::Shape> shapes;
    std::function<Var(std::vector<Var>&)> body;
    diff::Shape out;
  };
  const std::vector<std::size_t> gather_ids{2, 0, 2, 3, 1};
  const std::vector<Case> cases{
      {"matmul", {{3, 4}, {4, 5}}, [](auto& v) { return diff::matmul(v[0], v[1]); }, {3, 5}},
      {"add", {{3, 4}, {3, 4}}, [](auto& v) { return diff::add(v[0], v[1]); }, {3, 4}},
      {"sub", {{3, 4}, {3, 4}}, [](auto& v) { return diff::sub(v[0], v[1]); }, {3, 4}},
      {"mul", {{3, 4}, {3, 4}}, [](auto& v) { return diff::mul(v[0], v[1]); }, {3, 4}},
      {"scale", {{3, 4}}, [](auto& v) { return diff::scale(v[0], -1.7); }, {3, 4}},
      {"add_row", {{3, 4}, {4}}, [](auto& v) { return diff::add_row(v[0], v[1]); }, {3, 4}},
      {"sum", {{3, 4}}, [](auto& v) { return diff::sum(v[0]); }, {1}},
      {"mean", {{3, 4}}, [](auto& v) { return diff::mean(v[0]); }, {1}},
      {"row_mean", {{3, 4}}, [](auto& v) { return diff::row_mean(v[0]); }, {3, 1}},
      {"layer_norm", {{3, 6}, {6}, {6}},
       [](auto& v) { return diff::layer_norm(v[0], v[1], v[2], 1e-6); }, {3, 6}},
      {"gelu", {{3, 4}}, [](auto& v) { return diff::gelu(v[0]); }, {3, 4}},
      {"logistic", {{3, 4}}, [](auto& v) { return diff::logistic(v[0]); }, {3, 4}},
      {"log_logistic", {{3, 4}}, [](auto& v) { return diff::log_logistic(v[0]); }, {3, 4}},
      {"softplus", {{3, 4}}, [](auto& v) { return diff::softplus(v[0]); }, {3, 4}},
      {"l2_normalize_rows", {{3, 4}}, [](auto& v) { return diff::l2_normalize_rows(v[0], 1e-12); }, {3, 4}},
      {"softmax_rows", {{3, 4}}, [](auto& v) { return diff::softmax_rows(v[0]); }, {3, 4}},
      {"gather_rows", {{4, 3}}, [&gather_ids](auto& v) { return diff::gather_rows(v[0], gather_ids); }, {5, 3}},
      {"concat_rows", {{2, 3}, {3, 3}}, [](auto& v) { return diff::concat_rows(v[0], v[1]); }, {5, 3}},
      {"attention", {{6, 4}, {6, 4}, {6, 4}},
       [](auto& v) { return diff::attention(v[0], v[1], v[2], 2, 3); }, {6, 4}},
  };
  for (const Case& c : cases) {
    std::vector<Parameter> leaves;
    for (const auto& s : c.shapes) leaves.emplace_back(random_tensor(s, rng, -2.0, 2.0));
    const Tensor w = random_tensor(c.out, rng);
    ScalarFn f = [&c, &w](Tape&, std::vector<Var>& v) { return project(c.body(v), w); };
    rep.entries.push_back(check_points(c.name, f, leaves, sample_coords(leaves, opts.primitive_points, rng), opts));
  }

  // Losses over a batch of two samples, N = 6, three masked each.
  const std::size_t n = 6;
  std::vector<engine::PatchMask> masks{random_mask(n, 3, rng), random_mask(n, 3, rng)};
  const Tensor target = random_tensor({2 * n, 4}, rng);
  for (engine::Measure m : {engine::Measure::pixel_mse, engine::Measure::ema_feature_mse}) {
    std::vector<Parameter> leaves;
    leaves.emplace_back(random_tensor({2 * n, 4}, rng));
    ScalarFn f = [&](Tape&, std::vector<Var>& v) {
      return engine::reconstruction_loss(v[0], target, masks, m).loss;
    };
    rep.entries.push_back(check_points("reconstruction_loss/" + engine::to_string(m), f, leaves,
                                       sample_coords(leaves, opts.primitive_points, rng), opts));
  }
  std::vector<engine::LossField> truth(2);
  for (auto& t : truth)
    for (std::size_t i = 0; i < n; ++i) t.values.push_back(std::floor(rng.uniform() * 4.0));
  for (bool relative : {false, true}) {
    std::vector<Parameter> leaves;
    leaves.emplace_back(random_tensor({2 * n, 1}, rng, -3.0, 3.0));
    ScalarFn f = [&](Tape&, std::vector<Var>& v) {
      return relative ? engine::pred_loss_relative(v[0], truth, masks)
                      : engine::pred_loss_absolute(v[0], truth, masks);
    };
    rep.entries.push_back(check_points(relative ? "pred_loss_relative" : "pred_loss_absolute", f,
                                       leaves, sample_coords(leaves, opts.primitive_points, rng), opts));
  }
}

void step_suite(GradcheckReport& rep, const RunConfig& base, const GradcheckOptions& opts, Rng& rng) {
  struct Variant {
    std::string name;
    engine::PredMode mode;
    bool features;
  };
  const std::vector<Variant> variants{{"train_step/relative_bce", engine::PredMode::relative_bce, false},
                                      {"train_step/absolute_mse", engine::PredMode::absolute_mse, false},
                                      {"train_step/none", engine::PredMode::none, false},
                                      {"train_step/ema_features", engine::PredMode::relative_bce, true}};
  for (const Variant& v : variants) {
    engine::EngineConfig cfg = base.engine;
    cfg.objective.pred_mode = v.mode;
    if (v.features) {
      cfg.target.mode = patch::TargetMode::ema_features;
      cfg.objective.measure = engine::Measure::ema_feature_mse;
    } else if (cfg.target.mode == patch::TargetMode::ema_features) {
      cfg.target.mode = patch::TargetMode::normalized_pixels;
      cfg.objective.measure = engine::Measure::pixel_mse;
    }
    cfg.resolve();
    const patch::Geometry& g = cfg.geometry;
    const std::size_t n = g.num_patches();
    const std::size_t batch = 2;

    std::vector<patch::PatchSequence> seqs;
    for (std::size_t b = 0; b < batch; ++b) {
      patch::VisualTensor img(g);
      for (double& x : img.data) x = rng.uniform();
      seqs.push_back(patch::patchify(img));
    }
    std::vector<const patch::PatchSequence*> views;
    for (const auto& s : seqs) views.push_back(&s);

    model::ModelParams student = model::init_params(cfg.model, rng.next());
    // Perturb so the check does not sit at the symmetric initialization.
    student.for_each([&](const std::string&, Parameter& p) {
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] += 0.2 * (rng.uniform() - 0.5);
    });
    model::ModelParams teacher = student;
    const engine::PositionTables pos = engine::make_positions(cfg);

    engine::FullView tv = engine::full_view(teacher, pos, views, v.features);
    std::vector<engine::PatchMask> masks;
    const std::size_t k = engine::masked_count(cfg.mask.gamma, n);
    for (std::size_t b = 0; b < batch; ++b) masks.push_back(random_mask(n, k, rng));
    const Tensor targets = engine::batch_targets(cfg, views, v.features ? &tv.features : nullptr);
    std::vector<const Tensor*> tokens;
    for (const auto& s : seqs) tokens.push_back(&s.tokens);

    std::vector<engine::LossField> frozen;
    {
      Tape tape(false);
      frozen = engine::compute_objective(tape, student, cfg, pos, tokens, targets, masks).truth;
    }

    std::vector<Parameter*> params = student.parameters();
    std::vector<Parameter> leaves;
    for (auto* p : params) leaves.push_back(*p);
    // Leaves are copies; copy them back into the model before each forward.
    ScalarFn f = [&](Tape& tape, std::vector<Var>&) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = leaves[i].value;
      return engine::compute_objective(tape, student, cfg, pos, tokens, targets, masks, &frozen).total;
    };
    auto coords = sample_coords(leaves, opts.step_points, rng);

    student.zero_grad();
    {
      Tape tape;
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = leaves[i].value;
      tape.backward(engine::compute_objective(tape, student, cfg, pos, tokens, targets, masks, &frozen).total);
    }
    GradcheckEntry e;
    e.name = v.name;
    for (auto [li, kk] : coords) {
      double& x = leaves[li].value[kk];
      const double orig = x;
      x = orig + opts.step;
      const double up = evaluate(f, leaves);
      x = orig - opts.step;
      const double down = evaluate(f, leaves);
      x = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = params[li]->grad[kk];
      double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(err)) err = INFINITY;
      e.max_rel_err = std::max(e.max_rel_err, err);
      ++e.points;
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = leaves[i].value;
    e.pass = e.max_rel_err < opts.tolerance;
    rep.entries.push_back(e);
  }
}

}  // namespace

GradcheckReport run_gradcheck(const RunConfig& cfg, const GradcheckOptions& opts) {
  GradcheckReport rep;
  rep.tolerance = opts.tolerance;
  Rng rng(opts.seed);
  primitive_suite(rep, opts, rng);
  step_suite(rep, cfg, opts, rng);
  return rep;
}

}  // namespace hpm::eval
