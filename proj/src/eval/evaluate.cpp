#include "hpm/eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hpm/diffmath/optim.hpp"
#include "hpm/error.hpp"

namespace hpm::eval {

namespace {

constexpr std::uint64_t kSubsetSalt = 0x73756273ULL;
constexpr std::uint64_t kProbeSalt = 0x70726f62ULL;
constexpr std::uint64_t kVizSalt = 0x76697a00ULL;

std::string fmt(double v) { return format_double(v); }

void check_labels(const Tensor& x, const std::vector<std::size_t>& y, const char* what) {
  if (x.rows() != y.size())
    throw ContractError(std::string(what) + ": " + std::to_string(x.rows()) + " feature rows but " +
                        std::to_string(y.size()) + " labels");
}

}  // namespace

std::string to_string(SubsetRule r) {
  switch (r) {
    case SubsetRule::all: return "all";
    case SubsetRule::top50_pred_loss: return "top50_pred_loss";
    case SubsetRule::bottom50_pred_loss: return "bottom50_pred_loss";
    case SubsetRule::random50: return "random50";
  }
  return "?";
}

SubsetRule parse_subset(const std::string& s) {
  for (SubsetRule r : {SubsetRule::all, SubsetRule::top50_pred_loss, SubsetRule::bottom50_pred_loss,
                       SubsetRule::random50})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown subset rule '" + s +
                    "' (expected all, top50_pred_loss, bottom50_pred_loss or random50)");
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman: lengths differ");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double ranking_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  if (scores.size() != positive.size()) throw DimensionError("ranking_auc: lengths differ");
  const auto ranks = average_ranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (positive[i]) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw ContractError("ranking_auc: needs both positives and negatives");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::vector<std::vector<std::size_t>> select_subsets(const std::vector<engine::LossField>& fields,
                                                     SubsetRule rule, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> out;
  Rng rng = Rng::derive(seed, kSubsetSalt);
  for (const auto& f : fields) {
    const std::size_t n = f.values.size();
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    const std::size_t half = std::max<std::size_t>(1, n / 2);
    switch (rule) {
      case SubsetRule::all:
        break;
      case SubsetRule::top50_pred_loss:
        std::stable_sort(ids.begin(), ids.end(),
                         [&](std::size_t a, std::size_t b) { return f.values[a] > f.values[b]; });
        ids.resize(half);
        break;
      case SubsetRule::bottom50_pred_loss:
        std::stable_sort(ids.begin(), ids.end(),
                         [&](std::size_t a, std::size_t b) { return f.values[a] < f.values[b]; });
        ids.resize(half);
        break;
      case SubsetRule::random50:
        rng.shuffle(std::span<std::size_t>(ids));
        ids.resize(half);
        break;
    }
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  return out;
}

Tensor probe_features(engine::ModelPair& models, const engine::PositionTables& pos,
                      const Dataset& data, SubsetRule rule, std::uint64_t seed) {
  const auto views = data.views();
  if (rule == SubsetRule::all) return engine::pooled_features(models.student, pos, views);
  std::vector<engine::LossField> fields;
  for (std::size_t start = 0; start < views.size(); start += 64) {
    const std::size_t end = std::min(views.size(), start + 64);
    auto part = engine::full_view(models.teacher, pos,
                                  std::span(views).subspan(start, end - start), false);
    for (auto& f : part.fields) fields.push_back(std::move(f));
  }
  const auto subsets = select_subsets(fields, rule, seed);
  return engine::pooled_features(models.student, pos, views, &subsets);
}

ProbeResult linear_probe(const Tensor& train_x, const std::vector<std::size_t>& train_y,
                         const Tensor& test_x, const std::vector<std::size_t>& test_y,
                         std::size_t classes, const ProbeConfig& cfg, std::uint64_t seed) {
  check_labels(train_x, train_y, "probe train set");
  check_labels(test_x, test_y, "probe test set");
  if (train_y.empty()) throw ContractError("probe: empty training set");
  if (classes < 2) throw ContractError("probe: needs at least two classes");
  for (std::size_t y : train_y)
    if (y >= classes) throw ContractError("probe: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  for (std::size_t y : test_y)
    if (y >= classes) throw ContractError("probe: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  const std::size_t d = train_x.cols();
  if (!test_x.empty() && test_x.cols() != d)
    throw DimensionError("probe: train features have " + std::to_string(d) + " columns, test " +
                         std::to_string(test_x.cols()));

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  const std::size_t n = train_x.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mu[c] += train_x.at(i, c) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double z = train_x.at(i, c) - mu[c];
      sd[c] += z * z / static_cast<double>(n);
    }
  for (double& s : sd) s = std::sqrt(std::max(s, 1e-12));
  auto standardize = [&](const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < d; ++c) out.at(i, c) = (x.at(i, c) - mu[c]) / sd[c];
    return out;
  };
  const Tensor xs = standardize(train_x);

  diff::Parameter w(Tensor({d, classes}));
  diff::Parameter b(Tensor({classes}));
  std::vector<diff::Parameter*> params{&w, &b};
  diff::OptimizerState opt;
  opt.config.weight_decay = cfg.weight_decay;
  const std::vector<bool> decay{true, false};

  auto logits_of = [&](std::span<const double> row, std::vector<double>& out) {
    for (std::size_t k = 0; k < classes; ++k) {
      double z = b.value[k];
      for (std::size_t c = 0; c < d; ++c) z += row[c] * w.value.at(c, k);
      out[k] = z;
    }
  };

  Rng rng = Rng::derive(seed, kProbeSalt);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> z(classes);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      w.zero_grad();
      b.zero_grad();
      for (std::size_t t = start; t < end; ++t) {
        const std::size_t i = order[t];
        logits_of(xs.row(i), z);
        const double mx = *std::max_element(z.begin(), z.end());
        double total = 0.0;
        for (double& v : z) total += (v = std::exp(v - mx));
        for (std::size_t k = 0; k < classes; ++k) {
          const double g = (z[k] / total - (k == train_y[i] ? 1.0 : 0.0)) * inv;
          b.grad[k] += g;
          for (std::size_t c = 0; c < d; ++c) w.grad.at(c, k) += g * xs.at(i, c);
        }
      }
      diff::adamw_step(opt, params, cfg.lr, decay);
    }
  }

  auto accuracy = [&](const Tensor& x, const std::vector<std::size_t>& y) {
    if (y.empty()) return 0.0;
    const Tensor s = standardize(x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      logits_of(s.row(i), z);
      const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      hit += best == y[i];
    }
    return static_cast<double>(hit) / static_cast<double>(y.size());
  };
  return {accuracy(train_x, train_y), accuracy(test_x, test_y)};
}

KnnResult knn_eval(const Tensor& train_x, const std::vector<std::size_t>& train_y,
                   const Tensor& test_x, const std::vector<std::size_t>& test_y,
                   const std::vector<std::size_t>& ks) {
  check_labels(train_x, train_y, "knn train set");
  check_labels(test_x, test_y, "knn test set");
  if (train_y.empty()) throw ContractError("knn: empty training set");
  if (ks.empty()) throw ContractError("knn: empty k list");
  for (std::size_t k : ks)
    if (k == 0 || k > train_y.size())
      throw ContractError("knn: k = " + std::to_string(k) + " must lie in [1, " +
                          std::to_string(train_y.size()) + "]");
  if (train_x.cols() != test_x.cols())
    throw DimensionError("knn: train features have " + std::to_string(train_x.cols()) +
                         " columns, test " + std::to_string(test_x.cols()));
  const std::size_t d = train_x.cols();
  auto unit = [d](const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += x.at(i, c) * x.at(i, c);
      const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
      for (std::size_t c = 0; c < d; ++c) out.at(i, c) *= inv;
    }
    return out;
  };
  const Tensor a = unit(train_x), q = unit(test_x);
  const std::size_t classes = *std::max_element(train_y.begin(), train_y.end()) + 1;

  KnnResult res;
  res.ks = ks;
  res.accuracy.assign(ks.size(), 0.0);
  std::vector<std::pair<double, std::size_t>> sims(train_y.size());
  for (std::size_t t = 0; t < test_y.size(); ++t) {
    for (std::size_t i = 0; i < train_y.size(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q.at(t, c) * a.at(i, c);
      sims[i] = {s, i};
    }
    std::stable_sort(sims.begin(), sims.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t j = 0; j < ks.size(); ++j) {
      std::vector<std::size_t> votes(classes, 0);
      std::vector<double> weight(classes, 0.0);
      for (std::size_t r = 0; r < ks[j]; ++r) {
        votes[train_y[sims[r].second]] += 1;
        weight[train_y[sims[r].second]] += sims[r].first;
      }
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (votes[c] > votes[best] || (votes[c] == votes[best] && weight[c] > weight[best])) best = c;
      res.accuracy[j] += best == test_y[t] ? 1.0 : 0.0;
    }
  }
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (!test_y.empty()) res.accuracy[j] /= static_cast<double>(test_y.size());
    if (j == 0 || res.accuracy[j] > res.best) {
      res.best = res.accuracy[j];
      res.best_k = ks[j];
    }
  }
  return res;
}

ProbeResult probe_model(LoadedModel& m, const DataSplit& data, SubsetRule rule,
                        const ProbeConfig& cfg, std::uint64_t seed) {
  const Tensor tr = probe_features(m.models, m.positions, data.train, rule, seed);
  const Tensor te = probe_features(m.models, m.positions, data.heldout, rule, seed + 1);
  std::size_t classes = m.config.data.synth.classes;
  for (std::size_t y : data.train.labels()) classes = std::max(classes, y + 1);
  return linear_probe(tr, data.train.labels(), te, data.heldout.labels(), classes, cfg, seed);
}

void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  const bool fresh = !std::filesystem::exists(path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open report " + path.string());
  if (fresh) out << "metric,value,k,seed,config_hash\n";
  for (const auto& r : rows)
    out << r.metric << "," << fmt(r.value) << "," << r.k << "," << r.seed << "," << r.config_hash
        << "\n";
  if (!out) throw IoError("write failed for report " + path.string());
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  std::vector<double> out(v.size(), 0.5);
  if (!(b > a)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - a) / (b - a);
  return out;
}

VizOutput visualize(LoadedModel& m, const patch::VisualTensor& image, std::uint64_t seed) {
  const patch::Geometry& g = m.config.engine.geometry;
  const patch::Geometry& ig = image.geometry;
  if (ig.frames != g.frames || ig.height != g.height || ig.width != g.width ||
      ig.channels != g.channels)
    throw GeometryError("image is " + std::to_string(ig.width) + "x" + std::to_string(ig.height) +
                        "x" + std::to_string(ig.channels) + " but the checkpoint expects " +
                        std::to_string(g.width) + "x" + std::to_string(g.height) + "x" +
                        std::to_string(g.channels));
  VizOutput out;
  out.input = image;
  out.input.geometry = g;
  const patch::PatchSequence seq = patch::patchify(out.input);
  const patch::PatchSequence* view = &seq;
  out.field = engine::full_view(m.models.teacher, m.positions, std::span(&view, 1), false)
                  .fields[0]
                  .values;
  const std::vector<double> norm = minmax_normalize(out.field);

  patch::Geometry hg = g;
  hg.channels = 1;
  out.heatmap = patch::VisualTensor(hg);
  out.masked = out.input;
  Rng rng = Rng::derive(seed, kVizSalt);
  const engine::PatchMask mask = engine::generate_mask_at(out.field, m.config.engine.mask,
                                                          m.config.engine.mask.alphaT, rng,
                                                          g.patches_per_slice());
  const std::size_t gh = g.grid_h(), gw = g.grid_w();
  for (std::size_t f = 0; f < g.frames; ++f)
    for (std::size_t r = 0; r < g.height; ++r)
      for (std::size_t c = 0; c < g.width; ++c) {
        const std::size_t id = (f / g.temporal_patch) * gh * gw + (r / g.patch) * gw + c / g.patch;
        out.heatmap.at(f, r, c, 0) = norm[id];
        if (!mask.visible[id])
          for (std::size_t ch = 0; ch < g.channels; ++ch) out.masked.at(f, r, c, ch) = 0.0;
      }
  return out;
}

std::vector<std::filesystem::path> write_viz(const VizOutput& v, const std::filesystem::path& out) {
  std::filesystem::path stem = out;
  stem.replace_extension();
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const std::string base = stem.string();
  const std::vector<std::filesystem::path> paths{base + "_input.ppm", base + "_loss.pgm",
                                                 base + "_mask.ppm"};
  auto first_frame = [](const patch::VisualTensor& t) {
    if (t.geometry.frames == 1) return t;
    patch::Geometry g = t.geometry;
    g.frames = 1;
    g.temporal_patch = 1;
    patch::VisualTensor one(g);
    std::copy_n(t.data.begin(), one.data.size(), one.data.begin());
    return one;
  };
  data::write_ppm(first_frame(v.input), paths[0]);
  data::write_ppm(first_frame(v.heatmap), paths[1]);
  data::write_ppm(first_frame(v.masked), paths[2]);
  return paths;
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty entry in list '" + s + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

double parse_alpha(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !(v >= 0.0 && v <= 1.0))
    throw ConfigError("schedule endpoint '" + s + "' must be a number in [0, 1]");
  return v;
}

}  // namespace

std::vector<Schedule> parse_schedules(const std::string& s) {
  std::vector<Schedule> out;
  for (const std::string& item : split_list(s)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("schedule '" + item + "' must be written alpha0:alphaT");
    out.push_back({parse_alpha(item.substr(0, colon)), parse_alpha(item.substr(colon + 1))});
  }
  return out;
}

std::vector<engine::MaskPolicy> parse_policies(const std::string& s) {
  std::vector<engine::MaskPolicy> out;
  for (const std::string& item : split_list(s)) out.push_back(engine::parse_policy(item));
  return out;
}

std::string manner_of(const Schedule& s) {
  if (s.alpha0 < s.alphaT) return "easy-to-hard";
  if (s.alpha0 > s.alphaT) return "hard-to-easy";
  return "constant";
}

std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<engine::MaskPolicy>& policies,
                                      const std::vector<Schedule>& schedules, bool write_files) {
  if (schedules.empty()) throw ConfigError("ablation needs at least one schedule");
  const DataSplit data = load_split(base);
  std::vector<AblationRow> rows;
  bool random_done = false;
  for (engine::MaskPolicy policy : policies) {
    for (const Schedule& sched : schedules) {
      const bool random = policy == engine::MaskPolicy::random;
      if (random && random_done) continue;
      RunConfig cfg = base;
      cfg.engine.mask.policy = policy;
      if (!random) {
        cfg.engine.mask.alpha0 = sched.alpha0;
        cfg.engine.mask.alphaT = sched.alphaT;
      }
      char cell[96];
      std::snprintf(cell, sizeof cell, "%s_%g_%g", engine::to_string(policy).c_str(),
                    cfg.engine.mask.alpha0, cfg.engine.mask.alphaT);
      cfg.output_dir = (std::filesystem::path(base.output_dir) / cell).string();
      cfg.resolve();

      PretrainOptions opts;
      opts.write_files = write_files;
      PretrainResult res = pretrain(cfg, data, opts);

      AblationRow row;
      row.policy = policy;
      row.schedule = {cfg.engine.mask.alpha0, cfg.engine.mask.alphaT};
      row.manner = random ? "random" : manner_of(sched);
      row.seed = cfg.seed;
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& m : res.steps)
        if (m.epoch + 1 == res.epochs_done) {
          sum += m.rec_loss;
          ++count;
        }
      row.train_rec = count ? sum / static_cast<double>(count) : 0.0;
      row.heldout_rec = res.heldout.empty() ? 0.0 : res.heldout.back();
      LoadedModel lm{cfg, res.trainer->models(), res.trainer->positions()};
      row.probe_accuracy = probe_model(lm, data, SubsetRule::all, cfg.probe, cfg.seed).test_accuracy;
      rows.push_back(row);
      random_done = random_done || random;
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "policy,alpha0,alphaT,manner,seed,train_L_rec,heldout_L_rec,probe_acc\n";
  for (const auto& r : rows)
    out += engine::to_string(r.policy) + "," + fmt(r.schedule.alpha0) + "," +
           fmt(r.schedule.alphaT) + "," + r.manner + "," + std::to_string(r.seed) + "," +
           fmt(r.train_rec) + "," + fmt(r.heldout_rec) + "," + fmt(r.probe_accuracy) + "\n";
  return out;
}

}  // namespace hpm::eval
