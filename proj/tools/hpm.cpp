// hpm: pretraining, evaluation and self-test commands.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "hpm/dataio/io.hpp"
#include "hpm/diffmath/tape.hpp"
#include "hpm/error.hpp"
#include "hpm/eval/evaluate.hpp"
#include "hpm/eval/gradcheck.hpp"
#include "hpm/eval/run.hpp"

namespace fs = std::filesystem;
using namespace hpm;

namespace {

eval::RunConfig load_run_config(const std::string& path) {
  eval::RunConfig cfg = eval::load_config(path);
  cfg.seed = eval::seed_override(cfg.seed);
  return cfg;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0' || item[0] == '-' || v == 0)
      throw ConfigError("k list entries must be positive integers, got '" + item + "'");
    ks.push_back(v);
  }
  if (ks.empty()) throw ConfigError("empty k list");
  return ks;
}

fs::path default_report(const std::string& ckpt) {
  return fs::path(ckpt).parent_path() / "report.csv";
}

void print_rows(const std::vector<eval::ReportRow>& rows) {
  for (const auto& r : rows)
    std::printf("%s = %.6f%s\n", r.metric.c_str(), r.value,
                r.k ? (" (k=" + std::to_string(r.k) + ")").c_str() : "");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hard-patch-mining masked visual modeling"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_path, subset = "all", ks = "1,5,10", image_path,
                                                  out_path, policies = "random,argmax,argmin",
                                                  schedules = "0:0.5,0.5:0", report_path, fault;
  bool resume = false;
  std::size_t points = 0;

  auto* pretrain = app.add_subcommand("pretrain", "Run HPM pretraining from a config file");
  pretrain->add_option("--config", config_path, "Config file")->required();
  pretrain->add_flag("--resume", resume, "Continue from <output_dir>/latest.ckpt");

  auto* probe = app.add_subcommand("probe", "Linear probe on frozen encoder features");
  probe->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  probe->add_option("--data", data_path, "Dataset directory with train/ and test/ packs")->required();
  probe->add_option("--subset", subset, "all | top50_pred_loss | bottom50_pred_loss | random50");
  probe->add_option("--report", report_path, "Report CSV (default: report.csv beside the checkpoint)");

  auto* knn = app.add_subcommand("knn", "Cosine kNN on frozen encoder features");
  knn->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  knn->add_option("--data", data_path, "Dataset directory with train/ and test/ packs")->required();
  knn->add_option("--k", ks, "Comma-separated k values");
  knn->add_option("--report", report_path, "Report CSV (default: report.csv beside the checkpoint)");

  auto* viz = app.add_subcommand("viz", "Predicted-loss heatmap and mask for one image");
  viz->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  viz->add_option("--image", image_path, "PPM/PGM image")->required();
  viz->add_option("--out", out_path, "Output stem; writes <stem>_input.ppm, _loss.pgm, _mask.ppm")->required();

  auto* ablate = app.add_subcommand("ablate", "Mask policy x schedule sweep");
  ablate->add_option("--config", config_path, "Base config file")->required();
  ablate->add_option("--policies", policies, "Comma-separated: random, argmax, argmin");
  ablate->add_option("--schedules", schedules, "Comma-separated alpha0:alphaT pairs");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--config", config_path, "Config file (toy size)")->required();
  gradcheck->add_option("--points", points, "Student coordinates per train-step check (0 = all)");
  gradcheck->add_option("--inject-fault", fault, "Negate the backward rule of this op")->group("");

  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset of a config as packs");
  synth->add_option("--config", config_path, "Config file")->required();
  synth->add_option("--out", out_path, "Output directory")->required();

  std::string preset = "reference";
  auto* show = app.add_subcommand("config", "Print a preset config (reference or toy)");
  show->add_option("--preset", preset, "reference | toy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pretrain) {
      const eval::RunConfig cfg = load_run_config(config_path);
      const eval::DataSplit data = eval::load_split(cfg);
      eval::PretrainOptions opts;
      opts.resume = resume;
      opts.on_step = [](const engine::StepMetrics& m) {
        if (m.step % 16 == 0)
          std::printf("epoch %zu step %zu lr %.3e L_rec %.5f L_pred %.5f alpha %.3f\n", m.epoch,
                      m.step, m.lr, m.rec_loss, m.pred_loss, m.alpha);
      };
      const eval::PretrainResult res = eval::pretrain(cfg, data, opts);
      if (!res.heldout.empty())
        std::printf("held-out L_rec: %.6f -> %.6f\n", res.heldout.front(), res.heldout.back());
      std::printf("wrote %s\n", (fs::path(cfg.output_dir) / "final.ckpt").string().c_str());
    } else if (*probe || *knn) {
      eval::LoadedModel m = eval::load_model(ckpt_path);
      const std::uint64_t seed = eval::seed_override(m.config.seed);
      const eval::DataSplit data = eval::load_split(data_path, m.config.engine.geometry);
      const std::string hash = eval::config_hash(m.config);
      std::vector<eval::ReportRow> rows;
      if (*probe) {
        const eval::SubsetRule rule = eval::parse_subset(subset);
        const eval::ProbeResult r = eval::probe_model(m, data, rule, m.config.probe, seed);
        rows.push_back({"probe_acc/" + eval::to_string(rule), r.test_accuracy, 0, seed, hash});
        rows.push_back({"probe_train_acc/" + eval::to_string(rule), r.train_accuracy, 0, seed, hash});
      } else {
        const auto klist = parse_ks(ks);
        const diff::Tensor tr = eval::probe_features(m.models, m.positions, data.train, eval::SubsetRule::all, seed);
        const diff::Tensor te = eval::probe_features(m.models, m.positions, data.heldout, eval::SubsetRule::all, seed);
        const eval::KnnResult r = eval::knn_eval(tr, data.train.labels(), te, data.heldout.labels(), klist);
        for (std::size_t j = 0; j < r.ks.size(); ++j)
          rows.push_back({"knn_acc", r.accuracy[j], r.ks[j], seed, hash});
        rows.push_back({"knn_best", r.best, r.best_k, seed, hash});
      }
      print_rows(rows);
      eval::append_report(report_path.empty() ? default_report(ckpt_path) : fs::path(report_path), rows);
    } else if (*viz) {
      eval::LoadedModel m = eval::load_model(ckpt_path);
      const patch::VisualTensor image = data::read_ppm(image_path);
      const eval::VizOutput v = eval::visualize(m, image, eval::seed_override(m.config.seed));
      for (const auto& p : eval::write_viz(v, out_path)) std::printf("wrote %s\n", p.string().c_str());
    } else if (*ablate) {
      const eval::RunConfig cfg = load_run_config(config_path);
      const auto rows = eval::run_ablation(cfg, eval::parse_policies(policies),
                                           eval::parse_schedules(schedules), true);
      const std::string csv = eval::ablation_csv(rows);
      fs::create_directories(cfg.output_dir);
      data::write_file(fs::path(cfg.output_dir) / "ablation.csv", csv);
      std::fputs(csv.c_str(), stdout);
    } else if (*gradcheck) {
      const eval::RunConfig cfg = load_run_config(config_path);
      if (!fault.empty()) diff::inject_backward_fault(fault);
      eval::GradcheckOptions opts;
      opts.step_points = points;
      const eval::GradcheckReport rep = eval::run_gradcheck(cfg, opts);
      std::fputs(rep.text().c_str(), stdout);
      return rep.pass() ? 0 : 1;
    } else if (*show) {
      if (preset != "reference" && preset != "toy")
        throw ConfigError("unknown preset '" + preset + "' (expected reference or toy)");
      const eval::RunConfig cfg = preset == "toy" ? eval::toy_config() : eval::reference_config();
      std::fputs(eval::serialize_config(cfg).c_str(), stdout);
    } else if (*synth) {
      const eval::RunConfig cfg = load_run_config(config_path);
      eval::write_synthetic_split(cfg, out_path);
      std::printf("wrote %zu train and %zu test samples under %s\n", cfg.data.train_size,
                  cfg.data.heldout_size, out_path.c_str());
    }
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  }
  return 0;
}
