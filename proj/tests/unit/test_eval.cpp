#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hpm/dataio/io.hpp"
#include "hpm/error.hpp"
#include "hpm/eval/config.hpp"
#include "hpm/eval/evaluate.hpp"
#include "hpm/eval/gradcheck.hpp"
#include "hpm/eval/run.hpp"

using namespace hpm;
using namespace hpm::eval;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hpm_test_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(HPM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config round trip") {
  for (const RunConfig& c : {reference_config(), toy_config()}) {
    const std::string text = serialize_config(c);
    const RunConfig back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize_config(back) == text);
    CHECK(config_hash(back) == config_hash(c));
  }
  RunConfig odd = toy_config();
  odd.engine.mask.gamma = 0.1 + 0.2;
  odd.engine.schedule.base_lr = 1.0 / 3.0;
  odd.engine.objective.pred_mode = engine::PredMode::absolute_mse;
  odd.engine.mask.policy = engine::MaskPolicy::argmin;
  odd.data.synth.noise_amplitude = 1e-17;
  CHECK(parse_config(serialize_config(odd)) == odd);
  CHECK(config_hash(odd) != config_hash(toy_config()));
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("config errors name the line") {
  CHECK(config_error("[run]\nseed = 3\n[bogus]\n").find("line 3") != std::string::npos);
  CHECK(config_error("[run]\n\nnope = 1\n").find("line 3") != std::string::npos);
  CHECK(config_error("seed = 1\n").find("line 1") != std::string::npos);
  CHECK(config_error("# c\n[mask]\ngamma = abc\n").find("line 3") != std::string::npos);
  CHECK(config_error("[mask]\npolicy = diagonal\n").find("line 2") != std::string::npos);
  CHECK(config_error("[run]\nseed 4\n").find("line 2") != std::string::npos);
  CHECK_THROWS_AS(parse_config("[mask]\ngamma = 0.999\n[geometry]\nheight = 8\nwidth = 8\npatch = 4\n"),
                  ConfigError);
  CHECK(parse_config("[run]\nseed = 42 # trailing\n").seed == 42);
  CHECK_THROWS_AS(load_config("/nonexistent/x.cfg"), IoError);
}

TEST_CASE("seed override") {
  unsetenv("HPM_SEED");
  CHECK(seed_override(7) == 7);
  setenv("HPM_SEED", "123", 1);
  CHECK(seed_override(7) == 123);
  setenv("HPM_SEED", "x1", 1);
  CHECK_THROWS_AS(seed_override(7), ConfigError);
  unsetenv("HPM_SEED");
}

TEST_CASE("rank statistics") {
  CHECK(average_ranks({10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(ranking_auc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == 1.0);
  CHECK(ranking_auc({0.5, 0.5}, {1, 0}) == 0.5);
  CHECK(ranking_auc({0.1, 0.3, 0.2}, {1, 0, 0}) == 0.0);
}

TEST_CASE("subset selection") {
  const std::vector<engine::LossField> f{{{0.5, 0.1, 0.9, 0.3}, engine::FieldRole::teacher_pred}};
  CHECK(select_subsets(f, SubsetRule::top50_pred_loss, 1)[0] == std::vector<std::size_t>{0, 2});
  CHECK(select_subsets(f, SubsetRule::bottom50_pred_loss, 1)[0] == std::vector<std::size_t>{1, 3});
  CHECK(select_subsets(f, SubsetRule::all, 1)[0] == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(select_subsets(f, SubsetRule::random50, 1)[0].size() == 2);
  CHECK(select_subsets(f, SubsetRule::random50, 1) == select_subsets(f, SubsetRule::random50, 1));
  CHECK(to_string(parse_subset("random50")) == "random50");
  CHECK_THROWS_AS(parse_subset("middle"), ConfigError);
}

TEST_CASE("knn evaluation") {
  const Tensor train = Tensor::matrix(3, 2, {1, 0, 0, 1, -1, 0});
  const Tensor test = Tensor::matrix(1, 2, {0, 1});
  const KnnResult r = knn_eval(train, {0, 1, 2}, test, {1}, {1});
  CHECK(r.accuracy[0] == 1.0);

  Rng rng(4);
  Tensor a({200, 4}), b({100, 4});
  std::vector<std::size_t> ya, yb;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t y = i % 2;
    ya.push_back(y);
    for (std::size_t c = 0; c < 4; ++c) a.at(i, c) = (y ? 3.0 : -3.0) * (c == 0) + 1.0 + 0.5 * rng.normal();
  }
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t y = i % 2;
    yb.push_back(y);
    for (std::size_t c = 0; c < 4; ++c) b.at(i, c) = (y ? 3.0 : -3.0) * (c == 0) + 1.0 + 0.5 * rng.normal();
  }
  const KnnResult g = knn_eval(a, ya, b, yb, {1, 5, 10});
  for (double acc : g.accuracy) CHECK(acc >= 0.95);
  CHECK(g.best == *std::max_element(g.accuracy.begin(), g.accuracy.end()));

  CHECK_THROWS_AS(knn_eval(a, ya, b, yb, {0}), ContractError);
  CHECK_THROWS_AS(knn_eval(a, ya, b, yb, {201}), ContractError);
  CHECK_THROWS_AS(knn_eval(a, {0, 1}, b, yb, {1}), ContractError);
}

TEST_CASE("linear probe separates a separable toy") {
  Rng rng(5);
  Tensor x({80, 3}), t({40, 3});
  std::vector<std::size_t> yx, yt;
  auto fill = [&](Tensor& m, std::vector<std::size_t>& y) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      y.push_back(i % 2);
      for (std::size_t c = 0; c < 3; ++c) m.at(i, c) = rng.normal();
      m.at(i, 1) += y.back() ? 4.0 : -4.0;
    }
  };
  fill(x, yx);
  fill(t, yt);
  const ProbeResult r = linear_probe(x, yx, t, yt, 2, ProbeConfig{}, 1);
  CHECK(r.train_accuracy == 1.0);
  CHECK(r.test_accuracy == 1.0);
  CHECK_THROWS_AS(linear_probe(x, {0, 1}, t, yt, 2, ProbeConfig{}, 1), ContractError);
}

TEST_CASE("visualization helpers") {
  CHECK(minmax_normalize({2, 2, 2}) == std::vector<double>{0.5, 0.5, 0.5});
  CHECK(minmax_normalize({1, 3, 2}) == std::vector<double>{0, 1, 0.5});
}

TEST_CASE("ablation parsing") {
  const auto s = parse_schedules("0:0.5,0.5:0,0.3:0.3");
  REQUIRE(s.size() == 3);
  CHECK(manner_of(s[0]) == "easy-to-hard");
  CHECK(manner_of(s[1]) == "hard-to-easy");
  CHECK(manner_of(s[2]) == "constant");
  CHECK_THROWS_AS(parse_schedules("0-0.5"), ConfigError);
  CHECK_THROWS_AS(parse_schedules("0:1.5"), ConfigError);
  CHECK(parse_policies("random,argmin").size() == 2);
}

TEST_CASE("gradient check suite") {
  const RunConfig toy = toy_config();
  GradcheckOptions opts;
  opts.step_points = 40;
  const GradcheckReport ok = run_gradcheck(toy, opts);
  CHECK(ok.pass());
  CHECK(ok.text().find("gradcheck: PASS") != std::string::npos);

  diff::inject_backward_fault("softmax_rows");
  const GradcheckReport bad = run_gradcheck(toy, opts);
  diff::inject_backward_fault("");
  CHECK_FALSE(bad.pass());
  bool named = false;
  for (const auto& e : bad.entries)
    if (!e.pass && e.name.find("softmax_rows") != std::string::npos) named = true;
  CHECK(named);
}

TEST_CASE("pretraining writes metrics, checkpoints and reloads") {
  RunConfig c = toy_config();
  c.engine.mask.total_epochs = 1;
  c.steps_per_epoch = 2;
  c.output_dir = scratch("pretrain").string();
  c.resolve();
  const DataSplit data = load_split(c);
  CHECK(data.train.size() == 4);
  CHECK(data.heldout.size() == 2);
  const PretrainResult r = pretrain(c, data);
  CHECK(r.steps.size() == 2);
  const fs::path out = c.output_dir;
  CHECK(line_count(out / "metrics.csv") == 3);
  std::ifstream in(out / "metrics.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,step,lr,L_rec,L_pred,alpha_t,hard_count,random_count");
  CHECK(fs::exists(out / "final.ckpt"));

  LoadedModel m = load_model(out / "final.ckpt");
  CHECK(m.config == c);
  const auto a = m.models.student.parameters(), b = r.trainer->models().student.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);

  const VizOutput v = visualize(m, data.heldout.records[0].visual, 1);
  CHECK(v.heatmap.geometry.height == c.engine.geometry.height);
  CHECK(v.heatmap.geometry.width == c.engine.geometry.width);
  CHECK(v.field.size() == c.engine.geometry.num_patches());
  const auto files = write_viz(v, out / "viz");
  CHECK(files.size() == 3);
  for (const auto& f : files) CHECK(fs::exists(f));

  const fs::path report = out / "report.csv";
  append_report(report, {{"probe_acc", 0.5, 0, 7, config_hash(c)}});
  append_report(report, {{"knn_acc", 0.25, 5, 7, config_hash(c)}});
  CHECK(line_count(report) == 3);
}

TEST_CASE("random-only ablation gives one row") {
  RunConfig c = toy_config();
  c.engine.mask.total_epochs = 1;
  c.steps_per_epoch = 1;
  c.probe.epochs = 2;
  c.output_dir = scratch("ablate").string();
  const auto rows = run_ablation(c, {engine::MaskPolicy::random}, parse_schedules("0:0.5,0.5:0"), false);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].manner == "random");
  CHECK(ablation_csv(rows).rfind("policy,alpha0,alphaT,manner,seed,train_L_rec,heldout_L_rec,probe_acc\n", 0) == 0);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  RunConfig c = toy_config();
  c.engine.mask.total_epochs = 1;
  c.steps_per_epoch = 2;
  c.output_dir = (dir / "run").string();
  std::ofstream(dir / "toy.cfg") << serialize_config(c);
  std::ofstream(dir / "bad.cfg") << "[run]\nwhat = 1\n";

  CHECK(cli("pretrain --config " + (dir / "toy.cfg").string()) == 0);
  CHECK(line_count(dir / "run" / "metrics.csv") == 3);
  CHECK(cli("pretrain --config " + (dir / "bad.cfg").string()) == 2);
  CHECK(cli("pretrain --config " + (dir / "missing.cfg").string()) == 3);
  CHECK(cli("pretrain") == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("viz --ckpt " + (dir / "missing.ckpt").string() + " --image x.ppm --out y") == 3);
  CHECK(cli("gradcheck --config " + (dir / "toy.cfg").string() + " --points 10") == 0);
  CHECK(cli("synth --config " + (dir / "toy.cfg").string() + " --out " + (dir / "data").string()) == 0);
  const std::string ckpt = (dir / "run" / "final.ckpt").string();
  CHECK(cli("probe --ckpt " + ckpt + " --data " + (dir / "data").string() + " --subset top50_pred_loss") == 0);
  CHECK(cli("probe --ckpt " + ckpt + " --data " + (dir / "data").string() + " --subset nope") == 2);
  CHECK(cli("knn --ckpt " + ckpt + " --data " + (dir / "data").string() + " --k 1,2") == 0);
  CHECK(cli("knn --ckpt " + ckpt + " --data " + (dir / "data").string() + " --k 0") == 2);
  CHECK(line_count(dir / "run" / "report.csv") >= 3);
}
