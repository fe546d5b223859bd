#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hpm/eval/run.hpp"

namespace hpm::eval {

enum class SubsetRule { all, top50_pred_loss, bottom50_pred_loss, random50 };

std::string to_string(SubsetRule r);
SubsetRule parse_subset(const std::string& s);

/// Patches feeding the pooled feature of each sample: every patch, the half
/// with the highest (or lowest) teacher-predicted loss, or a random half.
/// Ranking ties break toward the lower patch index.
std::vector<std::vector<std::size_t>> select_subsets(const std::vector<engine::LossField>& fields,
                                                     SubsetRule rule, std::uint64_t seed);

/// Ranks with ties sharing their average rank (1-based).
std::vector<double> average_ranks(const std::vector<double>& v);
/// Pearson correlation of average ranks; 0 when either side is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);
/// Probability that a random positive outscores a random negative, ties
/// counting one half. Throws ContractError unless both classes occur.
double ranking_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive);

/// Frozen mean-pooled student-encoder features under a subset rule; the
/// teacher supplies the predicted loss fields.
Tensor probe_features(engine::ModelPair& models, const engine::PositionTables& pos,
                      const Dataset& data, SubsetRule rule, std::uint64_t seed);

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Softmax regression on standardized features (statistics from the training
/// rows), trained with AdamW on shuffled minibatches. Labels must lie in [0, classes).
ProbeResult linear_probe(const Tensor& train_x, const std::vector<std::size_t>& train_y,
                         const Tensor& test_x, const std::vector<std::size_t>& test_y,
                         std::size_t classes, const ProbeConfig& cfg, std::uint64_t seed);

struct KnnResult {
  std::vector<std::size_t> ks;
  std::vector<double> accuracy;
  double best = 0.0;
  std::size_t best_k = 0;
};

/// Cosine-similarity kNN: majority vote among the k most similar training
/// rows, vote ties broken by summed similarity, then by the smaller label.
KnnResult knn_eval(const Tensor& train_x, const std::vector<std::size_t>& train_y,
                   const Tensor& test_x, const std::vector<std::size_t>& test_y,
                   const std::vector<std::size_t>& ks);

/// Pretrained checkpoint -> probe accuracy on a split.
ProbeResult probe_model(LoadedModel& m, const DataSplit& data, SubsetRule rule,
                        const ProbeConfig& cfg, std::uint64_t seed);

/// One row of an evaluation report file.
struct ReportRow {
  std::string metric;
  double value = 0.0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Appends rows to a CSV with header metric,value,k,seed,config_hash (written
/// when the file is new). Existing content is never rewritten.
void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

/// Predicted-loss heatmap and mask renderings for one image.
struct VizOutput {
  patch::VisualTensor input;
  patch::VisualTensor heatmap;  // one channel, min-max normalized
  patch::VisualTensor masked;   // input with masked patches blacked out
  std::vector<double> field;
};

/// Teacher-predicted loss field on `image`, upsampled to pixels; a constant
/// field renders as 0.5. The mask uses the config policy at alpha_T.
VizOutput visualize(LoadedModel& m, const patch::VisualTensor& image, std::uint64_t seed);

/// Min-max normalization to [0, 1]; constant inputs map to 0.5.
std::vector<double> minmax_normalize(const std::vector<double>& v);

/// Paths written by `hpm viz`: <stem>_input.ppm, <stem>_loss.pgm, <stem>_mask.ppm.
std::vector<std::filesystem::path> write_viz(const VizOutput& v, const std::filesystem::path& out);

struct Schedule {
  double alpha0 = 0.0;
  double alphaT = 0.5;
};

/// "0:0.5,0.5:0" -> schedules. Throws ConfigError.
std::vector<Schedule> parse_schedules(const std::string& s);
std::vector<engine::MaskPolicy> parse_policies(const std::string& s);
/// easy-to-hard when alpha grows, hard-to-easy when it shrinks, constant otherwise.
std::string manner_of(const Schedule& s);

struct AblationRow {
  engine::MaskPolicy policy = engine::MaskPolicy::random;
  Schedule schedule;
  std::string manner;
  std::uint64_t seed = 0;
  double train_rec = 0.0;    // mean training L_rec over the final epoch
  double heldout_rec = 0.0;  // held-out L_rec after training
  double probe_accuracy = 0.0;
};

/// Cross product of policies and schedules from one base config and seed. The
/// random policy ignores the schedule, so it contributes a single row.
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<engine::MaskPolicy>& policies,
                                      const std::vector<Schedule>& schedules, bool write_files);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace hpm::eval
