#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "apiarius/datastore.hpp"
#include "apiarius/gpn.hpp"

namespace apiarius::eval {

struct FoldPlan {
  int k = 10;
  uint64_t seed = 0;
  std::map<std::string, int> fold_of;

  std::vector<std::string> hives(int fold) const;
  std::vector<int> sizes() const;
};

/// Seeded shuffle of the hive ids, then round-robin assignment to k folds.
FoldPlan partition_folds(std::vector<std::string> hive_ids, int k, uint64_t seed);

/// Throws if any hive is in both sets.
void assert_disjoint(std::span<const std::string> train, std::span<const std::string> val);

enum class ModelKind { kGpnUnlabeled, kGpnLabeled, kBaselineMlp };
const char* model_name(ModelKind m);
ModelKind parse_model(const std::string& text);

/// Days in memory plus the inspection labels matched to them.
struct CvData {
  std::vector<gpn::ModelDay> days;
  std::vector<data::LabeledDay> labeled;  // .day indexes `days`
};

inline constexpr std::array<const char*, 3> kTasks = {"frames", "type", "severity"};

struct MetricRecord {
  std::string run;
  std::string model;
  int fold = 0;
  int iteration = 0;
  std::string task;
  double value = 0.0;  // Huber for frames and severity, accuracy for type
};

struct PredictionRow {
  std::string run;
  std::string model;
  int fold = 0;
  std::string hive_id;
  Day date = 0;
  std::string task;
  double pred = 0.0;
  double label = 0.0;
};

struct FoldReport {
  int fold = 0;
  std::vector<std::string> train_hives, val_hives;
  int n_train_labeled = 0;
  int n_val_labeled = 0;
  bool empty = false;  // no labeled validation day; nothing trained
  std::vector<gpn::LossPoint> curve;
};

struct CvResult {
  std::vector<MetricRecord> metrics;
  std::vector<PredictionRow> predictions;
  std::vector<FoldReport> folds;
};

/// VAE pretraining results reused across runs whose configs differ only in the env mask
/// or the joint phase: the VAE never sees environment data.
class PretrainCache {
 public:
  struct Entry {
    gpn::GpnParams params;  // after pretraining; predictor at its initial values
    std::vector<gpn::LossPoint> curve;
    std::vector<std::pair<int, gpn::EncoderParams>> snapshots;  // at metric iterations
  };
  std::shared_ptr<const Entry> find(const std::string& key) const;
  void put(const std::string& key, std::shared_ptr<const Entry> e);

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
};

struct CvOptions {
  ModelKind model = ModelKind::kGpnUnlabeled;
  gpn::ModelConfig cfg;
  std::string run_id = "run0";
  uint64_t seed = 1;
  int threads = 1;
  PretrainCache* cache = nullptr;
  // Semi-supervised runs also draw ELBO batches from the unlabeled days of validation hives.
  bool unlabeled_val_hives = false;
  std::filesystem::path checkpoint_dir;  // empty: no per-fold checkpoints
};

CvResult run_cv(const CvData& data, const FoldPlan& plan, const CvOptions& opt);

// --- metrics ------------------------------------------------------------------------

struct CdfResult {
  std::vector<double> abs_diff;  // sorted |pred - label| in frames
  std::vector<double> pct_diff;  // sorted (pred - label) / max(label, 1)
  double within_band = 0.0;      // fraction with |pct| <= 0.2
};

inline constexpr double kBand = 0.20;

CdfResult cdf_frames(std::span<const double> pred, std::span<const double> label);
/// Empirical CDF value at each sorted entry: (i + 1) / n.
std::vector<double> cdf_levels(std::size_t n);

struct RunMetric {
  std::string model;
  std::string run;
  std::string task;  // frames, type, severity, frames_within20
  double value = 0.0;
};

/// Final metrics of one CV run, computed over its pooled validation predictions.
std::vector<RunMetric> final_metrics(const CvResult& r, double huber_delta,
                                     double frames_divisor = 25.0);

struct Aggregate {
  std::string model;
  std::string task;
  double mean = 0.0;
  double std = 0.0;  // population
  int n = 0;
};

/// Mean and population std per (model, task); independent of run order.
std::vector<Aggregate> aggregate_runs(std::span<const RunMetric> runs);

struct AblationRow {
  std::string excluded;  // none, humidity, temperature, pressure
  std::string task;
  double value = 0.0;
  double delta = 0.0;  // value minus the full model's value
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::map<std::string, CvResult> runs;  // by excluded modality
};

/// GPN-unlabeled CV under each single-modality exclusion plus the full model.
AblationResult run_ablation_suite(const CvData& data, const FoldPlan& plan, CvOptions opt);

// --- reports ------------------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> m);
void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> p);
void write_cdf_csv(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, CdfResult>>& cdfs);
void write_aggregate_csv(const std::filesystem::path& path, std::span<const Aggregate> a);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);
void write_curve_csv(const std::filesystem::path& path, const CvResult& r);

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

/// Predicted vs labeled frames.
std::string scatter_svg(std::span<const PredictionRow> p, const std::string& title);
std::string cdf_svg(const std::vector<std::pair<std::string, CdfResult>>& cdfs);
/// Fold-averaged validation metric per iteration for one task.
std::string curves_svg(std::span<const MetricRecord> m, const std::string& task);

}  // namespace apiarius::eval
