#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "apiarius/autograd.hpp"
#include "apiarius/common.hpp"
#include "apiarius/datastore.hpp"

namespace apiarius::gpn {

inline constexpr int kSide = 56;
inline constexpr int kPixels = kSide * kSide;
inline constexpr int kEnvWidth = data::kEnvChannels;
inline constexpr int kTrunkWidth = 64;
inline constexpr int kBaselineFeatures = data::kFeatureCount + kEnvWidth;  // 22

enum class Modality { kNone, kHumidity, kTemperature, kPressure };
const char* modality_name(Modality m);
Modality parse_modality(const std::string& text);

struct ModelConfig {
  int d_z = 2;
  int pretrain_iters = 8000;
  int joint_iters = 2000;
  double lr_main = 3e-5;
  double lr_disease = 1e-4;
  double huber_delta = 1.0;
  double w_frames = 1.0;
  double w_type = 1.0;
  double w_severity = 1.0;
  double kl_weight = 1.0;
  int batch_pretrain = 64;
  int batch_joint = 8;
  int n_classes = 3;
  bool head_frames = true;
  bool head_type = true;
  bool head_severity = true;
  bool semi_supervised = true;
  // Samples per labeled day entering the joint ELBO term.
  int elbo_samples = 8;
  // Samples per labeled day through which the prediction loss reaches the encoder; the
  // rest are encoded without a tape and the gradient is rescaled by 96 / grad_samples.
  int grad_samples = kSamplesPerDay;
  int loss_every = 50;
  int metric_every = 200;
  std::array<bool, kEnvWidth> env_mask = {true, true, true, true, true, true};

  /// Desk-scale schedule sized for a single CPU core.
  static ModelConfig desk();
  void validate() const;
};

/// Zero-masks both channels of a modality; the env width stays 6.
ModelConfig exclude_modality(ModelConfig cfg, Modality m);

struct EncoderParams {
  std::array<ag::Parameter, 4> conv_w, conv_b;
  ag::Parameter fc_w, fc_b;  // 576 -> 2 d_z
};

inline constexpr int kDecoderLayers = 7;
inline constexpr std::array<int, kDecoderLayers> kDecoderStrides = {1, 2, 1, 2, 1, 2, 1};
inline constexpr std::array<int, kDecoderLayers> kDecoderChannels = {64, 32, 32, 16, 16, 8, 1};
inline constexpr std::array<int, 4> kEncoderChannels = {8, 16, 32, 64};

struct DecoderParams {
  ag::Parameter fc_w, fc_b;  // d_z -> 64*7*7
  std::array<ag::Parameter, kDecoderLayers> tconv_w, tconv_b;
};

struct PredictorParams {
  ag::Parameter trunk_w, trunk_b;
  ag::Parameter frames_w, frames_b;
  ag::Parameter type_w, type_b;
  ag::Parameter severity_w, severity_b;
};

struct GpnParams {
  int d_z = 2;
  EncoderParams enc;
  DecoderParams dec;
  PredictorParams pred;

  std::vector<ag::Parameter*> encoder();
  std::vector<ag::Parameter*> decoder();
  std::vector<ag::Parameter*> predictor();
  std::vector<ag::Parameter*> all();
  std::vector<const ag::Parameter*> all() const;
};

GpnParams init_gpn(const ModelConfig& cfg, Rng& rng);
/// Trunk and heads for an input of `in_width` features per day.
PredictorParams init_predictor(int in_width, int n_classes, Rng& rng);

// --- graph builders ---------------------------------------------------------------

struct EncoderVars {
  std::array<ag::Var, 4> conv_w, conv_b;
  ag::Var fc_w, fc_b;
};
struct DecoderVars {
  ag::Var fc_w, fc_b;
  std::array<ag::Var, kDecoderLayers> tconv_w, tconv_b;
};
struct PredictorVars {
  ag::Var trunk_w, trunk_b, frames_w, frames_b, type_w, type_b, severity_w, severity_b;
};

/// Binds parameters to a tape; `trainable` false records them as constants.
EncoderVars bind(ag::Tape& t, EncoderParams& p, bool trainable = true);
DecoderVars bind(ag::Tape& t, DecoderParams& p, bool trainable = true);
PredictorVars bind(ag::Tape& t, PredictorParams& p, bool trainable = true);

struct Posterior {
  ag::Var mu;      // (N, d_z)
  ag::Var logvar;  // (N, d_z), clamped to [-10, 10]
};

/// x: (N, 1, 56, 56).
Posterior encode(const EncoderVars& e, ag::Var x, int d_z);
/// z: (N, d_z) -> (N, 1, 56, 56) in (0, 1).
ag::Var decode(const DecoderVars& d, ag::Var z);

struct HeadVars {
  ag::Var frames;    // (B, 1) after sigmoid
  ag::Var type;      // (B, K) logits
  ag::Var severity;  // (B, 1) after sigmoid
};
/// features: (B, width) day rows.
HeadVars predict(const PredictorVars& p, ag::Var features);

struct ElboVars {
  ag::Var total, recon, kl;
};
/// recon = mean BCE per pixel; kl is reported per pixel (KL / 3136) so both terms share a scale.
ElboVars elbo(ag::Var x, ag::Var recon, ag::Var mu, ag::Var logvar, double kl_weight);

/// Stacks flattened 56x56 spectra (columns) into an (N, 1, 56, 56) tensor.
ag::Tensor images(const Eigen::MatrixXf& spectra);
ag::Tensor images(const Eigen::MatrixXf& spectra, std::span<const int> columns);

// --- value-level operations -------------------------------------------------------

struct Encoding {
  Eigen::VectorXd mu, logvar;
};

Encoding encode(const Eigen::MatrixXd& x56, EncoderParams& p, int d_z);
/// Posterior means of every column of a 3136 x N spectra block, as d_z x N.
Eigen::MatrixXd encode_means(const Eigen::MatrixXf& spectra, EncoderParams& p, int d_z);
Eigen::MatrixXd decode(const Eigen::VectorXd& z, DecoderParams& p);
Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, Rng& rng);

struct ElboTerms {
  double total = 0.0, recon = 0.0, kl = 0.0;
};
ElboTerms elbo_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& recon,
                    const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar,
                    double kl_weight = 1.0);

/// One day of model input: 96 posterior means and 96 normalized env rows.
struct DayTensor {
  Eigen::MatrixXd latents;  // 96 x d_z
  Eigen::MatrixXd env;      // 96 x 6
};

struct DayPrediction {
  double frames = 0.0;  // normalized
  Eigen::VectorXd type_logits;
  double severity = 0.0;
  int type() const;
};

/// Row-major day features: sample s occupies columns s*(d_z+6) .. s*(d_z+6)+d_z+5.
Eigen::VectorXd day_features(const DayTensor& day);
DayPrediction predict_day(const DayTensor& day, PredictorParams& p);

// --- training data ----------------------------------------------------------------

/// A complete hive-day held in memory for training.
struct ModelDay {
  std::string hive_id;
  Day date = 0;
  Eigen::MatrixXf spectra;                       // 3136 x 96
  Eigen::Matrix<double, kEnvWidth, Eigen::Dynamic> env;   // raw readings, 6 x 96
  Eigen::Matrix<float, data::kFeatureCount, Eigen::Dynamic> features;  // 16 x 96
};

/// Builds a ModelDay from assembled samples and a spectra block (3136 x 96).
ModelDay make_model_day(const data::HiveDay& day, Eigen::MatrixXf spectra);

struct Target {
  double frames = 0.0;  // normalized
  int type = 0;
  double severity = 0.0;
};

struct Example {
  std::size_t day = 0;  // index into the ModelDay set
  Target target;
  data::InspectionLabel label;
};

Target make_target(const data::InspectionLabel& label, const data::NormStats& norm);

/// Normalized, masked env block (6 x 96) of a day. Held-out days may fall outside [0, 1].
Eigen::MatrixXd normalized_env(const ModelDay& day, const data::NormStats& norm,
                               const std::array<bool, kEnvWidth>& mask);

// --- training ---------------------------------------------------------------------

struct LossPoint {
  int iteration = 0;
  std::string phase;
  double total = 0.0, recon = 0.0, kl = 0.0, frames = 0.0, type = 0.0, severity = 0.0;
};

/// Called every metric_every iterations (global count over pretrain + joint).
using MetricHook = std::function<void(int iteration)>;

struct TrainContext {
  std::span<const ModelDay> days;
  const data::NormStats* norm = nullptr;
  MetricHook on_metric;
  std::vector<LossPoint> curve;
  int iteration = 0;
};

class Trainer {
 public:
  Trainer(const ModelConfig& cfg, GpnParams& params, uint64_t seed);

  /// VAE pretraining on individual samples drawn from `pool` (day indices).
  void pretrain(TrainContext& ctx, std::span<const std::size_t> pool);
  /// Joint training; `unlabeled` feeds the interleaved ELBO batches when semi-supervised.
  void train_joint(TrainContext& ctx, std::span<const Example> labeled,
                   std::span<const std::size_t> unlabeled);

  struct JointParts {
    double total = 0.0, frames = 0.0, type = 0.0, severity = 0.0;
    ElboTerms elbo;
  };
  /// One joint step on the given batch. With `apply` false no update is made.
  JointParts joint_step(const TrainContext& ctx, std::span<const Example> batch, bool apply = true);
  ElboTerms elbo_step(const TrainContext& ctx, std::span<const std::size_t> pool);

  Rng& rng() { return rng_; }

 private:
  ModelConfig cfg_;
  GpnParams& p_;
  Rng rng_;
  ag::Adam adam_;
};

/// Predictions for labeled days, using posterior means.
std::vector<DayPrediction> predict_examples(GpnParams& p, std::span<const ModelDay> days,
                                            std::span<const Example> examples,
                                            const data::NormStats& norm, const ModelConfig& cfg);

// --- baseline ---------------------------------------------------------------------

/// Min-max ranges of the 16 fft features over training days.
struct FeatureNorm {
  std::array<double, data::kFeatureCount> min{}, max{};
};
FeatureNorm fit_feature_norm(std::span<const ModelDay> days, std::span<const std::size_t> which);

/// 96 x 22 per day flattened row-major: 2112 inputs.
Eigen::VectorXd baseline_features(const ModelDay& day, const FeatureNorm& fnorm,
                                  const data::NormStats& norm,
                                  const std::array<bool, kEnvWidth>& mask);

struct BaselineModel {
  FeatureNorm fnorm;
  PredictorParams params;
};

/// Fully supervised MLP on fft features and env readings; trains joint_iters steps.
BaselineModel baseline_mlp(TrainContext& ctx, std::span<const Example> labeled,
                           const ModelConfig& cfg, uint64_t seed,
                           const std::function<void(BaselineModel&, int)>& on_metric = {});
std::vector<DayPrediction> predict_baseline(BaselineModel& m, std::span<const ModelDay> days,
                                            std::span<const Example> examples,
                                            const data::NormStats& norm, const ModelConfig& cfg);

// --- checkpoints ------------------------------------------------------------------

void save_gpn(const std::filesystem::path& path, GpnParams& p);
GpnParams load_gpn(const std::filesystem::path& path);

}  // namespace apiarius::gpn
