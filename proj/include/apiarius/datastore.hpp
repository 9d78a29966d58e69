#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apiarius/common.hpp"
#include "apiarius/dsp.hpp"

namespace apiarius::data {

// --- environment channels -----------------------------------------------------

inline constexpr int kEnvChannels = 6;
enum EnvChannel : int { kTempIn = 0, kTempExt, kHumidIn, kHumidExt, kPressIn, kPressExt };
inline constexpr std::array<const char*, kEnvChannels> kEnvNames = {
    "temp_in", "temp_ext", "humid_in", "humid_ext", "press_in", "press_ext"};
using EnvReadings = std::array<double, kEnvChannels>;

// --- samples and days -----------------------------------------------------------

enum class AudioKind : uint8_t { kNone = 0, kWav = 1, kRawF32 = 2, kInline = 3 };

/// Baseline features: 15 band magnitudes followed by mean absolute amplitude.
inline constexpr int kFeatureCount = dsp::kFftBands + 1;
using FeatureVector = std::array<float, kFeatureCount>;

FeatureVector to_feature_vector(const dsp::FftFeatures& f);

/// Reference to a sample's audio: an external file or an inline pooled 61x56 power map.
struct Audio {
  AudioKind kind = AudioKind::kNone;
  std::string path;        // relative to the dataset root for kWav / kRawF32
  Eigen::MatrixXf pooled;  // kInline: 61 x 56 linear power
  bool has_features = false;
  FeatureVector features{};

  bool operator==(const Audio& o) const;
};

struct SensorSample {
  std::string hive_id;
  std::string sensor_id;
  int64_t timestamp = 0;  // UTC seconds
  Audio audio;
  EnvReadings env{};

  bool operator==(const SensorSample&) const = default;
};

inline constexpr std::size_t kIdBytes = 16;
inline constexpr std::size_t kPathBytes = 128;

/// Rounds a timestamp to the nearest 15-minute slot.
int64_t snap_to_grid(int64_t timestamp);

struct HiveDay {
  std::string hive_id;
  Day date = 0;
  std::vector<SensorSample> samples;  // exactly 96, strictly increasing timestamps
};

struct SkipEntry {
  std::string hive_id;
  Day date = 0;
  int n_samples = 0;
  std::string reason;
};

struct AssembleResult {
  std::vector<HiveDay> days;
  std::vector<SkipEntry> skipped;
};

/// Groups samples by (hive, date) after grid snapping; keeps only complete 96-sample days.
/// Output is ordered by hive id, then date.
AssembleResult assemble_days(std::vector<SensorSample> samples);

// --- inspection labels ------------------------------------------------------------

enum class Severity : int { kNone = 0, kLow = 1, kModerate = 2, kSevere = 3 };

const char* severity_name(Severity s);
Severity parse_severity(const std::string& text);

struct InspectionLabel {
  std::string hive_id;
  Day date = 0;
  int frames_bees = 0;
  int frames_brood = 0;
  int disease_type = 0;  // 0 = none
  Severity severity = Severity::kNone;

  bool operator==(const InspectionLabel&) const = default;
};

/// Checks label ranges and the severity/type consistency rule; throws on violation.
void check_label(const InspectionLabel& label);

inline constexpr int kMaxGapDays = 2;

struct LabeledDay {
  std::size_t day = 0;  // index into the HiveDay sequence given to match_inspections
  InspectionLabel label;
  int gap_days = 0;
};

struct DiscardedLabel {
  InspectionLabel label;
  int nearest_gap = -1;  // -1 when the hive has no free complete day
  std::string reason;
};

struct MatchResult {
  std::vector<LabeledDay> matched;
  std::vector<DiscardedLabel> discarded;
};

/// Pairs each label with the nearest unused complete day of the same hive, ties toward
/// the earlier day; pairs further than two days apart are discarded.
MatchResult match_inspections(std::span<const InspectionLabel> labels,
                              std::span<const HiveDay> days);

// --- normalization ----------------------------------------------------------------

struct NormStats {
  EnvReadings min{};
  EnvReadings max{};
  double frames_divisor = 25.0;
  std::array<double, 4> severity_map = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};

  double normalize(int channel, double value) const {
    return (value - min[channel]) / (max[channel] - min[channel]);
  }
  double denormalize(int channel, double value) const {
    return min[channel] + value * (max[channel] - min[channel]);
  }
  double frames(double raw) const { return raw / frames_divisor; }
  double frames_raw(double normalized) const { return normalized * frames_divisor; }
  double severity(Severity s) const { return severity_map[static_cast<int>(s)]; }
};

/// Min-max statistics over the training days' environment readings.
NormStats fit_normalization(std::span<const HiveDay> train_days,
                            std::span<const InspectionLabel> train_labels);

// --- validation suite -------------------------------------------------------------

struct ValidationConfig {
  double temp_lo = -20.0, temp_hi = 60.0;
  double humid_lo = 0.0, humid_hi = 100.0;
  double press_lo = 800.0, press_hi = 1100.0;
  double temp_step = 10.0;
  double humid_step = 30.0;
  double press_step = 10.0;
};

struct ValidationFlag {
  std::string hive_id;
  int64_t timestamp = 0;
  std::string channel;
  std::string kind;  // "range" or "smoothness"
  double value = 0.0;
};

struct ValidationReport {
  std::size_t n_samples = 0;
  std::vector<ValidationFlag> flags;
  bool ok() const { return flags.empty(); }
};

ValidationReport validate_ranges(std::span<const SensorSample> samples,
                                 const ValidationConfig& cfg = {});

inline constexpr int kCorrFeatures = 8;
inline constexpr std::array<const char*, kCorrFeatures> kCorrNames = {
    "temp_in", "temp_ext", "humid_in", "humid_ext", "press_in", "press_ext", "mean_amp",
    "hour_sin"};

/// Per-sample feature rows used by the correlation and regression checks.
Eigen::MatrixXd feature_table(std::span<const HiveDay> days);

struct CorrelationMatrix {
  Eigen::Matrix<double, kCorrFeatures, kCorrFeatures> r;
  Eigen::Matrix<bool, kCorrFeatures, kCorrFeatures> defined;
};

CorrelationMatrix correlation_matrix(std::span<const HiveDay> days);
/// Pearson correlation of the columns of a feature table.
CorrelationMatrix correlation_of(const Eigen::MatrixXd& table);

struct OlsResult {
  std::string feature;
  std::optional<double> r2;  // empty when undefined
  std::string status;        // "ok", "constant target" or "rank-deficient"
};

std::vector<OlsResult> ols_cross_predict(std::span<const HiveDay> days);
/// In-sample R^2 of each column regressed on the others (with intercept).
std::vector<OlsResult> ols_cross_predict(const Eigen::MatrixXd& table,
                                         std::span<const std::string> names);

struct CircadianResult {
  double hour = 0.0;
  int slot = 0;
  bool structured = true;
  std::array<double, kSamplesPerDay> profile{};
};

CircadianResult circadian_peak_hour(std::span<const HiveDay> days);

/// Silent, clipped (> 5% at full scale) or truncated waveform.
bool detect_failed_audio(const dsp::Waveform& w);

// --- on-disk dataset ----------------------------------------------------------------

struct ManifestRow {
  std::string hive_id;
  Day date = 0;
  int n_samples = 0;
  bool complete = false;
};

struct Dataset {
  std::vector<SensorSample> samples;
  std::vector<InspectionLabel> labels;
};

/// Writes root/hives/<hive>/<date>/<HHMM>.rec, root/labels.csv and root/manifest.csv.
std::vector<ManifestRow> write_dataset(std::span<const SensorSample> samples,
                                       std::span<const InspectionLabel> labels,
                                       const std::filesystem::path& root);
Dataset read_dataset(const std::filesystem::path& root);

void write_record(const std::filesystem::path& path, const SensorSample& s);
SensorSample read_record(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, std::span<const InspectionLabel> labels);
std::vector<InspectionLabel> read_labels(const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

/// Loads the waveform behind a file-backed sample.
dsp::Waveform load_waveform(const Audio& audio, const std::filesystem::path& root);

// --- spectrogram cache ------------------------------------------------------------

inline constexpr int kPixels = dsp::kCropRows * dsp::kTimeBins;

/// Model input of one sample flattened row-major (frequency rows, then time).
Eigen::VectorXf flatten_spectrogram(const Eigen::MatrixXd& s56);

/// Spectrogram56 of a sample: inline power goes through crop_normalize, files through
/// the full DSP chain.
Eigen::MatrixXd sample_spectrogram(const SensorSample& s, const std::filesystem::path& root);

std::filesystem::path cache_path(const std::filesystem::path& cache_root,
                                 const std::string& hive_id, Day date);
/// One file per day: 96 blobs of 56x56 float32 (8-byte shape header each).
void write_day_cache(const std::filesystem::path& path, const Eigen::MatrixXf& spectra);
Eigen::MatrixXf read_day_cache(const std::filesystem::path& path);

}  // namespace apiarius::data
