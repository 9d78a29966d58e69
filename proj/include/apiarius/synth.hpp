#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "apiarius/common.hpp"
#include "apiarius/datastore.hpp"
#include "apiarius/dsp.hpp"

namespace apiarius::synth {

enum Disease : int { kHealthy = 0, kDiseaseA = 1, kDiseaseB = 2 };

struct ColonyState {
  double frames_bees = 10.0;
  double frames_brood = 4.5;
  int disease_type = kHealthy;
  double severity = 0.0;  // one of 0, 1/3, 2/3, 1
  double sensor_gain = 1.0;
};

enum class Fidelity { kSpectrogram, kWaveform };

/// Generator parameters. Spectral magnitudes and noise levels are free parameters with no
/// counterpart in field measurements.
struct SynthConfig {
  int n_hives = 8;
  int n_days = 30;
  uint64_t seed = 1;
  Day start_date = 18779;  // 2021-06-01
  Fidelity fidelity = Fidelity::kSpectrogram;
  int label_cadence = 7;

  // colony dynamics
  double initial_frames_lo = 2.0;
  double initial_frames_hi = 18.0;
  double growth_per_day = 1.0 / 7.0;
  double growth_jitter = 0.03;
  double brood_ratio = 0.45;
  double gain_lo = 0.5;
  double gain_hi = 2.0;
  double disease_fraction = 0.5;
  int severity_step_days = 10;

  // acoustics
  double circadian_alpha = 0.5;
  double peak_hour = 0.0;
  std::array<double, 2> band_hz = {220.0, 450.0};
  std::array<double, 2> band_width_hz = {25.0, 40.0};
  std::array<double, 2> band_rel = {1.0, 0.6};
  double disease_a_hz = 645.0;
  double disease_b_hz = 1200.0;
  double disease_width_hz = 30.0;
  double disease_rel = 0.8;
  double severe_damping = 0.4;     // magnitudes scale by (1 - 0.4 s) once s >= 2/3
  double circadian_damping = 1.0;  // alpha scales by (1 - 1.0 s) once s >= 2/3
  double band_amplitude = 0.003;   // rms per frame of bees at unit gain
  double tone_fraction = 0.3;      // share of band power carried by a pure tone
  double noise_ref = 1.7e-5;       // sensor noise amplitude density at noise_ref_hz
  double noise_ref_hz = 100.0;
  double noise_slope = 2.0;        // PSD ~ f^-slope
  double noise_white = 2e-8;       // white sensor noise density
  double disease_boost = 0.5;      // overall magnitude gain while severity is low

  // environment
  double temp_ext_mean = 20.0;
  double temp_ext_swing = 6.0;
  double temp_ext_peak_hour = 14.0;
  double temp_setpoint = 33.0;
  double temp_setpoint_gain = 2.0;  // setpoint rises by up to this much with population
  double temp_setpoint_scale = 8.0;
  double thermo_tau = 2.0;          // frames; coupling to outside decays as exp(-frames/tau)
  double temp_noise = 0.15;
  double hive_temp_offset = 0.3;

  void validate() const;
};

struct Band {
  double center_hz = 0.0;
  double width_hz = 1.0;   // Gaussian standard deviation
  double magnitude = 0.0;  // rms amplitude
};

struct BandSpectrumModel {
  std::vector<Band> bands;
  double tone_fraction = 0.0;
  double noise_ref = 0.0;
  double noise_ref_hz = 100.0;
  double noise_slope = 2.0;
  double noise_white = 0.0;

  /// One-sided power spectral density at f (Hz), excluding tones.
  double psd(double f) const;
  /// Total signal power (variance).
  double power() const;
};

/// Per-hive plan drawn once from the hive's seed stream.
struct HivePlan {
  std::string hive_id;
  ColonyState initial;
  int disease_type = kHealthy;
  int onset_day = -1;  // -1: stays healthy
  double temp_offset = 0.0;
};

std::vector<HivePlan> plan_hives(const SynthConfig& cfg);

/// Advances a colony by one day: growth, disease onset and progression.
ColonyState evolve_colony(const ColonyState& s, const HivePlan& plan, int day,
                          const SynthConfig& cfg, Rng& rng);

BandSpectrumModel band_spectrum(const ColonyState& s, double hour, const SynthConfig& cfg);

/// 56 s of audio realizing the band model plus the sensor noise floor.
dsp::Waveform synth_waveform(const ColonyState& s, double hour, const SynthConfig& cfg, Rng& rng);

/// Expected pooled 61x56 power of the band model with sampling texture, computed in the
/// frequency domain.
Eigen::MatrixXd synth_pooled_power(const ColonyState& s, double hour, const SynthConfig& cfg,
                                   Rng& rng);
/// Baseline features predicted from the band model.
dsp::FftFeatures synth_features(const ColonyState& s, double hour, const SynthConfig& cfg,
                                Rng& rng);
Eigen::MatrixXd synth_spectrogram_direct(const ColonyState& s, double hour,
                                         const SynthConfig& cfg, Rng& rng);

/// Shared weather for one day.
struct Weather {
  double temp_offset = 0.0;
  double humid_offset = 0.0;
  double pressure = 1013.0;
};

data::EnvReadings synth_env(const ColonyState& s, double hour, const Weather& weather,
                            double hive_temp_offset, const SynthConfig& cfg, Rng& rng);

struct TruthRow {
  std::string hive_id;
  Day date = 0;
  double frames_real = 0.0;
  int disease_type = kHealthy;
  double severity = 0.0;
  double sensor_gain = 1.0;
};

struct SynthOutput {
  std::vector<data::SensorSample> samples;
  std::vector<data::InspectionLabel> labels;
  std::vector<TruthRow> truth;
};

data::Severity severity_level(double severity);
data::InspectionLabel make_label(const std::string& hive_id, Day date, const ColonyState& s);

/// Generates all samples in memory. Waveform fidelity needs `audio_root`, under which
/// WAV files are written (paths in the records are relative to it).
SynthOutput generate(const SynthConfig& cfg, const std::filesystem::path& audio_root = {});

/// generate() followed by write_dataset() and truth.csv.
SynthOutput generate_dataset(const SynthConfig& cfg, const std::filesystem::path& root);

void write_truth(const std::filesystem::path& path, const std::vector<TruthRow>& truth);
std::vector<TruthRow> read_truth(const std::filesystem::path& path);

}  // namespace apiarius::synth
